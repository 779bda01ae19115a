#include "locinv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "locinv/errors.hpp"

namespace locinv {

IoUCurve iou_curve(const TokenMap& map, const Tensor& mask) {
    if (!map.grid.same_shape(mask))
        throw DataError("iou_curve: map shape " + map.grid.shape_str() + " != mask shape " +
                        mask.shape_str());
    IoUCurve curve;
    curve.noun_position = map.token_position;
    curve.thresholds.reserve(101);
    curve.iou.reserve(101);
    int64_t n = mask.numel();
    for (int k = 0; k <= 100; ++k) {
        scalar_t theta = static_cast<scalar_t>(k) / 100.0;
        int64_t inter = 0, uni = 0;
        for (int64_t i = 0; i < n; ++i) {
            bool pred = map.grid[i] >= theta;
            bool gt = mask[i] != 0.0;
            inter += pred && gt;
            uni += pred || gt;
        }
        curve.thresholds.push_back(theta);
        curve.iou.push_back(uni == 0 ? 1.0 : static_cast<scalar_t>(inter) / uni);
    }
    return curve;
}

scalar_t curve_auc(const IoUCurve& curve) {
    scalar_t auc = 0;
    for (size_t i = 1; i < curve.iou.size(); ++i)
        auc += 0.5 * (curve.iou[i] + curve.iou[i - 1]) * (curve.thresholds[i] - curve.thresholds[i - 1]);
    return auc;
}

scalar_t curve_peak(const IoUCurve& curve) {
    scalar_t peak = 0;
    for (scalar_t v : curve.iou) peak = std::max(peak, v);
    return peak;
}

MethodCurveSummary summarize_curves(const std::string& method, const std::vector<IoUCurve>& curves) {
    MethodCurveSummary s;
    s.method = method;
    if (curves.empty()) return s;
    s.thresholds = curves[0].thresholds;
    s.mean_iou.assign(s.thresholds.size(), 0.0);
    for (const auto& c : curves) {
        if (c.iou.size() != s.mean_iou.size()) throw DataError("summarize_curves: length mismatch");
        for (size_t i = 0; i < c.iou.size(); ++i) s.mean_iou[i] += c.iou[i];
    }
    for (auto& v : s.mean_iou) v /= static_cast<scalar_t>(curves.size());
    s.curves = static_cast<int>(curves.size());
    IoUCurve mean{s.thresholds, s.mean_iou, -1};
    s.auc = curve_auc(mean);
    s.peak = curve_peak(mean);
    return s;
}

scalar_t mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DataError("mse: shape mismatch");
    scalar_t s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        scalar_t d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<scalar_t>(a.numel());
}

scalar_t psnr_from_mse(scalar_t mse_value) {
    if (mse_value <= 0.0) return std::numeric_limits<scalar_t>::infinity();
    return -10.0 * std::log10(mse_value);  // data range 1
}

static scalar_t ssim_channel(const Tensor& a, const Tensor& b, int ch, const Tensor* region,
                             int64_t* windows_used) {
    const int win = 7, pad = 3;
    const scalar_t c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const scalar_t np = win * win;
    const scalar_t cov_norm = np / (np - 1.0);  // sample covariance
    int h = a.shape[1], w = a.shape[2];
    if (h < win || w < win) throw DataError("ssim: image smaller than the 7x7 window");
    scalar_t total = 0;
    int64_t count = 0;
    for (int y = pad; y < h - pad; ++y) {
        for (int x = pad; x < w - pad; ++x) {
            if (region && region->at2(y, x) == 0.0) continue;
            scalar_t sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = -pad; dy <= pad; ++dy)
                for (int dx = -pad; dx <= pad; ++dx) {
                    scalar_t va = a.at3(ch, y + dy, x + dx);
                    scalar_t vb = b.at3(ch, y + dy, x + dx);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            scalar_t ux = sa / np, uy = sb / np;
            scalar_t vx = cov_norm * (saa / np - ux * ux);
            scalar_t vy = cov_norm * (sbb / np - uy * uy);
            scalar_t vxy = cov_norm * (sab / np - ux * uy);
            scalar_t s = ((2 * ux * uy + c1) * (2 * vxy + c2)) /
                         ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    if (windows_used) *windows_used = count;
    return count == 0 ? 0.0 : total / static_cast<scalar_t>(count);
}

scalar_t ssim(const Tensor& a, const Tensor& b, const Tensor* region) {
    if (!a.same_shape(b)) throw DataError("ssim: shape mismatch");
    if (a.ndim() != 3) throw DataError("ssim: expected [C x H x W]");
    scalar_t total = 0;
    int64_t used = 0;
    for (int c = 0; c < a.shape[0]; ++c) {
        int64_t count = 0;
        total += ssim_channel(a, b, c, region, &count);
        used = count;
    }
    if (region && used == 0) throw DataError("ssim: empty region");
    return total / a.shape[0];
}

MetricReport image_metrics(const Tensor& edited, const Tensor& reference,
                           const Tensor& foreground_mask) {
    if (!edited.same_shape(reference)) throw DataError("image_metrics: shape mismatch");
    MetricReport report;
    report.full.mse = mse(edited, reference);
    report.full.psnr = psnr_from_mse(report.full.mse);
    report.full.ssim = ssim(edited, reference);

    if (foreground_mask.empty()) return report;
    if (foreground_mask.ndim() != 2 || foreground_mask.shape[0] != edited.shape[1] ||
        foreground_mask.shape[1] != edited.shape[2])
        throw DataError("image_metrics: mask must be [H x W] at image resolution");

    Tensor background = foreground_mask;
    int64_t bg_pixels = 0;
    for (auto& v : background.data) {
        v = v == 0.0 ? 1.0 : 0.0;
        bg_pixels += v != 0.0;
    }
    if (bg_pixels == 0) return report;  // background metrics reported as absent
    int64_t bg_windows = 0;
    for (int y = 3; y < edited.shape[1] - 3; ++y)
        for (int x = 3; x < edited.shape[2] - 3; ++x) bg_windows += background.at2(y, x) != 0.0;
    if (bg_windows == 0) return report;  // too small for windowed stats

    ImageMetricValues bg;
    scalar_t se = 0;
    for (int c = 0; c < edited.shape[0]; ++c)
        for (int y = 0; y < edited.shape[1]; ++y)
            for (int x = 0; x < edited.shape[2]; ++x)
                if (background.at2(y, x) != 0.0) {
                    scalar_t d = edited.at3(c, y, x) - reference.at3(c, y, x);
                    se += d * d;
                }
    bg.mse = se / static_cast<scalar_t>(bg_pixels * edited.shape[0]);
    bg.psnr = psnr_from_mse(bg.mse);
    bg.ssim = ssim(edited, reference, &background);
    report.background = bg;
    return report;
}

}  // namespace locinv
