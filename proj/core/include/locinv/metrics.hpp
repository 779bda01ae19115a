#pragma once

#include <optional>
#include <string>
#include <vector>

#include "locinv/attention_store.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

struct IoUCurve {
    std::vector<scalar_t> thresholds;  // 0.00 .. 1.00 step 0.01
    std::vector<scalar_t> iou;
    int noun_position = -1;
};

// Thresholded-attention IoU against a binary mask; the map is expected
// max-normalized. Empty union counts as IoU 1.
IoUCurve iou_curve(const TokenMap& map, const Tensor& mask);

scalar_t curve_auc(const IoUCurve& curve);   // trapezoidal over [0, 1]
scalar_t curve_peak(const IoUCurve& curve);

struct MethodCurveSummary {
    std::string method;
    std::vector<scalar_t> thresholds;
    std::vector<scalar_t> mean_iou;
    scalar_t auc = 0;
    scalar_t peak = 0;
    int curves = 0;
    int skipped_entries = 0;
};

MethodCurveSummary summarize_curves(const std::string& method, const std::vector<IoUCurve>& curves);

struct ImageMetricValues {
    scalar_t mse = 0;
    scalar_t psnr = 0;  // +inf when mse is 0
    scalar_t ssim = 0;
};

struct MetricReport {
    ImageMetricValues full;
    std::optional<ImageMetricValues> background;  // absent when the region is empty
};

// Full-image and background-restricted MSE/PSNR/SSIM. `foreground_mask` is
// the edited object's prior at image resolution (1 = object); background is
// its complement. Pass an empty tensor to skip the background block.
MetricReport image_metrics(const Tensor& edited, const Tensor& reference,
                           const Tensor& foreground_mask);

scalar_t mse(const Tensor& a, const Tensor& b);
scalar_t psnr_from_mse(scalar_t mse_value);
// Uniform 7x7 window, sample covariance, K1=0.01 K2=0.03, data range 1;
// channels averaged. `region` (optional, [H x W], 1 = keep) restricts the
// mean to windows centered in the region.
scalar_t ssim(const Tensor& a, const Tensor& b, const Tensor* region = nullptr);

}  // namespace locinv
