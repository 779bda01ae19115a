#include "locinv/priors.hpp"

#include <algorithm>
#include <cmath>

#include "locinv/errors.hpp"
#include "locinv/image_io.hpp"

namespace locinv {

void NormalizedBox::validate() const {
    if (!(x0 >= 0 && y0 >= 0 && x1 <= 1 && y1 <= 1 && x0 < x1 && y0 < y1))
        throw DataError("malformed box: expected normalized (x0,y0,x1,y1) with x0<x1, y0<y1");
}

int LocalizationPrior::resolution() const {
    if (masks.empty()) throw DataError("prior: no masks");
    return masks.begin()->second.shape[0];
}

const Tensor& LocalizationPrior::mask_for(int noun_position) const {
    auto it = masks.find(noun_position);
    if (it == masks.end())
        throw DataError("prior: no mask for noun position " + std::to_string(noun_position));
    return it->second;
}

void LocalizationPrior::validate(const PromptAnnotation& ann) const {
    if (masks.size() != ann.noun_positions.size())
        throw DataError("prior: expected exactly one mask per noun (" +
                        std::to_string(ann.noun_positions.size()) + " nouns, " +
                        std::to_string(masks.size()) + " masks)");
    for (int p : ann.noun_positions) {
        const Tensor& m = mask_for(p);
        if (m.ndim() != 2 || m.shape[0] != m.shape[1]) throw DataError("prior: mask must be square");
        if (m.shape != masks.begin()->second.shape)
            throw DataError("prior: masks must share one resolution");
        if (m.sum() <= 0.0)
            throw DataError("prior: empty mask for noun position " + std::to_string(p));
    }
}

Tensor resize_mask_nearest(const Tensor& mask_hw, int r) {
    if (mask_hw.ndim() != 2) throw DataError("resize_mask_nearest: expected 2-d grid");
    int h = mask_hw.shape[0], w = mask_hw.shape[1];
    Tensor out({r, r});
    for (int y = 0; y < r; ++y) {
        int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / r));
        for (int x = 0; x < r; ++x) {
            int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / r));
            out.at2(y, x) = mask_hw.at2(sy, sx) != 0.0 ? 1.0 : 0.0;
        }
    }
    return out;
}

Tensor rasterize_box(const NormalizedBox& box, int r) {
    box.validate();
    Tensor out({r, r});
    for (int y = 0; y < r; ++y) {
        scalar_t cy = (y + 0.5) / r;
        for (int x = 0; x < r; ++x) {
            scalar_t cx = (x + 0.5) / r;
            out.at2(y, x) = (cx >= box.x0 && cx < box.x1 && cy >= box.y0 && cy < box.y1) ? 1.0 : 0.0;
        }
    }
    return out;
}

static Tensor binarize(const Tensor& grid) {
    Tensor out = grid;
    for (auto& v : out.data) v = v != 0.0 ? 1.0 : 0.0;
    return out;
}

LocalizationPrior make_prior(const std::map<int, Tensor>& grids_by_position,
                             const PromptAnnotation& ann, int r, PriorSource kind) {
    LocalizationPrior prior;
    prior.source_kind = kind;
    for (const auto& [pos, grid] : grids_by_position) {
        Tensor m = grid.shape == std::vector<int>{r, r} ? binarize(grid) : resize_mask_nearest(grid, r);
        if (m.sum() <= 0.0) {
            std::string noun = "position " + std::to_string(pos);
            throw DataError("prior: mask for noun at " + noun + " is empty after resize to " +
                            std::to_string(r) + "x" + std::to_string(r));
        }
        prior.masks.emplace(pos, std::move(m));
    }
    prior.validate(ann);
    return prior;
}

LocalizationPrior load_prior_from_masks(const std::map<int, std::string>& mask_paths_by_position,
                                        const PromptAnnotation& ann, int r) {
    std::map<int, Tensor> grids;
    for (const auto& [pos, path] : mask_paths_by_position) {
        Tensor img = read_mask_image(path);  // [1 x H x W]
        Tensor grid({img.shape[1], img.shape[2]});
        for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = img.data[static_cast<size_t>(i)];
        grids.emplace(pos, std::move(grid));
    }
    return make_prior(grids, ann, r, PriorSource::Segmentation);
}

LocalizationPrior load_prior_from_boxes(const std::map<int, NormalizedBox>& boxes_by_position,
                                        const PromptAnnotation& ann, int r) {
    std::map<int, Tensor> grids;
    for (const auto& [pos, box] : boxes_by_position) grids.emplace(pos, rasterize_box(box, r));
    LocalizationPrior prior = make_prior(grids, ann, r, PriorSource::Detection);
    prior.source_kind = PriorSource::Detection;
    return prior;
}

}  // namespace locinv
