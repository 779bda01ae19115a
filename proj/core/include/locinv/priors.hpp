#pragma once

#include <map>
#include <string>
#include <vector>

#include "locinv/prompt.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

enum class PriorSource { Segmentation, Detection };

struct NormalizedBox {
    scalar_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // normalized to [0,1], x0 < x1, y0 < y1
    void validate() const;
};

// Per-noun binary masks at the attention resolution. Time-invariant: the
// prior is supplied once and reused at every timestep.
struct LocalizationPrior {
    std::map<int, Tensor> masks;  // noun token position -> [r x r] in {0,1}
    PriorSource source_kind = PriorSource::Segmentation;

    int resolution() const;
    const Tensor& mask_for(int noun_position) const;
    void validate(const PromptAnnotation& ann) const;
};

// Nearest-neighbour resize of a binary grid, then re-binarize.
Tensor resize_mask_nearest(const Tensor& mask_hw, int r);

// A cell is foreground iff its center lies inside the half-open box.
Tensor rasterize_box(const NormalizedBox& box, int r);

// Masks arrive as single-channel raster files, nonzero = foreground.
LocalizationPrior load_prior_from_masks(const std::map<int, std::string>& mask_paths_by_position,
                                        const PromptAnnotation& ann, int r);
LocalizationPrior load_prior_from_boxes(const std::map<int, NormalizedBox>& boxes_by_position,
                                        const PromptAnnotation& ann, int r);

// In-memory variant used by the batch runner (masks at source resolution).
LocalizationPrior make_prior(const std::map<int, Tensor>& grids_by_position,
                             const PromptAnnotation& ann, int r, PriorSource kind);

}  // namespace locinv
