#pragma once

#include <string>
#include <vector>

#include "locinv/adapter.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

// Per-token spatial cross-attention at one timestep, aggregated over heads
// and over all layers at the canonical resolution.
struct AttentionSnapshot {
    int t = 0;  // step index the snapshot was captured at
    Tensor maps;  // [num_tokens x r x r], softmax scale (unnormalized)
    int layer_count = 0;
    int d_key = 0;

    int resolution() const { return maps.ndim() == 3 ? maps.shape[1] : 0; }
    int num_tokens() const { return maps.ndim() == 3 ? maps.shape[0] : 0; }
};

struct TokenMap {
    Tensor grid;  // [r x r]
    int token_position = 0;
};

// Mean over heads and over every captured layer at resolution r.
AttentionSnapshot aggregate(const AttentionSink& sink, const AdapterSpec& spec, int r, int t = 0);

// Graph-mode twin of aggregate(): per-token flattened maps [r*r] that stay
// differentiable. Token j's map is the j-th column of the head/layer mean.
std::vector<ag::Var> aggregate_graph(const AttentionGraphCapture& capture, int r);

TokenMap token_map(const AttentionSnapshot& snap, int position, bool normalize);

void write_snapshot(const std::string& path, const AttentionSnapshot& snap);
AttentionSnapshot read_snapshot(const std::string& path);

}  // namespace locinv
