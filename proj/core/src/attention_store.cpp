#include "locinv/attention_store.hpp"

#include <algorithm>
#include <set>

#include "locinv/errors.hpp"
#include "locinv/serialize.hpp"

namespace locinv {

static std::string available_resolutions(const AttentionSink& sink) {
    std::set<int> rs;
    for (const auto& l : sink.layers) rs.insert(l.resolution);
    std::string s;
    for (int r : rs) s += (s.empty() ? "" : ", ") + std::to_string(r);
    return s.empty() ? "(none)" : s;
}

AttentionSnapshot aggregate(const AttentionSink& sink, const AdapterSpec& spec, int r, int t) {
    (void)spec;
    if (sink.layers.empty()) throw DataError("aggregate: empty attention sink");
    int tokens = -1;
    int layer_count = 0;
    int d_key = 0;
    Tensor acc;
    for (const auto& layer : sink.layers) {
        if (layer.resolution != r) continue;
        const Tensor& w = layer.weights;
        if (w.ndim() != 3 || w.shape[1] != r * r)
            throw DataError("aggregate: captured weights have bad shape " + w.shape_str());
        if (tokens < 0) {
            tokens = w.shape[2];
            acc = Tensor({tokens, r, r}, 0.0);
        } else if (tokens != w.shape[2]) {
            throw DataError("aggregate: token count differs across layers");
        }
        scalar_t head_inv = 1.0 / w.shape[0];
        for (int h = 0; h < w.shape[0]; ++h)
            for (int cell = 0; cell < r * r; ++cell)
                for (int j = 0; j < tokens; ++j)
                    acc.data[static_cast<size_t>(j) * r * r + cell] +=
                        head_inv * w.data[(static_cast<size_t>(h) * r * r + cell) * tokens + j];
        layer_count += 1;
        d_key = layer.d_key;
    }
    if (layer_count == 0)
        throw DataError("aggregate: no cross-attention layer at resolution " + std::to_string(r) +
                        "; available: " + available_resolutions(sink));
    scalar_t inv = 1.0 / layer_count;
    for (auto& v : acc.data) v *= inv;
    AttentionSnapshot snap;
    snap.t = t;
    snap.maps = std::move(acc);
    snap.layer_count = layer_count;
    snap.d_key = d_key;
    return snap;
}

std::vector<ag::Var> aggregate_graph(const AttentionGraphCapture& capture, int r) {
    using namespace ag;
    std::vector<Var> selected;
    int tokens = -1;
    for (const auto& layer : capture.layers) {
        if (layer.resolution != r) continue;
        const Tensor& w = layer.weights.value();
        // Graph captures are single-head [cells x tokens].
        if (w.ndim() != 2 || w.shape[0] != r * r)
            throw DataError("aggregate_graph: captured weights have bad shape " + w.shape_str());
        if (tokens < 0)
            tokens = w.shape[1];
        else if (tokens != w.shape[1])
            throw DataError("aggregate_graph: token count differs across layers");
        selected.push_back(layer.weights);
    }
    if (selected.empty())
        throw DataError("aggregate_graph: no cross-attention layer at resolution " + std::to_string(r));
    Var mean_map = selected[0];
    for (size_t i = 1; i < selected.size(); ++i) mean_map = add(mean_map, selected[i]);
    if (selected.size() > 1) mean_map = scale(mean_map, 1.0 / static_cast<scalar_t>(selected.size()));
    std::vector<Var> out;
    out.reserve(static_cast<size_t>(tokens));
    for (int j = 0; j < tokens; ++j) out.push_back(col(mean_map, j));
    return out;
}

TokenMap token_map(const AttentionSnapshot& snap, int position, bool normalize) {
    if (snap.maps.ndim() != 3) throw DataError("token_map: snapshot has no maps");
    int tokens = snap.num_tokens(), r = snap.resolution();
    if (position < 0 || position >= tokens)
        throw DataError("token_map: position " + std::to_string(position) + " outside [0, " +
                        std::to_string(tokens) + ")");
    TokenMap out;
    out.token_position = position;
    out.grid = Tensor({r, r});
    for (int i = 0; i < r * r; ++i) out.grid[i] = snap.maps.data[static_cast<size_t>(position) * r * r + i];
    if (normalize) {
        scalar_t mx = out.grid.max();
        if (mx > 0.0)
            for (auto& v : out.grid.data) v /= mx;
        // zero map stays zero
    }
    return out;
}

void write_snapshot(const std::string& path, const AttentionSnapshot& snap) {
    std::map<std::string, Tensor> named;
    named["maps"] = snap.maps;
    named["meta"] = Tensor::from({3}, {static_cast<scalar_t>(snap.t),
                                       static_cast<scalar_t>(snap.layer_count),
                                       static_cast<scalar_t>(snap.d_key)});
    write_tensor_file(path, named, TensorDType::f32);
}

AttentionSnapshot read_snapshot(const std::string& path) {
    auto named = read_tensor_file(path);
    auto maps_it = named.find("maps");
    auto meta_it = named.find("meta");
    if (maps_it == named.end() || meta_it == named.end() || meta_it->second.numel() != 3)
        throw DataError("bad snapshot file: " + path);
    AttentionSnapshot snap;
    snap.maps = std::move(maps_it->second);
    snap.t = static_cast<int>(meta_it->second[0]);
    snap.layer_count = static_cast<int>(meta_it->second[1]);
    snap.d_key = static_cast<int>(meta_it->second[2]);
    if (snap.maps.ndim() != 3 || snap.maps.shape[1] != snap.maps.shape[2])
        throw DataError("bad snapshot maps shape in " + path);
    return snap;
}

}  // namespace locinv
