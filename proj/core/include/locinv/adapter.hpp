#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "locinv/autograd.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

struct Latent {
    Tensor data;  // [channels x h x w]
    std::optional<int> timestep_hint;
};

struct ConditioningEmbedding {
    Tensor data;  // [context_length x d_text]
    std::vector<int> token_ids;
};

struct AttentionLayerInfo {
    std::string id;
    int resolution = 0;  // spatial side; the layer sees resolution^2 cells
};

struct AdapterSpec {
    std::vector<int> latent_shape;  // {channels, h, w}
    std::vector<AttentionLayerInfo> attention_layers;
    int d_text = 0;
    int context_length = 0;
    int image_size = 0;       // square images
    int train_timesteps = 0;  // model timestep domain [0, train_timesteps)
    scalar_t codec_tolerance = 0.0;  // mean-abs roundtrip error bound of the codec
    std::string checkpoint_hash;

    void validate() const;
};

struct CapturedAttention {
    std::string layer_id;
    int resolution = 0;
    int heads = 1;
    int d_key = 0;
    Tensor weights;  // [heads x cells x tokens], post-softmax
};

// Per-call sink for cross-attention capture; never shared across calls.
struct AttentionSink {
    std::vector<CapturedAttention> layers;
    void clear() { layers.clear(); }
};

// Rewrites post-softmax attention in place during a forward pass (the
// prompt-to-prompt injection hook). Returning false leaves the layer as is.
class AttentionController {
public:
    virtual ~AttentionController() = default;
    virtual bool transform(const std::string& layer_id, int resolution, Tensor& weights) = 0;
};

// Same capture as AttentionSink but for graph mode: values stay connected to
// the autograd graph so losses can differentiate through them.
struct AttentionGraphCapture {
    struct Layer {
        std::string layer_id;
        int resolution = 0;
        int heads = 1;
        int d_key = 0;
        ag::Var weights;  // [heads*cells x tokens] rows, reshaped by the store
    };
    std::vector<Layer> layers;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    // Token ids padded to the context length.
    virtual std::vector<int> tokenize(const std::string& prompt) const = 0;
    // Half-open token span [first, last) per whitespace word, in prompt order.
    virtual std::vector<std::pair<int, int>> token_spans(const std::string& prompt) const = 0;
    virtual int context_length() const = 0;
};

// Latent diffusion backbone behind one interface: text encoding, image/latent
// codec, and noise prediction with attention capture. Instances are immutable
// after load and safe to share across threads; sinks and captures are
// per-call.
class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;

    virtual const AdapterSpec& spec() const = 0;
    virtual const Tokenizer& tokenizer() const = 0;

    // Per-token input embedding (before the text encoder runs).
    virtual Tensor token_input_embedding(int token_id) const = 0;

    // Text-encoder output with input embeddings at `overrides` positions
    // replaced before encoding.
    virtual ConditioningEmbedding encode_text(const std::vector<int>& token_ids,
                                              const std::map<int, Tensor>& overrides) const = 0;
    virtual ag::Var encode_text_graph(const std::vector<int>& token_ids,
                                      const std::map<int, ag::Var>& overrides) const = 0;

    virtual Latent encode_image(const Tensor& image) const = 0;  // [3 x H x W] in [0,1]
    virtual Tensor decode_latent(const Latent& z) const = 0;     // [3 x H x W] in [0,1]

    virtual Tensor predict_noise(const Latent& z, int timestep, const ConditioningEmbedding& cond,
                                 AttentionSink* sink = nullptr,
                                 AttentionController* controller = nullptr) const = 0;
    virtual ag::Var predict_noise_graph(const Latent& z, int timestep, const ag::Var& cond,
                                        AttentionGraphCapture* capture = nullptr,
                                        AttentionController* controller = nullptr) const = 0;

    virtual uint64_t weights_checksum() const = 0;

    ConditioningEmbedding encode_prompt(const std::string& prompt) const;
    ConditioningEmbedding null_text_embedding() const;  // encoding of the empty prompt
};

}  // namespace locinv
