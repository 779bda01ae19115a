#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "locinv/adapter.hpp"
#include "locinv/autograd.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

// Architecture hyperparameters of the blob-backed backbone: a two-level UNet
// with a single cross-attention layer at half latent resolution, plus a
// one-block transformer text encoder over a closed word vocabulary.
struct NetworkConfig {
    int image_size = 64;
    int latent_channels = 4;
    int latent_hw = 16;
    int d_text = 32;
    int context_length = 8;
    int d_attn = 32;
    int ch0 = 32;
    int ch1 = 64;
    int time_hidden = 48;
    int train_timesteps = 1000;
    std::vector<std::string> vocabulary;  // index = token id; index 0 is the pad token

    int block() const { return image_size / latent_hw; }  // codec block side
    int attn_resolution() const { return latent_hw / 2; }
    void validate() const;
};

struct NetworkWeights {
    NetworkConfig config;
    std::map<std::string, Tensor> tensors;
};

// Single-file blob: magic "LTWB", u32 version, u32 config-json length, the
// config JSON, then the named-tensor block.
void save_network(const std::string& path, const NetworkWeights& weights);
NetworkWeights load_network(const std::string& path);

NetworkWeights init_network_weights(const NetworkConfig& config, uint64_t seed);

using ParamVars = std::map<std::string, ag::Var>;
ParamVars make_param_vars(const NetworkWeights& weights, bool trainable);
std::vector<ag::Var> param_list(const ParamVars& params);

ag::Var text_encode_graph(const NetworkConfig& cfg, const ParamVars& params,
                          const std::vector<int>& token_ids, const std::map<int, ag::Var>& overrides);

struct UnetGraphOut {
    ag::Var noise;      // [C, h, w]
    ag::Var attention;  // [cells x tokens], post-softmax (post-controller when one ran)
};
UnetGraphOut unet_graph(const NetworkConfig& cfg, const ParamVars& params, const Tensor& z,
                        int timestep, const ag::Var& cond, AttentionController* controller);

class WordTokenizer : public Tokenizer {
public:
    WordTokenizer(std::vector<std::string> vocabulary, int context_length);

    std::vector<int> tokenize(const std::string& prompt) const override;
    std::vector<std::pair<int, int>> token_spans(const std::string& prompt) const override;
    int context_length() const override { return context_length_; }

    int id_of(const std::string& word) const;

private:
    std::vector<std::string> vocab_;
    std::map<std::string, int> index_;
    int context_length_;
};

// ModelAdapter over a NetworkWeights blob. Immutable after construction.
class NetworkAdapter : public ModelAdapter {
public:
    explicit NetworkAdapter(NetworkWeights weights, std::string checkpoint_hash = "");

    const AdapterSpec& spec() const override { return spec_; }
    const Tokenizer& tokenizer() const override { return tokenizer_; }
    const NetworkConfig& config() const { return weights_.config; }

    Tensor token_input_embedding(int token_id) const override;
    ConditioningEmbedding encode_text(const std::vector<int>& token_ids,
                                      const std::map<int, Tensor>& overrides) const override;
    ag::Var encode_text_graph(const std::vector<int>& token_ids,
                              const std::map<int, ag::Var>& overrides) const override;
    Latent encode_image(const Tensor& image) const override;
    Tensor decode_latent(const Latent& z) const override;
    Tensor predict_noise(const Latent& z, int timestep, const ConditioningEmbedding& cond,
                         AttentionSink* sink, AttentionController* controller) const override;
    ag::Var predict_noise_graph(const Latent& z, int timestep, const ag::Var& cond,
                                AttentionGraphCapture* capture,
                                AttentionController* controller) const override;
    uint64_t weights_checksum() const override;

private:
    NetworkWeights weights_;
    ParamVars params_;  // requires_grad = false; shared read-only across calls
    WordTokenizer tokenizer_;
    AdapterSpec spec_;
    uint64_t checksum_ = 0;
};

std::shared_ptr<NetworkAdapter> load_network_adapter(const std::string& blob_path);

}  // namespace locinv
