#include "locinv/adapter.hpp"

#include "locinv/errors.hpp"

namespace locinv {

void AdapterSpec::validate() const {
    if (latent_shape.size() != 3) throw DataError("adapter spec: latent_shape must have 3 entries");
    if (attention_layers.empty()) throw DataError("adapter spec: no attention layers declared");
    for (const auto& l : attention_layers) {
        if (l.resolution <= 0 || image_size % l.resolution != 0)
            throw DataError("adapter spec: attention resolution " + std::to_string(l.resolution) +
                            " does not divide image size " + std::to_string(image_size));
    }
    if (d_text <= 0 || context_length <= 0 || train_timesteps <= 0)
        throw DataError("adapter spec: invalid dimensions");
}

ConditioningEmbedding ModelAdapter::encode_prompt(const std::string& prompt) const {
    return encode_text(tokenizer().tokenize(prompt), {});
}

ConditioningEmbedding ModelAdapter::null_text_embedding() const { return encode_prompt(""); }

}  // namespace locinv
