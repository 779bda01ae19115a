#include "locinv/p2p.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "locinv/errors.hpp"

namespace locinv {

void P2PConfig::validate() const {
    if (!(cross_replace_fraction >= 0 && cross_replace_fraction <= 1))
        throw DataError("p2p: cross_replace_fraction must be in [0,1]");
    if (!(self_replace_fraction >= 0 && self_replace_fraction <= 1))
        throw DataError("p2p: self_replace_fraction must be in [0,1]");
}

static std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        words.push_back(w);
    }
    return words;
}

static int locate_word(const std::vector<std::string>& words, const std::string& word,
                       std::optional<int> occurrence) {
    std::vector<int> hits;
    for (size_t i = 0; i < words.size(); ++i)
        if (words[i] == word) hits.push_back(static_cast<int>(i));
    if (hits.empty()) throw DataError("edit: word \"" + word + "\" not found in prompt");
    if (hits.size() > 1 && !occurrence)
        throw DataError("edit: \"" + word + "\" occurs " + std::to_string(hits.size()) +
                        " times; supply an occurrence index");
    int k = occurrence.value_or(0);
    if (k < 0 || k >= static_cast<int>(hits.size()))
        throw DataError("edit: occurrence index out of range for \"" + word + "\"");
    return hits[static_cast<size_t>(k)];
}

TokenAlignment align_prompts(const PromptAnnotation& src, const EditSpec& edit,
                             const Tokenizer& tokenizer) {
    edit.validate(src.prompt_text);
    auto src_words = words_of(src.prompt_text);
    auto tgt_words = words_of(edit.target_prompt);
    auto src_spans = tokenizer.token_spans(src.prompt_text);
    auto tgt_spans = tokenizer.token_spans(edit.target_prompt);
    std::vector<int> a = tokenizer.tokenize(src.prompt_text);
    std::vector<int> b = tokenizer.tokenize(edit.target_prompt);
    int na = src_spans.empty() ? 0 : src_spans.back().second;
    int nb = tgt_spans.empty() ? 0 : tgt_spans.back().second;

    // Longest common subsequence over token ids.
    std::vector<std::vector<int>> dp(static_cast<size_t>(na) + 1,
                                     std::vector<int>(static_cast<size_t>(nb) + 1, 0));
    for (int i = na - 1; i >= 0; --i)
        for (int j = nb - 1; j >= 0; --j)
            dp[i][j] = a[static_cast<size_t>(i)] == b[static_cast<size_t>(j)]
                           ? dp[i + 1][j + 1] + 1
                           : std::max(dp[i + 1][j], dp[i][j + 1]);
    TokenAlignment align;
    int i = 0, j = 0;
    while (i < na && j < nb) {
        if (a[static_cast<size_t>(i)] == b[static_cast<size_t>(j)]) {
            align.source_to_target[i] = j;
            ++i, ++j;
        } else if (dp[i + 1][j] >= dp[i][j + 1]) {
            ++i;
        } else {
            ++j;
        }
    }

    if (edit.source_word != edit.target_word) {
        int src_word_idx = locate_word(src_words, edit.source_word, edit.occurrence);
        int tgt_word_idx = -1;
        for (size_t k = 0; k < tgt_words.size(); ++k) {
            bool was_source = k < src_words.size() && src_words[k] == edit.source_word &&
                              static_cast<int>(k) == src_word_idx;
            if (tgt_words[k] == edit.target_word && was_source) tgt_word_idx = static_cast<int>(k);
        }
        if (tgt_word_idx < 0)
            throw DataError("edit: target word \"" + edit.target_word +
                            "\" not at the substitution site in the target prompt");
        // Multi-piece words map through their first piece.
        align.swap_source = src_spans[static_cast<size_t>(src_word_idx)].first;
        align.swap_target = tgt_spans[static_cast<size_t>(tgt_word_idx)].first;
        align.source_to_target[align.swap_source] = align.swap_target;
    }
    return align;
}

namespace {

// Overwrites target-branch attention columns with source attention at aligned
// positions.
class InjectionController : public AttentionController {
public:
    InjectionController(const AttentionSink& source, const std::map<int, int>& mapping)
        : source_(source), mapping_(mapping) {}

    bool transform(const std::string& layer_id, int resolution, Tensor& weights) override {
        const CapturedAttention* src = nullptr;
        for (const auto& l : source_.layers)
            if (l.layer_id == layer_id && l.resolution == resolution) src = &l;
        if (!src) return false;
        // weights: [cells x tokens] (per-head slice at capture point)
        int cells = weights.shape[0];
        int tokens = weights.shape[1];
        for (const auto& [sp, tp] : mapping_) {
            if (sp >= src->weights.shape[2] || tp >= tokens) continue;
            for (int h = 0; h < src->weights.shape[0]; ++h)
                for (int c = 0; c < cells; ++c)
                    weights.at2(c, tp) =
                        src->weights.data[(static_cast<size_t>(h) * cells + c) *
                                              src->weights.shape[2] +
                                          sp];
        }
        injected = static_cast<int>(mapping_.size());
        return true;
    }

    int injected = 0;

private:
    const AttentionSink& source_;
    const std::map<int, int>& mapping_;
};

Tensor upsample_mask(const Tensor& mask_rr, int hw) {
    int r = mask_rr.shape[0];
    if (hw % r != 0) throw DataError("blend mask resolution does not divide latent size");
    int f = hw / r;
    Tensor out({hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) out.at2(y, x) = mask_rr.at2(y / f, x / f);
    return out;
}

EditResult run_two_branch(const InversionResult& result, const EditSpec& spec, const P2PConfig& cfg,
                          const ModelAdapter& adapter, const NoiseSchedule& sched,
                          const LocalizationPrior* prior, int swap_noun_position) {
    cfg.validate();
    result.validate_lengths();
    if (result.T != sched.T) throw DataError("edit: schedule/result step count mismatch");
    if (result.adapter_hash != adapter.spec().checkpoint_hash)
        throw DataError("edit: inversion was produced with a different checkpoint (" +
                        result.adapter_hash + " vs " + adapter.spec().checkpoint_hash + ")");

    const Tokenizer& tok = adapter.tokenizer();
    TokenAlignment align = align_prompts(result.annotation, spec, tok);
    std::vector<int> target_ids = tok.tokenize(spec.target_prompt);

    Tensor blend_mask;  // latent-resolution binary mask, empty when blending is off
    if (spec.blend_with_prior) {
        if (!prior) throw DataError("edit: blend_with_prior requires a localization prior");
        std::vector<int> gate = cfg.local_blend_positions;
        if (gate.empty() && swap_noun_position >= 0) gate.push_back(swap_noun_position);
        if (gate.empty()) throw DataError("edit: no noun position to gate the local blend");
        int r = prior->resolution();
        Tensor u({r, r}, 0.0);
        for (int p : gate) {
            const Tensor& m = prior->mask_for(p);
            for (int64_t i = 0; i < u.numel(); ++i) u[i] = std::max(u[i], m[i]);
        }
        blend_mask = upsample_mask(u, adapter.spec().latent_shape[1]);
    }

    scalar_t w = 7.5;
    {
        nlohmann::json c = nlohmann::json::parse(
            result.config_json.empty() ? "{}" : result.config_json, nullptr, false);
        if (c.is_object() && c.contains("sampler") && c["sampler"].contains("guidance_scale"))
            w = c["sampler"]["guidance_scale"].get<scalar_t>();
    }

    int T = sched.T;
    int cross_steps = static_cast<int>(std::lround(cfg.cross_replace_fraction * T));
    Tensor z_src = result.z_bar_T;
    Tensor z_tgt = result.z_bar_T;
    EditResult out;

    for (int t = T; t >= 1; --t) {
        const DynamicTokenSet& tokens = result.token_schedule[static_cast<size_t>(t) - 1];
        const Tensor& null_t = result.null_schedule.embeddings[static_cast<size_t>(t) - 1];
        ConditioningEmbedding null_emb{null_t, std::vector<int>(target_ids.size(), 0)};

        std::map<int, Tensor> src_overrides(tokens.begin(), tokens.end());
        ConditioningEmbedding cond_src = adapter.encode_text(result.annotation.token_ids, src_overrides);

        // Dynamic tokens carry over to aligned unedited positions; the
        // substitution site keeps the plain embedding of the new word.
        std::map<int, Tensor> tgt_overrides;
        if (cfg.transfer_dynamic_tokens) {
            for (const auto& [sp, tp] : align.source_to_target) {
                if (sp == align.swap_source) continue;
                auto it = tokens.find(sp);
                if (it != tokens.end()) tgt_overrides[tp] = it->second;
            }
        }
        ConditioningEmbedding cond_tgt = adapter.encode_text(target_ids, tgt_overrides);

        AttentionSink src_sink;
        Tensor eps_src = ddim::cfg_noise(adapter, sched, z_src, t, cond_src, null_emb, w, &src_sink);

        EditStepStats stats;
        stats.t = t;
        bool inject = (T - t) < cross_steps;
        Tensor eps_tgt;
        if (inject) {
            InjectionController controller(src_sink, align.source_to_target);
            eps_tgt =
                ddim::cfg_noise(adapter, sched, z_tgt, t, cond_tgt, null_emb, w, nullptr, &controller);
            stats.injected_positions = controller.injected;
        } else {
            eps_tgt = ddim::cfg_noise(adapter, sched, z_tgt, t, cond_tgt, null_emb, w);
        }

        z_src = ddim::step_back(z_src, t, eps_src, sched);
        z_tgt = ddim::step_back(z_tgt, t, eps_tgt, sched);

        // The source branch is a pure replay of the stored trajectory.
        scalar_t drift =
            max_abs_diff(z_src, result.backward_trajectory[static_cast<size_t>(t) - 1]);
        if (drift > 1e-5)
            throw DataError("edit: replay mismatch at t=" + std::to_string(t) + " (drift " +
                            std::to_string(drift) + "); result directory does not match this adapter");

        if (!blend_mask.empty()) {
            int hw = blend_mask.shape[0];
            for (int c = 0; c < z_tgt.shape[0]; ++c)
                for (int y = 0; y < hw; ++y)
                    for (int x = 0; x < hw; ++x)
                        if (blend_mask.at2(y, x) == 0.0) z_tgt.at3(c, y, x) = z_src.at3(c, y, x);
            stats.blended = true;
        }
        out.stats.push_back(stats);
    }

    out.source_image = adapter.decode_latent(Latent{z_src, 0});
    out.edited_image = adapter.decode_latent(Latent{z_tgt, 0});
    return out;
}

}  // namespace

EditResult edit(const InversionResult& result, const EditSpec& spec, const P2PConfig& cfg,
                const ModelAdapter& adapter, const NoiseSchedule& sched,
                const LocalizationPrior* prior) {
    auto words = words_of(result.annotation.prompt_text);
    int swap_noun = -1;
    if (spec.source_word != spec.target_word) {
        int wi = locate_word(words, spec.source_word, spec.occurrence);
        auto spans = adapter.tokenizer().token_spans(result.annotation.prompt_text);
        swap_noun = spans[static_cast<size_t>(wi)].first;
        if (!result.annotation.has_noun_at(swap_noun) && spec.kind == EditSpec::Kind::WordSwap)
            throw DataError("edit: word-swap source \"" + spec.source_word + "\" is not an annotated noun");
    } else if (!result.annotation.noun_positions.empty()) {
        swap_noun = result.annotation.noun_positions.front();
    }
    return run_two_branch(result, spec, cfg, adapter, sched, prior, swap_noun);
}

EditResult attribute_edit(const InversionResult& result, const EditSpec& spec, const P2PConfig& cfg,
                          const ModelAdapter& adapter, const NoiseSchedule& sched,
                          const LocalizationPrior* prior) {
    if (spec.kind != EditSpec::Kind::AttributeEdit)
        throw DataError("attribute_edit: spec kind must be attribute_edit");
    auto words = words_of(result.annotation.prompt_text);
    auto spans = adapter.tokenizer().token_spans(result.annotation.prompt_text);
    int adj_word = locate_word(words, spec.source_word, spec.occurrence);
    int adj_pos = spans[static_cast<size_t>(adj_word)].first;

    int noun_pos = -1;
    for (const auto& [a, n] : result.annotation.adjective_pairs)
        if (a == adj_pos) noun_pos = n;
    if (noun_pos < 0)
        throw DataError("attribute_edit: \"" + spec.source_word +
                        "\" has no adjective-noun pair in the annotation");
    bool has_adj_tokens = !result.token_schedule.empty() &&
                          result.token_schedule[0].count(adj_pos) > 0;
    if (!has_adj_tokens && spec.source_word != spec.target_word)
        throw DataError("attribute_edit: inversion ran without adjective tokens for \"" +
                        spec.source_word + "\"; re-run inversion with adjective_binding enabled");
    return run_two_branch(result, spec, cfg, adapter, sched, prior, noun_pos);
}

}  // namespace locinv
