#pragma once

#include <map>
#include <optional>
#include <vector>

#include "locinv/pipeline.hpp"
#include "locinv/priors.hpp"

namespace locinv {

struct P2PConfig {
    scalar_t cross_replace_fraction = 0.8;
    scalar_t self_replace_fraction = 0.4;  // accepted for config parity; this backbone has no
                                           // self-attention layers, so it is a no-op
    bool transfer_dynamic_tokens = true;   // carry learned tokens to aligned unedited positions
    std::vector<int> local_blend_positions;  // noun positions gating the blend; empty = edited noun

    void validate() const;
};

struct TokenAlignment {
    std::map<int, int> source_to_target;  // injective on aligned positions
    int swap_source = -1;                 // substitution site, -1 when the prompts are identical
    int swap_target = -1;
};

// Matches token positions by longest common subsequence over token ids;
// the swapped word maps source -> target at the substitution site.
TokenAlignment align_prompts(const PromptAnnotation& src, const EditSpec& edit,
                             const Tokenizer& tokenizer);

struct EditStepStats {
    int t = 0;
    int injected_positions = 0;
    bool blended = false;
};

struct EditResult {
    Tensor edited_image;
    Tensor source_image;  // reconstruction from the stored schedules
    std::vector<EditStepStats> stats;
};

// Two synchronized denoising branches from z_bar_T. The source branch replays
// the stored schedules (and is checked against the stored trajectory); the
// target branch runs the edited prompt with source attention injected at
// aligned positions for the first cross_replace_fraction of steps.
EditResult edit(const InversionResult& result, const EditSpec& spec, const P2PConfig& cfg,
                const ModelAdapter& adapter, const NoiseSchedule& sched,
                const LocalizationPrior* prior = nullptr);

// Word-swap specialization for adjectives: requires the inversion to have run
// with adjective binding so the adjective position carries dynamic tokens.
EditResult attribute_edit(const InversionResult& result, const EditSpec& spec, const P2PConfig& cfg,
                          const ModelAdapter& adapter, const NoiseSchedule& sched,
                          const LocalizationPrior* prior = nullptr);

}  // namespace locinv
