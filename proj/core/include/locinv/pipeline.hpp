#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "locinv/attention_store.hpp"
#include "locinv/ddim.hpp"
#include "locinv/token_opt.hpp"

namespace locinv {

struct PipelineConfig {
    SamplerConfig sampler;  // w = 7.5, T = 50 defaults
    LossConfig loss;
    int nti_inner_iters = 10;
    scalar_t nti_step_size = 0.01;
    scalar_t nti_early_exit = 1e-5;  // mean-squared residual
    bool adjective_binding = false;
    int attention_resolution = 0;  // 0 = adapter's canonical resolution

    void validate() const;
};

struct NullTextSchedule {
    std::vector<Tensor> embeddings;  // [T], index t-1 holds the null embedding used at step t
};

struct InversionResult {
    static constexpr int kFormatVersion = 1;

    int T = 0;
    Tensor z_bar_T;
    std::vector<DynamicTokenSet> token_schedule;  // [T], index t-1
    NullTextSchedule null_schedule;               // [T]
    LatentTrajectory forward_trajectory;          // [T+1], the DDIM inversion {z_t}
    std::vector<Tensor> backward_trajectory;      // [T+1], the NTI trace {z_bar_t}
    std::vector<LossReport> loss_reports;         // [T]
    std::vector<AttentionSnapshot> attention;     // [T], conditional attention after token opt
    PromptAnnotation annotation;
    std::string config_json;  // snapshot of the run configuration
    std::string adapter_hash;

    void validate_lengths() const;
};

struct NtiStepResult {
    Tensor z_prev;
    Tensor null_embedding;
    scalar_t initial_residual = 0;
    scalar_t final_residual = 0;
    int iterations_used = 0;
};

// One null-text optimization step: fits the null embedding so the guided DDIM
// step from z_bar_t lands on the inversion target, then returns that step
// under the final embedding. `eps_cond` is the conditional noise prediction
// at (z_bar_t, t), computed once by the caller.
NtiStepResult null_text_step(const ModelAdapter& adapter, const NoiseSchedule& sched,
                             const Tensor& target_z_prev, const Tensor& z_bar_t, int t,
                             const Tensor& eps_cond, const Tensor& null_embedding,
                             const PipelineConfig& cfg);

struct InvertObserver {
    // phase: "tokens" after token optimization, "nti" after the null step.
    std::function<void(int t, const std::string& phase, const InversionResult& partial)> on_step;
};

InversionResult invert(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& image,
                       const PromptAnnotation& ann, const LocalizationPrior& prior,
                       const PipelineConfig& cfg, TraceSink* trace = nullptr,
                       const InvertObserver* observer = nullptr);

// Deterministic replay: sample from z_bar_T with the stored schedules and
// decode. Rejects schedule-length mismatches.
Tensor reconstruct(const InversionResult& result, const ModelAdapter& adapter,
                   const NoiseSchedule& sched);

// Max per-element deviation of a replayed denoising loop from the stored
// backward trajectory.
scalar_t replay_error(const InversionResult& result, const ModelAdapter& adapter,
                      const NoiseSchedule& sched);

int resolve_attention_resolution(const AdapterSpec& spec, const PipelineConfig& cfg);

void save_result(const std::string& dir, const InversionResult& result);
InversionResult load_result(const std::string& dir);

}  // namespace locinv
