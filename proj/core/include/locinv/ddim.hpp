#pragma once

#include <vector>

#include "locinv/adapter.hpp"
#include "locinv/tensor.hpp"

namespace locinv {

struct SamplerConfig {
    scalar_t guidance_scale = 7.5;
    int steps = 50;

    void validate() const;
};

// Cumulative noise schedule over a step grid 0..T. alpha_bar[0] is exactly 1
// (the clean-latent boundary); alpha_bar[t] for t >= 1 is taken from the
// training schedule at timestep_map[t].
struct NoiseSchedule {
    int T = 0;
    std::vector<scalar_t> alpha_bar;  // [T+1], strictly decreasing
    std::vector<int> timestep_map;    // [T+1], step index -> model timestep

    static NoiseSchedule scaled_linear(int train_steps, int T, scalar_t beta_start = 0.00085,
                                       scalar_t beta_end = 0.012);
    void validate() const;
};

struct LatentTrajectory {
    std::vector<Tensor> latents;  // [T+1], index 0 is the clean latent

    int steps() const { return static_cast<int>(latents.size()) - 1; }
};

namespace ddim {

// f_theta: the denoised-latent estimate (z - sqrt(1-abar_t) eps) / sqrt(abar_t).
Tensor predict_x0(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched);

// One reverse step t -> t-1 with a fixed noise estimate.
Tensor step_back(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched);

// One forward (inversion) step t -> t+1 with a fixed noise estimate.
Tensor step_forward(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched);

// w * eps(z,t,cond) + (1-w) * eps(z,t,uncond); attention is captured from the
// conditional branch only. w == 1 skips the unconditional branch.
Tensor cfg_noise(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z, int t,
                 const ConditioningEmbedding& cond, const ConditioningEmbedding& uncond, scalar_t w,
                 AttentionSink* sink = nullptr, AttentionController* controller = nullptr);

// Deterministic forward inversion at w = 1: latents[0] = z0,
// latents[t+1] = sqrt(abar_{t+1}) f_theta(z_t,t) + sqrt(1-abar_{t+1}) eps(z_t,t).
LatentTrajectory invert(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z0,
                        const ConditioningEmbedding& cond);

// Plain reverse sampling from z_T with a fixed conditioning.
Tensor sample(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z_T,
              const ConditioningEmbedding& cond, const ConditioningEmbedding& uncond, scalar_t w);

}  // namespace ddim

}  // namespace locinv
