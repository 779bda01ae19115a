#include "locinv/ddim.hpp"

#include <cmath>

#include "locinv/errors.hpp"

namespace locinv {

void SamplerConfig::validate() const {
    if (guidance_scale < 1.0) throw DataError("guidance scale must be >= 1");
    if (steps < 1) throw DataError("sampler steps must be >= 1");
}

NoiseSchedule NoiseSchedule::scaled_linear(int train_steps, int T, scalar_t beta_start,
                                           scalar_t beta_end) {
    if (train_steps < 1 || T < 1 || T > train_steps)
        throw DataError("schedule: need 1 <= T <= train_steps");
    std::vector<scalar_t> abar_train(static_cast<size_t>(train_steps));
    scalar_t s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
    scalar_t acc = 1.0;
    for (int k = 0; k < train_steps; ++k) {
        scalar_t u = train_steps == 1 ? 0.0 : static_cast<scalar_t>(k) / (train_steps - 1);
        scalar_t sq = s0 + (s1 - s0) * u;
        acc *= 1.0 - sq * sq;
        abar_train[static_cast<size_t>(k)] = acc;
    }
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.resize(static_cast<size_t>(T) + 1);
    sched.timestep_map.resize(static_cast<size_t>(T) + 1);
    sched.alpha_bar[0] = 1.0;
    sched.timestep_map[0] = 0;
    int stride = train_steps / T;
    for (int t = 1; t <= T; ++t) {
        int tau = t * stride - 1;
        sched.timestep_map[static_cast<size_t>(t)] = tau;
        sched.alpha_bar[static_cast<size_t>(t)] = abar_train[static_cast<size_t>(tau)];
    }
    sched.validate();
    return sched;
}

void NoiseSchedule::validate() const {
    if (T < 1) throw DataError("schedule: T must be >= 1");
    if (alpha_bar.size() != static_cast<size_t>(T) + 1 || timestep_map.size() != alpha_bar.size())
        throw DataError("schedule: bad array lengths");
    if (std::abs(alpha_bar[0] - 1.0) > 1e-12) throw DataError("schedule: alpha_bar[0] must be 1");
    for (int t = 0; t <= T; ++t) {
        scalar_t a = alpha_bar[static_cast<size_t>(t)];
        if (!(a > 0.0 && a <= 1.0)) throw DataError("schedule: alpha_bar out of (0,1]");
        if (t > 0 && a >= alpha_bar[static_cast<size_t>(t) - 1])
            throw DataError("schedule: alpha_bar not strictly decreasing at t=" + std::to_string(t));
    }
}

namespace ddim {

static void check_t(int t, const NoiseSchedule& sched, const char* op) {
    if (t < 1 || t > sched.T)
        throw DataError(std::string(op) + ": timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(sched.T) + "]");
}

Tensor predict_x0(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(t, sched, "predict_x0");
    if (!z.same_shape(eps)) throw DataError("predict_x0: latent/noise shape mismatch");
    scalar_t abar = sched.alpha_bar[static_cast<size_t>(t)];
    scalar_t c_eps = std::sqrt(1.0 - abar);
    scalar_t inv = 1.0 / std::sqrt(abar);
    Tensor out = z;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - c_eps * eps[i]) * inv;
    return out;
}

Tensor step_back(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(t, sched, "step_back");
    Tensor x0 = predict_x0(z_t, t, eps, sched);
    scalar_t abar_prev = sched.alpha_bar[static_cast<size_t>(t) - 1];
    scalar_t c0 = std::sqrt(abar_prev), c1 = std::sqrt(1.0 - abar_prev);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c0 * out[i] + c1 * eps[i];
    return out;
}

Tensor step_forward(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) throw DataError("step_forward: source step outside [0, T)");
    if (!z_t.same_shape(eps)) throw DataError("step_forward: latent/noise shape mismatch");
    // At t = 0 the denoised estimate is the latent itself (alpha_bar[0] = 1).
    Tensor x0 = t == 0 ? z_t : predict_x0(z_t, t, eps, sched);
    scalar_t abar_next = sched.alpha_bar[static_cast<size_t>(t) + 1];
    scalar_t c0 = std::sqrt(abar_next), c1 = std::sqrt(1.0 - abar_next);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c0 * out[i] + c1 * eps[i];
    return out;
}

Tensor cfg_noise(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z, int t,
                 const ConditioningEmbedding& cond, const ConditioningEmbedding& uncond, scalar_t w,
                 AttentionSink* sink, AttentionController* controller) {
    check_t(t, sched, "cfg_noise");
    if (w < 1.0) throw DataError("cfg_noise: guidance scale must be >= 1");
    int tau = sched.timestep_map[static_cast<size_t>(t)];
    Latent lat{z, tau};
    Tensor eps_cond = adapter.predict_noise(lat, tau, cond, sink, controller);
    if (w == 1.0) return eps_cond;
    Tensor eps_uncond = adapter.predict_noise(lat, tau, uncond, nullptr, nullptr);
    Tensor out = eps_cond;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = w * out[i] + (1.0 - w) * eps_uncond[i];
    return out;
}

LatentTrajectory invert(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z0,
                        const ConditioningEmbedding& cond) {
    if (!z0.all_finite()) throw DataError("invert: non-finite input latent");
    LatentTrajectory traj;
    traj.latents.reserve(static_cast<size_t>(sched.T) + 1);
    traj.latents.push_back(z0);
    Tensor z = z0;
    for (int t = 0; t < sched.T; ++t) {
        int tau = sched.timestep_map[static_cast<size_t>(t)];
        Tensor eps = adapter.predict_noise(Latent{z, tau}, tau, cond, nullptr, nullptr);
        z = step_forward(z, t, eps, sched);
        if (!z.all_finite())
            throw NumericError("invert: non-finite latent after forward step t=" + std::to_string(t));
        traj.latents.push_back(z);
    }
    return traj;
}

Tensor sample(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& z_T,
              const ConditioningEmbedding& cond, const ConditioningEmbedding& uncond, scalar_t w) {
    Tensor z = z_T;
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps = cfg_noise(adapter, sched, z, t, cond, uncond, w);
        z = step_back(z, t, eps, sched);
        if (!z.all_finite())
            throw NumericError("sample: non-finite latent after reverse step t=" + std::to_string(t));
    }
    return z;
}

}  // namespace ddim

}  // namespace locinv
