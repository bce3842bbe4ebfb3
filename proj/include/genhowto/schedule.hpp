#ifndef GENHOWTO_SCHEDULE_HPP
#define GENHOWTO_SCHEDULE_HPP

#include "genhowto/tensor.hpp"

namespace genhowto {

// Linear-beta noise schedule. alpha_bars is indexed 0..T with the sentinel
// alpha_bars[0] = 1, so t = 0 always denotes the clean latent.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> betas;       // size T
    std::vector<double> alpha_bars;  // size T+1, alpha_bars[0] = 1
};

inline DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(T);
    for (int i = 0; i < T; ++i)
        s.betas[i] = T == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                               static_cast<double>(T - 1);
    s.alpha_bars.resize(T + 1);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= T; ++t) s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t - 1]);
    return s;
}

// Defaults: beta_end chosen so alpha_bars[T] < 0.05, i.e. near-total signal
// destruction at t = T.
inline DiffusionSchedule default_schedule(int T = 256) {
    return make_schedule(T, 1e-4, 0.026);
}

struct NoiseDraw {
    Tensor epsilon;
    uint64_t seed = 0;

    static NoiseDraw make(const std::vector<int64_t>& shape, uint64_t seed) {
        Rng rng(seed);
        NoiseDraw d;
        d.seed    = seed;
        d.epsilon = Tensor::randn(shape, rng);
        return d;
    }
};

// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
// Coefficients are carried in double so the DDIM round-trip identity holds
// to ~1e-6 relative error in float storage.
template <typename T>
TensorT<T> add_noise(const TensorT<T>& z0, const TensorT<T>& eps, int t, const DiffusionSchedule& sched) {
    if (t < 0 || t > sched.T) throw ConfigError("add_noise: t out of range");
    if (!z0.same_shape(eps)) throw ConfigError("add_noise: shape mismatch");
    if (t == 0) return z0;
    double ab = sched.alpha_bars[t];
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    TensorT<T> out(z0.shape);
    for (int64_t i = 0; i < z0.numel(); ++i)
        out[i] = static_cast<T>(a * static_cast<double>(z0[i]) + b * static_cast<double>(eps[i]));
    return out;
}

inline Tensor add_noise(const Tensor& z0, const NoiseDraw& draw, int t, const DiffusionSchedule& sched) {
    return add_noise(z0, draw.epsilon, t, sched);
}

// Deterministic (eta = 0) DDIM update from t to t_prev.
template <typename T>
TensorT<T> ddim_step(const TensorT<T>& z_t, const TensorT<T>& eps_hat, int t, int t_prev,
                     const DiffusionSchedule& sched) {
    if (t_prev > t) throw ConfigError("ddim_step: t_prev must not exceed t");
    if (t < 1 || t > sched.T || t_prev < 0) throw ConfigError("ddim_step: timestep out of range");
    if (!z_t.same_shape(eps_hat)) throw ConfigError("ddim_step: shape mismatch");
    if (t_prev == t) return z_t;
    double ab_t = sched.alpha_bars[t], ab_p = sched.alpha_bars[t_prev];
    double c0 = std::sqrt(ab_p / ab_t);
    double c1 = std::sqrt(1.0 - ab_p) - std::sqrt(ab_p * (1.0 - ab_t) / ab_t);
    TensorT<T> out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); ++i)
        out[i] = static_cast<T>(c0 * static_cast<double>(z_t[i]) + c1 * static_cast<double>(eps_hat[i]));
    return out;
}

// eps = eps_uncond + w * (eps_cond - eps_uncond); w == 1 and w == 0 return
// the respective branch exactly.
template <typename T>
TensorT<T> cfg_combine(const TensorT<T>& eps_cond, const TensorT<T>& eps_uncond, double w) {
    if (!eps_cond.same_shape(eps_uncond)) throw ConfigError("cfg_combine: shape mismatch");
    if (w == 1.0) return eps_cond;
    if (w == 0.0) return eps_uncond;
    TensorT<T> out(eps_cond.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(static_cast<double>(eps_uncond[i]) +
                                w * (static_cast<double>(eps_cond[i]) - static_cast<double>(eps_uncond[i])));
    return out;
}

// n_steps evenly spaced descending timesteps in [1, T]; the first `skip`
// (largest-t) entries are dropped. The head of the returned list is the
// noise-perturbation level used to initialize sampling.
inline std::vector<int> sampling_timesteps(const DiffusionSchedule& sched, int n_steps, int skip) {
    if (n_steps < 1 || n_steps > sched.T) throw ConfigError("sampling_timesteps: need 1 <= n_steps <= T");
    if (skip < 0 || skip >= n_steps) throw ConfigError("sampling_timesteps: need 0 <= skip < n_steps");
    std::vector<int> ts(n_steps);
    for (int i = 0; i < n_steps; ++i) {
        double v = n_steps == 1 ? sched.T
                                : static_cast<double>(sched.T) -
                                      static_cast<double>(i) * (sched.T - 1.0) / (n_steps - 1.0);
        ts[i] = static_cast<int>(std::llround(v));
    }
    for (size_t i = 1; i < ts.size(); ++i) assert(ts[i] < ts[i - 1]);
    ts.erase(ts.begin(), ts.begin() + skip);
    return ts;
}

}  // namespace genhowto

#endif
