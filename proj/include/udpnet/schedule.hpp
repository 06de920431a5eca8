#pragma once

// Noise schedule and the layer <-> timestep correspondence.
//
// Timesteps are 1-based (t = 1..T); index 0 of the cumulative product array
// holds the convention alpha_bar[0] = 1 so that posterior coefficients at
// t = 1 degenerate cleanly (mean = x0, variance = 0).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace udpnet {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // beta[t], t in 1..T (index 0 unused)
    std::vector<double> alpha;     // 1 - beta
    std::vector<double> alpha_bar; // prefix products, alpha_bar[0] = 1

    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[t]); }
    double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar[t]); }

    // Content hash, used to assert two components run on the same schedule.
    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull ^ static_cast<uint64_t>(T);
        auto mix = [&h](double v) {
            uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            __builtin_memcpy(&bits, &v, sizeof(bits));
            h ^= bits;
            h *= 0x100000001b3ull;
        };
        for (int t = 1; t <= T; ++t) mix(beta[t]);
        return h;
    }
};

// Endpoint-inclusive linear interpolation from beta_start (t=1) to beta_end
// (t=T): beta_t = start + (end-start)*(t-1)/(T-1).
inline NoiseSchedule build_linear_schedule(double beta_start, double beta_end, int T) {
    if (T < 2) throw std::invalid_argument("build_linear_schedule: T must be >= 2");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end))
        throw std::invalid_argument(
            "build_linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 0.0);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

// Layer n (1-based) of an N = T/tau unrolled network estimates the latent at
// timestep T - n*tau; the final layer lands exactly on t = 0.
struct LayerMap {
    int T = 0;
    int tau = 0;
    int N = 0;
    std::vector<int> timesteps; // timesteps[n-1] = T - n*tau
};

inline LayerMap build_layer_map(int T, int tau) {
    if (tau < 1 || T < 1) throw std::invalid_argument("build_layer_map: T and tau must be positive");
    if (T % tau != 0)
        throw std::invalid_argument("build_layer_map: T=" + std::to_string(T) +
                                    " is not divisible by tau=" + std::to_string(tau));
    LayerMap m;
    m.T = T;
    m.tau = tau;
    m.N = T / tau;
    m.timesteps.reserve(m.N);
    for (int n = 1; n <= m.N; ++n) m.timesteps.push_back(T - n * tau);
    return m;
}

// Per-layer weights for the intermediate-latent squared-error terms:
// lambda_n = 0.001 * n for layers n = 1..N-1. The final layer is scored by
// the codebook reconstruction likelihood instead.
struct LossWeights {
    std::vector<double> lambda;
};

inline LossWeights build_loss_weights(int N) {
    if (N < 2)
        throw std::invalid_argument(
            "build_loss_weights: N must be >= 2 (a single-layer unroll has no "
            "intermediate terms)");
    LossWeights w;
    w.lambda.reserve(N - 1);
    for (int n = 1; n <= N - 1; ++n) w.lambda.push_back(0.001 * n);
    return w;
}

// Coefficients of the forward-process posterior q(x_{t-1} | x_t, x0):
//   mean = c_xt * x_t + c_x0 * x0,  variance = sigma_q * I.
struct PosteriorCoeffs {
    double c_xt = 0.0;
    double c_x0 = 0.0;
    double sigma_q = 0.0; // variance, not standard deviation
};

inline PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T)
        throw std::invalid_argument("posterior_coeffs: t out of range [1, T]");
    const double a = s.alpha[t];
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    PosteriorCoeffs c;
    c.c_xt = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    c.c_x0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
    c.sigma_q = (1.0 - a) * (1.0 - ab_prev) / (1.0 - ab);
    return c;
}

} // namespace udpnet
