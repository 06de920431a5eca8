#pragma once

// Closed-form pieces of the Gaussian diffusion process: marginal sampling,
// posterior moments, the shared-covariance KL identity, and the error
// accumulation bookkeeping used to compare layered and step-indexed models.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "udpnet/rng.hpp"
#include "udpnet/util.hpp"
#include "udpnet/schedule.hpp"

namespace udpnet {

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
inline std::vector<double> forward_sample(const std::vector<double>& x0,
                                          const NoiseSchedule& s, int t,
                                          const std::vector<double>& eps) {
    if (t < 1 || t > s.T) throw std::invalid_argument("forward_sample: t out of range");
    if (eps.size() != x0.size())
        throw std::invalid_argument("forward_sample: eps size mismatch");
    const double a = s.sqrt_alpha_bar(t);
    const double b = s.sqrt_one_minus_alpha_bar(t);
    std::vector<double> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// Mean of q(x_{t-1} | x_t, x0).
inline std::vector<double> posterior_mean(const NoiseSchedule& s, int t,
                                          const std::vector<double>& x_t,
                                          const std::vector<double>& x0) {
    if (x_t.size() != x0.size())
        throw std::invalid_argument("posterior_mean: size mismatch");
    const PosteriorCoeffs c = posterior_coeffs(s, t);
    std::vector<double> mu(x_t.size());
    for (size_t i = 0; i < mu.size(); ++i) mu[i] = c.c_xt * x_t[i] + c.c_x0 * x0[i];
    return mu;
}

// KL( N(mu1, sigma*I) || N(mu2, sigma*I) ) = ||mu1 - mu2||^2 / (2*sigma).
// sigma is the shared isotropic variance.
inline double gaussian_kl_shared_cov(const std::vector<double>& mu1,
                                     const std::vector<double>& mu2, double sigma) {
    if (mu1.size() != mu2.size())
        throw std::invalid_argument("gaussian_kl_shared_cov: size mismatch");
    if (!(sigma > 0.0))
        throw std::invalid_argument("gaussian_kl_shared_cov: variance must be positive");
    double sq = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        const double d = mu1[i] - mu2[i];
        sq += d * d;
    }
    return 0.5 * sq / sigma;
}

// Coefficient c(t) with KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t-with-x0-swapped))
// = c(t) * ||x_pred - x_t||^2. Both Gaussians share variance sigma_q(t) and
// their means differ by c_xt * (x_pred - x_t), so
//   c(t) = c_xt(t)^2 / (2 * sigma_q(t))
//        = alpha_t * (1 - alpha_bar_{t-1}) / (2 * (1-alpha_t) * (1-alpha_bar_t)).
inline double lt_coeff(const NoiseSchedule& s, int t) {
    if (t < 2 || t > s.T)
        throw std::invalid_argument("lt_coeff: defined for t in [2, T]");
    const double a = s.alpha[t];
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    return a * (1.0 - ab_prev) / (2.0 * (1.0 - a) * (1.0 - ab));
}

// KL( q(x_T | x0) || N(0, I) ) in closed form:
// q(x_T|x0) = N(sqrt(alpha_bar_T) x0, (1-alpha_bar_T) I).
inline double kl_prior(const std::vector<double>& x0, const NoiseSchedule& s) {
    const double ab = s.alpha_bar[s.T];
    const double var = 1.0 - ab;
    double kl = 0.0;
    for (double v : x0) {
        const double mu = std::sqrt(ab) * v;
        kl += 0.5 * (var + mu * mu - 1.0 - std::log(var));
    }
    return kl;
}

// Ordered per-term error records plus running totals; one row per evaluated
// layer or timestep.
struct ErrorCurve {
    std::vector<int> timesteps;
    std::vector<double> terms;
    std::vector<double> cumulative;

    double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }

    void write_csv(const std::string& path) const {
        CsvWriter csv("index,timestep,term,cumulative");
        for (size_t i = 0; i < terms.size(); ++i)
            csv.row(std::to_string(i) + "," + std::to_string(timesteps[i]) + "," +
                    fmt_double(terms[i]) + "," + fmt_double(cumulative[i]));
        csv.save(path);
    }
};

inline ErrorCurve accumulate_errors(const std::vector<int>& timesteps,
                                    const std::vector<double>& terms) {
    if (timesteps.size() != terms.size())
        throw std::invalid_argument("accumulate_errors: length mismatch");
    ErrorCurve c;
    c.timesteps = timesteps;
    c.terms = terms;
    c.cumulative.reserve(terms.size());
    double run = 0.0;
    for (double v : terms) {
        run += v;
        c.cumulative.push_back(run);
    }
    return c;
}

// Squared-error terms from prediction/target pairs, in the given order.
inline ErrorCurve accumulate_errors(const std::vector<int>& timesteps,
                                    const std::vector<std::vector<double>>& preds,
                                    const std::vector<std::vector<double>>& targets) {
    if (preds.size() != targets.size() || preds.size() != timesteps.size())
        throw std::invalid_argument("accumulate_errors: length mismatch");
    std::vector<double> terms(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].size() != targets[i].size())
            throw std::invalid_argument("accumulate_errors: shape mismatch at term " +
                                        std::to_string(i));
        double sq = 0.0;
        for (size_t d = 0; d < preds[i].size(); ++d) {
            const double diff = targets[i][d] - preds[i][d];
            sq += diff * diff;
        }
        terms[i] = sq;
    }
    return accumulate_errors(timesteps, terms);
}

} // namespace udpnet
