#pragma once

// Training objectives over the unrolled network, the Adam optimizer with a
// triangular cyclical learning rate, and the gradient noise scale estimator.
//
// All randomness is drawn from named streams keyed by (seed, purpose, step,
// example), so losses are pure functions of (parameters, seed, step).

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "udpnet/audio.hpp"
#include "udpnet/codebook.hpp"
#include "udpnet/diffusion.hpp"
#include "udpnet/model.hpp"
#include "udpnet/rng.hpp"
#include "udpnet/schedule.hpp"
#include "udpnet/tensor.hpp"

namespace udpnet {

enum class Objective { vlb, simple, hybrid };

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::vlb: return "vlb";
        case Objective::simple: return "simple";
        case Objective::hybrid: return "hybrid";
    }
    return "?";
}

inline Objective parse_objective(const std::string& s) {
    if (s == "vlb") return Objective::vlb;
    if (s == "simple") return Objective::simple;
    if (s == "hybrid") return Objective::hybrid;
    throw std::invalid_argument("objective must be one of vlb|simple|hybrid, got '" + s +
                                "'");
}

// One training example: frozen-encoder latent, its codebook indices, and
// optional mel features for conditioning.
struct Example {
    TensorPtr x0;                // constant [f x h]
    std::vector<double> x0_data; // same values, for schedule math
    std::vector<int> indices;    // codebook index per latent frame
    TensorPtr mel;               // [mel_frames x n_mels] or null
};

inline Example make_example(const Autoencoder& ae, const Codebook& cb,
                            const AudioClip& clip, const MelConfig* mel_cfg) {
    Example ex;
    auto latent = ae.encode_clip(clip);
    ex.x0 = detach(latent);
    ex.x0_data = ex.x0->data;
    ex.indices = quantize(cb, ex.x0_data, ex.x0->shape[0]).indices;
    if (mel_cfg) {
        const MelFeatures mf = mel_spectrogram(clip, *mel_cfg);
        ex.mel = constant({mf.n_frames, mf.n_mels}, mf.values);
    }
    return ex;
}

struct LossOptions {
    double lambda_h = 0.001;       // weight on the bound terms inside hybrid
    bool independent_noise = false; // fresh noise per intermediate target
    bool detach_between = false;    // cut gradients between layers
    bool analytic_weights = false;  // weight MSE terms by lt_coeff instead of lambda_n
};

struct LossBreakdown {
    std::vector<double> layer_terms; // weighted intermediate MSE terms (batch mean)
    double l0 = 0.0;
    double l_simple = 0.0;
    double l_prior = 0.0;
    double total = 0.0;
};

struct LossValue {
    TensorPtr loss;
    LossBreakdown breakdown;
};

namespace detail {

struct UnrolledExample {
    UnrollOutput out;
    std::vector<std::vector<double>> targets; // x_t per intermediate layer
    std::vector<double> eps0;
};

// Run the unroll from the top of the forward chain. The chain input and the
// intermediate targets share one noise draw per example, so each layer
// bridges the gap between adjacent noisy states.
inline UnrolledExample unroll_example(const Unroller& net, const Example& ex,
                                      const NoiseSchedule& s, const LayerMap& map,
                                      const LossOptions& opt, uint64_t seed, long step,
                                      int example_index) {
    UnrolledExample u;
    const uint64_t idx =
        (static_cast<uint64_t>(step) << 16) | static_cast<uint64_t>(example_index);
    RngStream eps_stream(seed, "loss.eps", idx);
    u.eps0.resize(ex.x0_data.size());
    eps_stream.fill_gaussian(u.eps0);

    auto x_T = constant(ex.x0->shape, forward_sample(ex.x0_data, s, s.T, u.eps0));
    u.out = net.unroll(x_T, ex.mel ? &ex.mel : nullptr, opt.detach_between);

    u.targets.resize(map.N > 0 ? map.N - 1 : 0);
    for (int n = 1; n <= map.N - 1; ++n) {
        const int t = map.timesteps[n - 1];
        if (opt.independent_noise) {
            RngStream layer_stream(seed, "loss.eps.layer",
                                   idx * 257 + static_cast<uint64_t>(n));
            std::vector<double> eps(ex.x0_data.size());
            layer_stream.fill_gaussian(eps);
            u.targets[n - 1] = forward_sample(ex.x0_data, s, t, eps);
        } else {
            u.targets[n - 1] = forward_sample(ex.x0_data, s, t, u.eps0);
        }
    }
    return u;
}

inline double layer_weight(const LossWeights& w, const NoiseSchedule& s,
                           const LayerMap& map, int n, bool analytic) {
    if (analytic) return lt_coeff(s, map.timesteps[n - 1]);
    return w.lambda[n - 1];
}

inline void check_term(double v, const char* fn, int layer) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string(fn) + ": non-finite term at layer " +
                                 std::to_string(layer));
}

} // namespace detail

// Weighted intermediate-latent squared errors plus the codebook
// reconstruction likelihood of the final estimate.
inline LossValue loss_vlb(const Unroller& net, const std::vector<Example>& batch,
                          const NoiseSchedule& s, const LayerMap& map,
                          const Codebook& cb, const L0Config& l0cfg,
                          const LossOptions& opt, uint64_t seed, long step) {
    if (batch.empty()) throw std::invalid_argument("loss_vlb: empty batch");
    LossWeights w;
    if (map.N >= 2) w = build_loss_weights(map.N);
    LossValue lv;
    lv.breakdown.layer_terms.assign(map.N > 0 ? map.N - 1 : 0, 0.0);
    TensorPtr total;
    for (size_t e = 0; e < batch.size(); ++e) {
        auto u = detail::unroll_example(net, batch[e], s, map, opt, seed, step,
                                        static_cast<int>(e));
        TensorPtr ex_loss;
        for (int n = 1; n <= map.N - 1; ++n) {
            const double wn = detail::layer_weight(w, s, map, n, opt.analytic_weights);
            auto target = constant(batch[e].x0->shape, u.targets[n - 1]);
            auto term = scale(sq_norm(sub(u.out.estimates[n - 1], target)), wn);
            detail::check_term(term->value(), "loss_vlb", n);
            lv.breakdown.layer_terms[n - 1] += term->value();
            ex_loss = ex_loss ? add(ex_loss, term) : term;
        }
        auto l0 = l0_negative_log_likelihood(u.out.x0_hat(), cb, batch[e].indices, l0cfg);
        detail::check_term(l0->value(), "loss_vlb", map.N);
        lv.breakdown.l0 += l0->value();
        ex_loss = ex_loss ? add(ex_loss, l0) : l0;
        total = total ? add(total, ex_loss) : ex_loss;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    lv.loss = scale(total, inv_b);
    for (double& v : lv.breakdown.layer_terms) v *= inv_b;
    lv.breakdown.l0 *= inv_b;
    lv.breakdown.total = lv.loss->value();
    return lv;
}

// Squared error between the penultimate-layer estimate and the clean latent.
inline LossValue loss_simple(const Unroller& net, const std::vector<Example>& batch,
                             const NoiseSchedule& s, const LayerMap& map,
                             const LossOptions& opt, uint64_t seed, long step) {
    if (batch.empty()) throw std::invalid_argument("loss_simple: empty batch");
    if (map.N < 2)
        throw std::invalid_argument(
            "loss_simple: requires N >= 2 (penultimate layer undefined)");
    LossValue lv;
    TensorPtr total;
    for (size_t e = 0; e < batch.size(); ++e) {
        auto u = detail::unroll_example(net, batch[e], s, map, opt, seed, step,
                                        static_cast<int>(e));
        auto term = sq_norm(sub(u.out.estimates[map.N - 2], batch[e].x0));
        detail::check_term(term->value(), "loss_simple", map.N - 1);
        total = total ? add(total, term) : term;
    }
    lv.loss = scale(total, 1.0 / static_cast<double>(batch.size()));
    lv.breakdown.l_simple = lv.loss->value();
    lv.breakdown.total = lv.breakdown.l_simple;
    return lv;
}

// loss_simple plus lambda_h times the bound terms (codebook likelihood,
// weighted intermediate MSE, and the prior gap of the forward endpoint).
inline LossValue loss_hybrid(const Unroller& net, const std::vector<Example>& batch,
                             const NoiseSchedule& s, const LayerMap& map,
                             const Codebook& cb, const L0Config& l0cfg,
                             const LossOptions& opt, uint64_t seed, long step) {
    if (batch.empty()) throw std::invalid_argument("loss_hybrid: empty batch");
    if (map.N < 2)
        throw std::invalid_argument(
            "loss_hybrid: requires N >= 2 (penultimate layer undefined)");
    LossWeights w = build_loss_weights(map.N);
    LossValue lv;
    lv.breakdown.layer_terms.assign(map.N - 1, 0.0);
    TensorPtr total;
    for (size_t e = 0; e < batch.size(); ++e) {
        auto u = detail::unroll_example(net, batch[e], s, map, opt, seed, step,
                                        static_cast<int>(e));
        auto simple = sq_norm(sub(u.out.estimates[map.N - 2], batch[e].x0));
        detail::check_term(simple->value(), "loss_hybrid", map.N - 1);
        lv.breakdown.l_simple += simple->value();
        TensorPtr bound;
        for (int n = 1; n <= map.N - 1; ++n) {
            const double wn = detail::layer_weight(w, s, map, n, opt.analytic_weights);
            auto target = constant(batch[e].x0->shape, u.targets[n - 1]);
            auto term = scale(sq_norm(sub(u.out.estimates[n - 1], target)), wn);
            detail::check_term(term->value(), "loss_hybrid", n);
            lv.breakdown.layer_terms[n - 1] += term->value();
            bound = bound ? add(bound, term) : term;
        }
        auto l0 = l0_negative_log_likelihood(u.out.x0_hat(), cb, batch[e].indices, l0cfg);
        detail::check_term(l0->value(), "loss_hybrid", map.N);
        lv.breakdown.l0 += l0->value();
        bound = add(bound, l0);
        const double prior = kl_prior(batch[e].x0_data, s);
        lv.breakdown.l_prior += prior;
        bound = add(bound, scalar_const(prior));
        auto ex_loss = add(simple, scale(bound, opt.lambda_h));
        total = total ? add(total, ex_loss) : ex_loss;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    lv.loss = scale(total, inv_b);
    for (double& v : lv.breakdown.layer_terms) v *= inv_b;
    lv.breakdown.l0 *= inv_b;
    lv.breakdown.l_simple *= inv_b;
    lv.breakdown.l_prior *= inv_b;
    lv.breakdown.total = lv.loss->value();
    return lv;
}

// ---- optimizer ----

struct OptimConfig {
    double lr_low = 1e-4;
    double lr_high = 3e-3;
    int cycle = 2000; // steps per full triangle
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Triangular cyclical schedule: lower bound at the cycle start, upper bound
// at mid-cycle, back down by the end.
inline double cyclical_lr(const OptimConfig& c, long step) {
    if (c.cycle <= 1) return c.lr_low;
    const long pos = step % c.cycle;
    const double frac = static_cast<double>(pos) / c.cycle;
    const double tri = 1.0 - std::abs(2.0 * frac - 1.0);
    return c.lr_low + (c.lr_high - c.lr_low) * tri;
}

struct TrainState {
    ParamList params;
    std::vector<std::vector<double>> m, v;
    long step = 0;
    OptimConfig opt;

    explicit TrainState(ParamList p, OptimConfig o = {}) : params(std::move(p)), opt(o) {
        m.resize(params.size());
        v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(params[i].second->numel(), 0.0);
            v[i].assign(params[i].second->numel(), 0.0);
        }
    }
};

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
    LossBreakdown breakdown;
};

// One optimization step: zero grads, evaluate, backpropagate, Adam update.
inline StepResult train_step(TrainState& st, const std::function<LossValue()>& make_loss) {
    for (auto& [name, p] : st.params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    LossValue lv = make_loss();
    backward(lv.loss);
    const double lr = cyclical_lr(st.opt, st.step);
    const long t = st.step + 1;
    const double bc1 = 1.0 - std::pow(st.opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(st.opt.beta2, static_cast<double>(t));
    for (size_t i = 0; i < st.params.size(); ++i) {
        auto& p = st.params[i].second;
        double* m = st.m[i].data();
        double* v = st.v[i].data();
        for (size_t j = 0; j < p->data.size(); ++j) {
            const double g = p->grad[j];
            if (!std::isfinite(g))
                throw std::runtime_error("train_step: non-finite gradient in " +
                                         st.params[i].first);
            m[j] = st.opt.beta1 * m[j] + (1.0 - st.opt.beta1) * g;
            v[j] = st.opt.beta2 * v[j] + (1.0 - st.opt.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p->data[j] -= lr * mhat / (std::sqrt(vhat) + st.opt.eps);
        }
    }
    st.step++;
    StepResult r;
    r.loss = lv.loss->value();
    r.lr = lr;
    r.breakdown = lv.breakdown;
    return r;
}

// ---- gradient noise scale ----

struct NoiseScaleResult {
    double g2_small = 0.0; // mean ||grad||^2 at the small batch size
    double g2_big = 0.0;   // mean ||grad||^2 at the big batch size
    double g2 = 0.0;       // estimated ||G||^2 (true gradient)
    double S = 0.0;        // estimated per-example gradient variance scale
    double b_noise = 0.0;  // S / ||G||^2
};

// Two-batch-size estimator. grad_fn(batch_size, trial) returns the flattened
// gradient of the loss on a fresh batch. Negative estimates floor at 0.
inline NoiseScaleResult gradient_noise_scale(
    const std::function<std::vector<double>(int, int)>& grad_fn, int b_small, int b_big,
    int trials) {
    if (b_small < 1 || b_big <= b_small)
        throw std::invalid_argument("gradient_noise_scale: need 1 <= b_small < b_big");
    if (trials < 1) throw std::invalid_argument("gradient_noise_scale: trials must be >= 1");
    NoiseScaleResult r;
    for (int trial = 0; trial < trials; ++trial) {
        const auto gs = grad_fn(b_small, trial);
        const auto gb = grad_fn(b_big, trial);
        double s2 = 0.0, b2 = 0.0;
        for (double g : gs) s2 += g * g;
        for (double g : gb) b2 += g * g;
        r.g2_small += s2;
        r.g2_big += b2;
    }
    r.g2_small /= trials;
    r.g2_big /= trials;
    const double bs = b_small, bb = b_big;
    r.g2 = std::max(0.0, (bb * r.g2_big - bs * r.g2_small) / (bb - bs));
    r.S = std::max(0.0, (r.g2_small - r.g2_big) / (1.0 / bs - 1.0 / bb));
    r.b_noise = r.g2 > 0.0 ? r.S / r.g2 : 0.0;
    return r;
}

} // namespace udpnet
