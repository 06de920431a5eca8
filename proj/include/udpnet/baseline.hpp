#pragma once

// Step-indexed reference model: a single recovery block conditioned on a
// sinusoidal timestep embedding, trained to predict the clean latent from
// any noisy latent, plus ancestral sampling and the error accumulation
// comparison against the unrolled network.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "udpnet/diffusion.hpp"
#include "udpnet/model.hpp"
#include "udpnet/training.hpp"

namespace udpnet {

inline constexpr int kTimeEmbedDim = 64;

inline TensorPtr time_embedding(int t, int dim = kTimeEmbedDim) {
    std::vector<double> e(dim, 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * i / half);
        e[2 * i] = std::sin(t * w);
        e[2 * i + 1] = std::cos(t * w);
    }
    return constant({1, dim}, std::move(e));
}

// Same block architecture as one unrolled layer; the timestep enters as a
// learned projection of the sinusoidal embedding added after the input
// linear layer.
class BaselineNet {
public:
    BaselineNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        block_ = make_block_params(cfg_.filters, cfg_.ffn_dim, seed, "block0");
        time_w_ = detail::init_glorot({kTimeEmbedDim, cfg_.filters}, kTimeEmbedDim,
                                      cfg_.filters, seed, "time_embed.w");
        time_b_ = detail::init_zeros({cfg_.filters});
    }

    const ModelConfig& config() const { return cfg_; }

    TensorPtr predict(const TensorPtr& x_t, int t) const {
        const int f = x_t->shape[0];
        auto y = layer_norm_rows(x_t, block_.ln_gain, block_.ln_bias);
        y = add_rows(matmul(y, block_.lin_w), block_.lin_b);
        auto emb = add_rows(matmul(time_embedding(t), time_w_), time_b_);
        y = add_rows(y, emb);
        auto chunks = chunk_rows(y, cfg_.chunk);
        std::vector<TensorPtr> outs;
        outs.reserve(chunks.size());
        for (const auto& c : chunks)
            outs.push_back(transformer_block(c, block_.attn, cfg_.heads));
        return unchunk_rows(outs, f);
    }

    // Prediction as a plain function of data, for sampling and comparisons.
    std::function<std::vector<double>(const std::vector<double>&, int)> predictor(
        int frames) const {
        return [this, frames](const std::vector<double>& x_t, int t) {
            auto xt = constant({frames, cfg_.filters}, x_t);
            return predict(xt, t)->data;
        };
    }

    ParamList parameters() const {
        ParamList out;
        collect_block_params(out, block_, "block0");
        out.emplace_back("time_embed.w", time_w_);
        out.emplace_back("time_embed.b", time_b_);
        return out;
    }

private:
    ModelConfig cfg_;
    BlockParams block_;
    TensorPtr time_w_, time_b_;
};

// Mean squared error against the clean latent at a uniformly drawn timestep
// (t in [2, T], fresh noise per example).
inline LossValue baseline_loss(const BaselineNet& net, const std::vector<Example>& batch,
                               const NoiseSchedule& s, uint64_t seed, long step) {
    if (batch.empty()) throw std::invalid_argument("baseline_loss: empty batch");
    LossValue lv;
    TensorPtr total;
    for (size_t e = 0; e < batch.size(); ++e) {
        const uint64_t idx =
            (static_cast<uint64_t>(step) << 16) | static_cast<uint64_t>(e);
        RngStream t_stream(seed, "baseline.t", idx);
        const int t = static_cast<int>(t_stream.uniform_int(2, s.T));
        RngStream eps_stream(seed, "baseline.eps", idx);
        std::vector<double> eps(batch[e].x0_data.size());
        eps_stream.fill_gaussian(eps);
        auto x_t = constant(batch[e].x0->shape, forward_sample(batch[e].x0_data, s, t, eps));
        auto term = sq_norm(sub(net.predict(x_t, t), batch[e].x0));
        total = total ? add(total, term) : term;
    }
    lv.loss = scale(total, 1.0 / static_cast<double>(batch.size()));
    lv.breakdown.total = lv.loss->value();
    return lv;
}

// ---- ancestral sampling ----

struct LatentRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct AncestralResult {
    std::vector<double> final_latent;
    std::vector<std::vector<double>> trajectory; // state after each listed step
};

// Classic reverse-process sampling: at each listed timestep, predict the
// clean latent, form the posterior mean, and add posterior noise except at
// the final step. steps must strictly decrease and end at 1. When x_init is
// given the walk starts from it instead of a fresh standard-normal draw.
inline AncestralResult ancestral_sample(
    const std::function<std::vector<double>(const std::vector<double>&, int)>& predict_x0,
    const NoiseSchedule& s, const std::vector<int>& steps, int dim,
    const LatentRange* clip_range, uint64_t seed,
    const std::vector<double>* x_init = nullptr) {
    if (steps.empty() || steps.back() != 1)
        throw std::invalid_argument("ancestral_sample: steps must end at 1");
    for (size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1 || steps[i] > s.T)
            throw std::invalid_argument("ancestral_sample: step out of range");
        if (i > 0 && steps[i] >= steps[i - 1])
            throw std::invalid_argument("ancestral_sample: steps must strictly decrease");
    }
    AncestralResult r;
    std::vector<double> x(dim);
    if (x_init) {
        if (static_cast<int>(x_init->size()) != dim)
            throw std::invalid_argument("ancestral_sample: x_init dimension mismatch");
        x = *x_init;
    } else {
        RngStream init(seed, "sample.init");
        init.fill_gaussian(x);
    }
    std::vector<double> zeta(dim);
    for (size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        std::vector<double> x0_hat = predict_x0(x, t);
        if (clip_range)
            for (double& v : x0_hat) v = std::clamp(v, clip_range->lo, clip_range->hi);
        const PosteriorCoeffs c = posterior_coeffs(s, t);
        const bool final_step = (i + 1 == steps.size());
        for (int d = 0; d < dim; ++d) x[d] = c.c_xt * x[d] + c.c_x0 * x0_hat[d];
        if (!final_step) {
            RngStream noise(seed, "sample.noise", i);
            noise.fill_gaussian(zeta);
            const double sd = std::sqrt(c.sigma_q);
            for (int d = 0; d < dim; ++d) x[d] += sd * zeta[d];
        }
        r.trajectory.push_back(x);
    }
    r.final_latent = x;
    return r;
}

// ---- error accumulation comparison ----

struct CompareResult {
    ErrorCurve unrolled;              // one term per intermediate layer
    ErrorCurve baseline;              // one term per timestep, t = T..2
    double baseline_restricted = 0.0; // baseline error summed over the layer timesteps
};

// Per-term squared errors along the same forward chain for both models,
// averaged over the test set. Both sides must run on the identical schedule.
inline CompareResult compare_accumulation(
    const Unroller& net, const NoiseSchedule& net_sched,
    const std::function<std::vector<double>(const std::vector<double>&, int)>& baseline,
    const NoiseSchedule& base_sched, const LayerMap& map,
    const std::vector<Example>& testset, uint64_t seed) {
    if (net_sched.hash() != base_sched.hash())
        throw std::invalid_argument(
            "compare_accumulation: models were built on different schedules");
    if (testset.empty())
        throw std::invalid_argument("compare_accumulation: empty test set");
    const NoiseSchedule& s = net_sched;

    std::vector<double> net_terms(map.N > 0 ? map.N - 1 : 0, 0.0);
    std::vector<double> base_terms(s.T - 1, 0.0); // index i -> t = T - i
    for (size_t e = 0; e < testset.size(); ++e) {
        const Example& ex = testset[e];
        std::vector<double> eps(ex.x0_data.size());
        RngStream eps_stream(seed, "compare.eps", e);
        eps_stream.fill_gaussian(eps);

        auto x_T = constant(ex.x0->shape, forward_sample(ex.x0_data, s, s.T, eps));
        auto out = net.unroll(x_T, ex.mel ? &ex.mel : nullptr);
        for (int n = 1; n <= map.N - 1; ++n) {
            const auto target = forward_sample(ex.x0_data, s, map.timesteps[n - 1], eps);
            const auto& est = out.estimates[n - 1]->data;
            double sq = 0.0;
            for (size_t d = 0; d < target.size(); ++d) {
                const double diff = est[d] - target[d];
                sq += diff * diff;
            }
            net_terms[n - 1] += sq;
        }

        for (int t = s.T; t >= 2; --t) {
            const auto x_t = forward_sample(ex.x0_data, s, t, eps);
            const auto pred = baseline(x_t, t);
            double sq = 0.0;
            for (size_t d = 0; d < pred.size(); ++d) {
                const double diff = pred[d] - ex.x0_data[d];
                sq += diff * diff;
            }
            base_terms[s.T - t] += sq;
        }
    }
    const double inv = 1.0 / static_cast<double>(testset.size());
    for (double& v : net_terms) v *= inv;
    for (double& v : base_terms) v *= inv;

    CompareResult r;
    std::vector<int> net_ts(map.timesteps.begin(),
                            map.timesteps.begin() + (map.N > 0 ? map.N - 1 : 0));
    r.unrolled = accumulate_errors(net_ts, net_terms);
    std::vector<int> base_ts;
    base_ts.reserve(s.T - 1);
    for (int t = s.T; t >= 2; --t) base_ts.push_back(t);
    r.baseline = accumulate_errors(base_ts, base_terms);
    for (int n = 1; n <= map.N - 1; ++n)
        r.baseline_restricted += base_terms[s.T - map.timesteps[n - 1]];
    return r;
}

} // namespace udpnet
