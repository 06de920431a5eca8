#pragma once

// The unrolled recovery network. One block per diffusion stride: row-wise
// layer normalization, a linear mix of the feature channels, optional FiLM
// modulation from mel features, then a windowed transformer applied over
// 50%-overlapped chunks of the frame axis. The unroll applies N = T/tau
// blocks; block n produces the estimate for timestep T - n*tau.

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "udpnet/audio.hpp"
#include "udpnet/rng.hpp"
#include "udpnet/tensor.hpp"

namespace udpnet {

struct ModelConfig {
    int filters = 32;  // latent feature channels (attention width)
    int kernel = 16;   // encoder kernel length
    int stride = 8;    // encoder hop
    int chunk = 8;     // transformer window (frames), 50% overlap
    int heads = 4;
    int ffn_dim = 64;
    int codebook_size = 64;
    int T = 1000;
    int tau = 125;
    bool per_layer = false; // false: one shared block for all layers
    bool film = false;      // mel-conditioned FiLM modulation
    int n_mels = 16;

    int layers() const { return T / tau; }
    int frames_for(int n_samples) const {
        if (n_samples < kernel)
            throw std::invalid_argument("ModelConfig: clip shorter than encoder kernel");
        return (n_samples - kernel) / stride + 1;
    }

    void validate() const {
        if (tau < 2) throw std::invalid_argument("model: tau must be >= 2");
        if (T % tau != 0) throw std::invalid_argument("model: T must be divisible by tau");
        if (filters % heads != 0)
            throw std::invalid_argument("model: filters must be divisible by heads");
        if (chunk < 2 || chunk % 2 != 0)
            throw std::invalid_argument("model: chunk must be even and >= 2");
    }
};

// ---- parameter initialization ----

namespace detail {

inline TensorPtr init_glorot(std::vector<int> shape, int fan_in, int fan_out,
                             uint64_t seed, const std::string& name) {
    RngStream rng(seed, "init." + name);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto t = make_tensor(std::move(shape), true);
    for (double& v : t->data) v = rng.uniform(-limit, limit);
    return t;
}

inline TensorPtr init_zeros(std::vector<int> shape) { return make_tensor(std::move(shape), true); }

inline TensorPtr init_ones(std::vector<int> shape) {
    auto t = make_tensor(std::move(shape), true);
    std::fill(t->data.begin(), t->data.end(), 1.0);
    return t;
}

} // namespace detail

using ParamList = std::vector<std::pair<std::string, TensorPtr>>;

inline void freeze_params(const ParamList& params) {
    for (const auto& [name, p] : params) {
        p->requires_grad = false;
        p->grad.clear();
    }
}

// ---- autoencoder ----

// Strided 1-D convolution encoder with ReLU, and its transposed-convolution
// decoder. The latent is [frames x filters].
struct Autoencoder {
    int filters = 0, kernel = 0, stride = 0;
    TensorPtr enc_kernel, enc_bias, dec_kernel, dec_bias;

    Autoencoder() = default;
    Autoencoder(const ModelConfig& cfg, uint64_t seed)
        : filters(cfg.filters), kernel(cfg.kernel), stride(cfg.stride) {
        enc_kernel = detail::init_glorot({filters, 1, kernel}, kernel, filters, seed,
                                         "encoder.kernel");
        enc_bias = detail::init_zeros({filters});
        dec_kernel = detail::init_glorot({filters, 1, kernel}, filters, kernel, seed,
                                         "decoder.kernel");
        dec_bias = detail::init_zeros({1});
    }

    TensorPtr encode(const TensorPtr& wave) const {
        auto y = conv1d(wave, enc_kernel, stride);
        return relu(add_rows(transpose2d(y), enc_bias));
    }

    TensorPtr encode_clip(const AudioClip& clip) const {
        auto wave = constant({1, static_cast<int>(clip.samples.size())}, clip.samples);
        return encode(wave);
    }

    TensorPtr decode(const TensorPtr& latent) const {
        auto y = transposed_conv1d(transpose2d(latent), dec_kernel, stride);
        return add_broadcast_scalar(y, dec_bias);
    }

    ParamList parameters() const {
        return {{"encoder.kernel", enc_kernel},
                {"encoder.bias", enc_bias},
                {"decoder.kernel", dec_kernel},
                {"decoder.bias", dec_bias}};
    }

    void freeze() { freeze_params(parameters()); }
};

// ---- transformer block ----

struct AttnParams {
    // No key bias: a shared shift on every key moves each query's scores
    // uniformly and the row softmax cancels it, so the parameter could
    // never train.
    TensorPtr wq, bq, wk, wv, bv, wo, bo; // attention projections
    TensorPtr w1, b1, w2, b2;             // feed-forward
};

inline AttnParams make_attn_params(int h, int ffn_dim, uint64_t seed,
                                   const std::string& prefix) {
    AttnParams p;
    p.wq = detail::init_glorot({h, h}, h, h, seed, prefix + ".wq");
    p.bq = detail::init_zeros({h});
    p.wk = detail::init_glorot({h, h}, h, h, seed, prefix + ".wk");
    p.wv = detail::init_glorot({h, h}, h, h, seed, prefix + ".wv");
    p.bv = detail::init_zeros({h});
    p.wo = detail::init_glorot({h, h}, h, h, seed, prefix + ".wo");
    p.bo = detail::init_zeros({h});
    p.w1 = detail::init_glorot({h, ffn_dim}, h, ffn_dim, seed, prefix + ".w1");
    p.b1 = detail::init_zeros({ffn_dim});
    p.w2 = detail::init_glorot({ffn_dim, h}, ffn_dim, h, seed, prefix + ".w2");
    p.b2 = detail::init_zeros({h});
    return p;
}

inline void collect_attn_params(ParamList& out, const AttnParams& p,
                                const std::string& prefix) {
    out.emplace_back(prefix + ".wq", p.wq);
    out.emplace_back(prefix + ".bq", p.bq);
    out.emplace_back(prefix + ".wk", p.wk);
    out.emplace_back(prefix + ".wv", p.wv);
    out.emplace_back(prefix + ".bv", p.bv);
    out.emplace_back(prefix + ".wo", p.wo);
    out.emplace_back(prefix + ".bo", p.bo);
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
}

// Scaled dot-product attention over the rows of x with learned projections.
inline TensorPtr multihead_attention(const TensorPtr& x, const AttnParams& p, int heads) {
    const int h = x->shape[1];
    const int dh = h / heads;
    auto q = add_rows(matmul(x, p.wq), p.bq);
    auto k = matmul(x, p.wk);
    auto v = add_rows(matmul(x, p.wv), p.bv);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorPtr> ctx;
    ctx.reserve(heads);
    for (int i = 0; i < heads; ++i) {
        auto qh = slice_cols(q, i * dh, (i + 1) * dh);
        auto kh = slice_cols(k, i * dh, (i + 1) * dh);
        auto vh = slice_cols(v, i * dh, (i + 1) * dh);
        auto scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_dh);
        ctx.push_back(matmul(softmax_rows(scores), vh));
    }
    return add_rows(matmul(concat_cols(ctx), p.wo), p.bo);
}

// Attention and feed-forward sublayers, each wrapped in a residual
// connection.
inline TensorPtr transformer_block(const TensorPtr& x, const AttnParams& p, int heads) {
    auto a = add(x, multihead_attention(x, p, heads));
    auto ff = add_rows(matmul(relu(add_rows(matmul(a, p.w1), p.b1)), p.w2), p.b2);
    return add(a, ff);
}

// ---- FiLM conditioning ----

struct FilmParams {
    TensorPtr wg, bg, wb, bb; // n_mels -> filters heads, zero-initialized
};

inline FilmParams make_film_params(int n_mels, int h) {
    FilmParams p;
    p.wg = detail::init_zeros({n_mels, h});
    p.bg = detail::init_zeros({h});
    p.wb = detail::init_zeros({n_mels, h});
    p.bb = detail::init_zeros({h});
    return p;
}

struct FilmSignal {
    TensorPtr gamma, beta; // each [frames x filters]
};

// Linear-interpolation resampling matrix mapping src_rows to dst_rows.
inline TensorPtr resample_rows_matrix(int dst_rows, int src_rows) {
    std::vector<double> R(static_cast<size_t>(dst_rows) * src_rows, 0.0);
    for (int i = 0; i < dst_rows; ++i) {
        double pos = 0.0;
        if (dst_rows > 1 && src_rows > 1)
            pos = static_cast<double>(i) * (src_rows - 1) / (dst_rows - 1);
        const int j = std::min(static_cast<int>(pos), src_rows - 1);
        const double w = pos - j;
        R[static_cast<size_t>(i) * src_rows + j] += 1.0 - w;
        if (w > 0.0 && j + 1 < src_rows)
            R[static_cast<size_t>(i) * src_rows + j + 1] += w;
    }
    return constant({dst_rows, src_rows}, std::move(R));
}

// Mel features -> per-frame (gamma, beta). Zero-initialized heads make this
// the identity modulation (gamma = 1, beta = 0) at initialization.
inline FilmSignal film_generator(const TensorPtr& mel, const FilmParams& p, int frames) {
    auto R = resample_rows_matrix(frames, mel->shape[0]);
    auto m = matmul(R, mel);
    FilmSignal s;
    s.gamma = shift(add_rows(matmul(m, p.wg), p.bg), 1.0);
    s.beta = add_rows(matmul(m, p.wb), p.bb);
    return s;
}

inline TensorPtr film_apply(const TensorPtr& x, const FilmSignal& s) {
    return add(mul(s.gamma, x), s.beta);
}

// ---- unroll ----

struct UnrollOutput {
    std::vector<TensorPtr> estimates; // estimates[n-1] ~ timestep T - n*tau
    int layers_applied = 0;

    const TensorPtr& x0_hat() const { return estimates.back(); }
};

// Anything that maps an initial latent through N successive estimates.
class Unroller {
public:
    virtual ~Unroller() = default;
    virtual UnrollOutput unroll(const TensorPtr& x_T, const TensorPtr* mel,
                                bool detach_between = false) const = 0;
    virtual int layer_count() const = 0;
};

struct BlockParams {
    TensorPtr ln_gain, ln_bias;
    TensorPtr lin_w, lin_b;
    AttnParams attn;
};

inline BlockParams make_block_params(int h, int ffn_dim, uint64_t seed,
                                     const std::string& prefix) {
    BlockParams b;
    b.ln_gain = detail::init_ones({h});
    b.ln_bias = detail::init_zeros({h});
    b.lin_w = detail::init_glorot({h, h}, h, h, seed, prefix + ".lin_w");
    b.lin_b = detail::init_zeros({h});
    b.attn = make_attn_params(h, ffn_dim, seed, prefix + ".attn");
    return b;
}

inline void collect_block_params(ParamList& out, const BlockParams& b,
                                 const std::string& prefix) {
    out.emplace_back(prefix + ".ln_gain", b.ln_gain);
    out.emplace_back(prefix + ".ln_bias", b.ln_bias);
    out.emplace_back(prefix + ".lin_w", b.lin_w);
    out.emplace_back(prefix + ".lin_b", b.lin_b);
    collect_attn_params(out, b.attn, prefix + ".attn");
}

inline TensorPtr apply_block(const TensorPtr& x, const BlockParams& bp, int chunk,
                             int heads, const FilmSignal* film) {
    const int f = x->shape[0];
    auto y = layer_norm_rows(x, bp.ln_gain, bp.ln_bias);
    y = add_rows(matmul(y, bp.lin_w), bp.lin_b);
    if (film) y = film_apply(y, *film);
    auto chunks = chunk_rows(y, chunk);
    std::vector<TensorPtr> outs;
    outs.reserve(chunks.size());
    for (const auto& c : chunks) outs.push_back(transformer_block(c, bp.attn, heads));
    return unchunk_rows(outs, f);
}

class UdpNet : public Unroller {
public:
    UdpNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const int n_blocks = cfg_.per_layer ? cfg_.layers() : 1;
        for (int i = 0; i < n_blocks; ++i)
            blocks_.push_back(make_block_params(
                cfg_.filters, cfg_.ffn_dim, seed,
                "block" + std::to_string(i)));
        if (cfg_.film) film_ = make_film_params(cfg_.n_mels, cfg_.filters);
    }

    const ModelConfig& config() const { return cfg_; }
    int layer_count() const override { return cfg_.layers(); }

    // mel: optional [mel_frames x n_mels] features for FiLM conditioning.
    UnrollOutput unroll(const TensorPtr& x_T, const TensorPtr* mel,
                        bool detach_between = false) const override {
        if (cfg_.film && mel == nullptr)
            throw std::invalid_argument("UdpNet: conditioned model requires mel features");
        std::optional<FilmSignal> film;
        if (cfg_.film) film = film_generator(*mel, *film_, x_T->shape[0]);
        UnrollOutput out;
        out.estimates.reserve(cfg_.layers());
        TensorPtr x = x_T;
        for (int n = 0; n < cfg_.layers(); ++n) {
            const BlockParams& bp = blocks_[cfg_.per_layer ? n : 0];
            x = apply_block(x, bp, cfg_.chunk, cfg_.heads, film ? &*film : nullptr);
            for (double v : x->data)
                if (!std::isfinite(v))
                    throw std::runtime_error("unroll: non-finite activation at layer " +
                                             std::to_string(n + 1));
            out.estimates.push_back(x);
            out.layers_applied++;
            if (detach_between && n + 1 < cfg_.layers()) x = detach(x);
        }
        return out;
    }

    // Sampling path: applies every layer but keeps only the running latent,
    // dropping each layer's graph once its value is consumed. Live memory
    // stays flat in the layer count, so deep unrolls stay cache-resident.
    // Returns the final clean-latent estimate as a plain value tensor.
    TensorPtr unroll_final(const TensorPtr& x_T, const TensorPtr* mel = nullptr) const {
        if (cfg_.film && mel == nullptr)
            throw std::invalid_argument("UdpNet: conditioned model requires mel features");
        std::optional<FilmSignal> film;
        if (cfg_.film) film = film_generator(*mel, *film_, x_T->shape[0]);
        TensorPtr x = x_T;
        for (int n = 0; n < cfg_.layers(); ++n) {
            const BlockParams& bp = blocks_[cfg_.per_layer ? n : 0];
            x = apply_block(x, bp, cfg_.chunk, cfg_.heads, film ? &*film : nullptr);
            for (double v : x->data)
                if (!std::isfinite(v))
                    throw std::runtime_error("unroll: non-finite activation at layer " +
                                             std::to_string(n + 1));
            x = detach(x);
        }
        return x;
    }

    ParamList parameters() const {
        ParamList out;
        for (size_t i = 0; i < blocks_.size(); ++i)
            collect_block_params(out, blocks_[i],
                                 "block" + std::to_string(i));
        if (film_) {
            out.emplace_back("film.wg", film_->wg);
            out.emplace_back("film.bg", film_->bg);
            out.emplace_back("film.wb", film_->wb);
            out.emplace_back("film.bb", film_->bb);
        }
        return out;
    }

private:
    ModelConfig cfg_;
    std::vector<BlockParams> blocks_;
    std::optional<FilmParams> film_;
};

} // namespace udpnet
