#pragma once

// Latent codebook: k-means fitting, nearest-entry quantization, and the
// discretized reconstruction likelihood that scores a predicted latent
// against the codebook entries of the clean latent.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "udpnet/rng.hpp"
#include "udpnet/tensor.hpp"

namespace udpnet {

struct Codebook {
    int K = 0;
    int dim = 0;
    std::vector<double> entries; // row-major [K x dim]

    const double* entry(int k) const { return entries.data() + static_cast<size_t>(k) * dim; }
};

struct QuantizedLatent {
    std::vector<int> indices; // one codebook index per row
};

namespace detail {

inline double sq_dist(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        s += diff * diff;
    }
    return s;
}

} // namespace detail

// Nearest entry by squared distance; ties break to the lowest index.
inline int quantize_row(const Codebook& cb, const double* row) {
    int best = 0;
    double best_d = detail::sq_dist(row, cb.entry(0), cb.dim);
    for (int k = 1; k < cb.K; ++k) {
        const double d = detail::sq_dist(row, cb.entry(k), cb.dim);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

inline QuantizedLatent quantize(const Codebook& cb, const std::vector<double>& rows,
                                int n_rows) {
    if (cb.K < 1) throw std::invalid_argument("quantize: empty codebook");
    if (static_cast<size_t>(n_rows) * cb.dim != rows.size())
        throw std::invalid_argument("quantize: row buffer size mismatch");
    QuantizedLatent q;
    q.indices.reserve(n_rows);
    for (int i = 0; i < n_rows; ++i)
        q.indices.push_back(quantize_row(cb, rows.data() + static_cast<size_t>(i) * cb.dim));
    return q;
}

inline double kmeans_distortion(const Codebook& cb, const std::vector<double>& rows,
                                int n_rows) {
    double total = 0.0;
    for (int i = 0; i < n_rows; ++i) {
        const double* r = rows.data() + static_cast<size_t>(i) * cb.dim;
        total += detail::sq_dist(r, cb.entry(quantize_row(cb, r)), cb.dim);
    }
    return total;
}

// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded to
// the point farthest from its current center. Deterministic given the stream.
// history, when given, records the distortion after every Lloyd iteration;
// the sequence is non-increasing.
inline Codebook kmeans_fit(const std::vector<double>& rows, int n_rows, int dim, int K,
                           RngStream& rng, int iters = 50,
                           std::vector<double>* history = nullptr) {
    if (K < 1 || n_rows < K)
        throw std::invalid_argument("kmeans_fit: need at least K rows");
    Codebook cb;
    cb.K = K;
    cb.dim = dim;
    cb.entries.assign(static_cast<size_t>(K) * dim, 0.0);

    auto row = [&](int i) { return rows.data() + static_cast<size_t>(i) * dim; };

    // k-means++ seeding
    {
        const int first = static_cast<int>(rng.uniform_int(0, n_rows - 1));
        std::copy_n(row(first), dim, cb.entries.begin());
        std::vector<double> d2(n_rows);
        for (int c = 1; c < K; ++c) {
            double sum = 0.0;
            for (int i = 0; i < n_rows; ++i) {
                double best = std::numeric_limits<double>::max();
                for (int j = 0; j < c; ++j)
                    best = std::min(best, detail::sq_dist(row(i), cb.entry(j), dim));
                d2[i] = best;
                sum += best;
            }
            int pick = 0;
            if (sum > 0.0) {
                const double r = rng.uniform() * sum;
                double acc = 0.0;
                for (int i = 0; i < n_rows; ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = static_cast<int>(rng.uniform_int(0, n_rows - 1));
            }
            std::copy_n(row(pick), dim, cb.entries.begin() + static_cast<size_t>(c) * dim);
        }
    }

    std::vector<int> assign(n_rows, 0);
    std::vector<int> counts(K, 0);
    for (int it = 0; it < iters; ++it) {
        bool moved = false;
        for (int i = 0; i < n_rows; ++i) {
            const int a = quantize_row(cb, row(i));
            if (a != assign[i]) moved = true;
            assign[i] = a;
        }
        std::vector<double> sums(static_cast<size_t>(K) * dim, 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n_rows; ++i) {
            counts[assign[i]]++;
            const double* r = row(i);
            double* s = sums.data() + static_cast<size_t>(assign[i]) * dim;
            for (int d = 0; d < dim; ++d) s[d] += r[d];
        }
        for (int k = 0; k < K; ++k) {
            if (counts[k] == 0) {
                // reseed to the row farthest from its assigned center
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n_rows; ++i) {
                    const double d =
                        detail::sq_dist(row(i), cb.entry(assign[i]), dim);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::copy_n(row(far), dim,
                            cb.entries.begin() + static_cast<size_t>(k) * dim);
                moved = true;
            } else {
                double* e = cb.entries.data() + static_cast<size_t>(k) * dim;
                const double* s = sums.data() + static_cast<size_t>(k) * dim;
                for (int d = 0; d < dim; ++d) e[d] = s[d] / counts[k];
            }
        }
        if (history) history->push_back(kmeans_distortion(cb, rows, n_rows));
        if (!moved && it > 0) break;
    }
    return cb;
}

// ---- reconstruction likelihood ----

enum class LikelihoodKind { cdf_bins, softmax };

struct L0Config {
    LikelihoodKind kind = LikelihoodKind::cdf_bins;
    double delta = 0.0; // bin width; caller sets (data range / 256) by default
    double sigma = 1.0; // scale of the per-dimension Gaussian
    double floor = 1e-12;
};

// Negative log likelihood of the target codebook rows under the predicted
// latent. cdf_bins integrates a Gaussian around each target coordinate over a
// bin of width delta; softmax scores entries by negative squared distance.
inline TensorPtr l0_negative_log_likelihood(const TensorPtr& x_hat, const Codebook& cb,
                                            const std::vector<int>& indices,
                                            const L0Config& cfg) {
    detail::require(x_hat->shape.size() == 2 && x_hat->shape[1] == cb.dim,
                    "l0_negative_log_likelihood", "latent/codebook dim mismatch");
    const int f = x_hat->shape[0];
    detail::require(static_cast<int>(indices.size()) == f,
                    "l0_negative_log_likelihood", "one index per row required");

    if (cfg.kind == LikelihoodKind::softmax) {
        auto z = constant({cb.K, cb.dim}, cb.entries);
        auto logits = neg_sq_dist_logits(x_hat, z);
        return scale(log_softmax_pick(logits, indices), -1.0);
    }

    detail::require(cfg.delta > 0.0, "l0_negative_log_likelihood", "delta must be positive");
    detail::require(cfg.sigma > 0.0, "l0_negative_log_likelihood", "sigma must be positive");
    std::vector<double> targets(static_cast<size_t>(f) * cb.dim);
    for (int i = 0; i < f; ++i)
        std::copy_n(cb.entry(indices[i]), cb.dim,
                    targets.begin() + static_cast<size_t>(i) * cb.dim);
    auto z = constant({f, cb.dim}, std::move(targets));
    const double half = cfg.delta / 2.0;
    const double inv_sigma = 1.0 / cfg.sigma;
    // P(bin) = Phi((z + d/2 - x)/sigma) - Phi((z - d/2 - x)/sigma)
    auto upper = normal_cdf(scale(shift(sub(z, x_hat), half), inv_sigma));
    auto lower = normal_cdf(scale(shift(sub(z, x_hat), -half), inv_sigma));
    auto p = clamp_min(sub(upper, lower), cfg.floor);
    return scale(sum_all(log_elem(p)), -1.0);
}

} // namespace udpnet
