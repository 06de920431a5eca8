#pragma once

// Reverse-mode automatic differentiation on dense double tensors.
//
// Graphs are built eagerly: every op returns a new node holding its value and
// a closure that routes gradients to its parents. backward() on a scalar
// fills .grad for every reachable node that requires gradients. Ops are pure
// functions of their inputs and are bitwise deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace udpnet {

struct TensorNode;
using TensorPtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    size_t numel() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double value() const { return data[0]; }
};

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] inline void op_fail(const std::string& op, const std::string& why) {
    throw std::invalid_argument(op + ": " + why);
}

inline void require(bool ok, const std::string& op, const std::string& why) {
    if (!ok) op_fail(op, why);
}

} // namespace detail

inline TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    t->data.assign(t->numel(), 0.0);
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->numel(), 0.0);
    return t;
}

inline TensorPtr constant(std::vector<int> shape, std::vector<double> values) {
    auto t = make_tensor(std::move(shape));
    detail::require(values.size() == t->numel(), "constant", "value count mismatch");
    t->data = std::move(values);
    return t;
}

inline TensorPtr scalar_const(double v) { return constant({1}, {v}); }

inline TensorPtr leaf(std::vector<int> shape, std::vector<double> values) {
    auto t = make_tensor(std::move(shape), true);
    detail::require(values.size() == t->numel(), "leaf", "value count mismatch");
    t->data = std::move(values);
    return t;
}

namespace detail {

// Result node wired to parents; grad buffer allocated when needed.
inline TensorPtr op_result(std::vector<int> shape, std::vector<TensorPtr> parents) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto t = make_tensor(std::move(shape), rg);
    t->parents = std::move(parents);
    return t;
}

inline void accumulate(const TensorPtr& t, const std::vector<double>& g) {
    if (!t->requires_grad) return;
    double* __restrict dst = t->grad.data();
    const double* __restrict src = g.data();
    const size_t n = t->grad.size();
    for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

} // namespace detail

// ---- elementwise ----

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::require(a->shape == b->shape, "add",
                    "shape mismatch " + detail::shape_str(a->shape) + " vs " +
                        detail::shape_str(b->shape));
    auto out = detail::op_result(a->shape, {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, b] {
            detail::accumulate(a, self->grad);
            detail::accumulate(b, self->grad);
        };
    }
    return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    detail::require(a->shape == b->shape, "sub",
                    "shape mismatch " + detail::shape_str(a->shape) + " vs " +
                        detail::shape_str(b->shape));
    auto out = detail::op_result(a->shape, {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, b] {
            detail::accumulate(a, self->grad);
            if (b->requires_grad) {
                for (size_t i = 0; i < self->grad.size(); ++i) b->grad[i] -= self->grad[i];
            }
        };
    }
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::require(a->shape == b->shape, "mul",
                    "shape mismatch " + detail::shape_str(a->shape) + " vs " +
                        detail::shape_str(b->shape));
    auto out = detail::op_result(a->shape, {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, b] {
            if (a->requires_grad)
                for (size_t i = 0; i < self->grad.size(); ++i)
                    a->grad[i] += self->grad[i] * b->data[i];
            if (b->requires_grad)
                for (size_t i = 0; i < self->grad.size(); ++i)
                    b->grad[i] += self->grad[i] * a->data[i];
        };
    }
    return out;
}

inline TensorPtr scale(const TensorPtr& a, double c) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = c * a->data[i];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, c] {
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += c * self->grad[i];
        };
    }
    return out;
}

inline TensorPtr shift(const TensorPtr& a, double c) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + c;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] { detail::accumulate(a, self->grad); };
    }
    return out;
}

inline TensorPtr relu(const TensorPtr& a) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] {
            // subgradient 0 at the kink
            for (size_t i = 0; i < self->grad.size(); ++i)
                if (a->data[i] > 0.0) a->grad[i] += self->grad[i];
        };
    }
    return out;
}

inline TensorPtr log_elem(const TensorPtr& a) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = std::log(a->data[i]);
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] {
            for (size_t i = 0; i < self->grad.size(); ++i)
                a->grad[i] += self->grad[i] / a->data[i];
        };
    }
    return out;
}

inline TensorPtr clamp_min(const TensorPtr& a, double floor) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->data[i] = std::max(a->data[i], floor);
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, floor] {
            for (size_t i = 0; i < self->grad.size(); ++i)
                if (a->data[i] > floor) a->grad[i] += self->grad[i];
        };
    }
    return out;
}

// Standard normal CDF, elementwise.
inline TensorPtr normal_cdf(const TensorPtr& a) {
    auto out = detail::op_result(a->shape, {a});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i)
        out->data[i] = 0.5 * std::erfc(-a->data[i] * 0.7071067811865475244);
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] {
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            for (size_t i = 0; i < self->grad.size(); ++i) {
                const double x = a->data[i];
                a->grad[i] += self->grad[i] * inv_sqrt_2pi * std::exp(-0.5 * x * x);
            }
        };
    }
    return out;
}

// ---- reductions ----

inline TensorPtr sum_all(const TensorPtr& a) {
    auto out = detail::op_result({1}, {a});
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] {
            const double g = self->grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        };
    }
    return out;
}

// Sum of squared entries.
inline TensorPtr sq_norm(const TensorPtr& a) {
    auto out = detail::op_result({1}, {a});
    double s = 0.0;
    for (double v : a->data) s += v * v;
    out->data[0] = s;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a] {
            const double g = self->grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i)
                a->grad[i] += 2.0 * g * a->data[i];
        };
    }
    return out;
}

// ---- linear algebra ----

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    detail::require(a->shape.size() == 2 && b->shape.size() == 2, "matmul", "rank-2 required");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    detail::require(b->shape[0] == k, "matmul",
                    "inner dim mismatch " + detail::shape_str(a->shape) + " vs " +
                        detail::shape_str(b->shape));
    auto out = detail::op_result({m, n}, {a, b});
    {
        const double* __restrict A = a->data.data();
        const double* __restrict B = b->data.data();
        double* __restrict C = out->data.data();
        for (int i = 0; i < m; ++i) {
            double* __restrict Ci = C + static_cast<size_t>(i) * n;
            const double* __restrict Ai = A + static_cast<size_t>(i) * k;
            for (int l = 0; l < k; ++l) {
                const double av = Ai[l];
                const double* __restrict Bl = B + static_cast<size_t>(l) * n;
                for (int j = 0; j < n; ++j) Ci[j] += av * Bl[j];
            }
        }
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, b, m, k, n] {
            const double* __restrict G = self->grad.data();
            if (a->requires_grad) {
                // dA = G * B^T
                const double* __restrict B = b->data.data();
                double* __restrict dA = a->grad.data();
                for (int i = 0; i < m; ++i) {
                    const double* __restrict Gi = G + static_cast<size_t>(i) * n;
                    double* __restrict dAi = dA + static_cast<size_t>(i) * k;
                    for (int l = 0; l < k; ++l) {
                        const double* __restrict Bl = B + static_cast<size_t>(l) * n;
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += Gi[j] * Bl[j];
                        dAi[l] += s;
                    }
                }
            }
            if (b->requires_grad) {
                // dB = A^T * G
                const double* __restrict A = a->data.data();
                double* __restrict dB = b->grad.data();
                for (int i = 0; i < m; ++i) {
                    const double* __restrict Ai = A + static_cast<size_t>(i) * k;
                    const double* __restrict Gi = G + static_cast<size_t>(i) * n;
                    for (int l = 0; l < k; ++l) {
                        const double av = Ai[l];
                        double* __restrict dBl = dB + static_cast<size_t>(l) * n;
                        for (int j = 0; j < n; ++j) dBl[j] += av * Gi[j];
                    }
                }
            }
        };
    }
    return out;
}

inline TensorPtr transpose2d(const TensorPtr& a) {
    detail::require(a->shape.size() == 2, "transpose2d", "rank-2 required");
    const int m = a->shape[0], n = a->shape[1];
    auto out = detail::op_result({n, m}, {a});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<size_t>(j) * m + i] = a->data[static_cast<size_t>(i) * n + j];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, a, m, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<size_t>(i) * n + j] +=
                        self->grad[static_cast<size_t>(j) * m + i];
        };
    }
    return out;
}

// Broadcast-add a length-n vector to every row of an [m x n] matrix.
inline TensorPtr add_rows(const TensorPtr& x, const TensorPtr& b) {
    detail::require(x->shape.size() == 2, "add_rows", "rank-2 required");
    const int m = x->shape[0], n = x->shape[1];
    detail::require(static_cast<int>(b->numel()) == n, "add_rows",
                    "bias length " + std::to_string(b->numel()) + " != cols " + std::to_string(n));
    auto out = detail::op_result(x->shape, {x, b});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<size_t>(i) * n + j] =
                x->data[static_cast<size_t>(i) * n + j] + b->data[j];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, b, m, n] {
            detail::accumulate(x, self->grad);
            if (b->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        b->grad[j] += self->grad[static_cast<size_t>(i) * n + j];
            }
        };
    }
    return out;
}

// Add a single learned scalar to every entry.
inline TensorPtr add_broadcast_scalar(const TensorPtr& x, const TensorPtr& s) {
    detail::require(s->numel() == 1, "add_broadcast_scalar", "scalar required");
    auto out = detail::op_result(x->shape, {x, s});
    const double c = s->data[0];
    for (size_t i = 0; i < out->numel(); ++i) out->data[i] = x->data[i] + c;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, s] {
            detail::accumulate(x, self->grad);
            if (s->requires_grad) {
                double g = 0.0;
                for (double v : self->grad) g += v;
                s->grad[0] += g;
            }
        };
    }
    return out;
}

// ---- rows/cols restructuring ----

inline TensorPtr slice_cols(const TensorPtr& x, int c0, int c1) {
    detail::require(x->shape.size() == 2, "slice_cols", "rank-2 required");
    const int m = x->shape[0], n = x->shape[1];
    detail::require(0 <= c0 && c0 < c1 && c1 <= n, "slice_cols", "bad column range");
    const int w = c1 - c0;
    auto out = detail::op_result({m, w}, {x});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out->data[static_cast<size_t>(i) * w + j] =
                x->data[static_cast<size_t>(i) * n + c0 + j];
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, m, n, c0, w] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    x->grad[static_cast<size_t>(i) * n + c0 + j] +=
                        self->grad[static_cast<size_t>(i) * w + j];
        };
    }
    return out;
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& xs) {
    detail::require(!xs.empty(), "concat_cols", "empty input");
    const int m = xs[0]->shape[0];
    int n = 0;
    for (const auto& x : xs) {
        detail::require(x->shape.size() == 2 && x->shape[0] == m, "concat_cols",
                        "row mismatch");
        n += x->shape[1];
    }
    auto out = detail::op_result({m, n}, xs);
    int off = 0;
    for (const auto& x : xs) {
        const int w = x->shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out->data[static_cast<size_t>(i) * n + off + j] =
                    x->data[static_cast<size_t>(i) * w + j];
        off += w;
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, xs, m, n] {
            int off2 = 0;
            for (const auto& x : xs) {
                const int w = x->shape[1];
                if (x->requires_grad) {
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            x->grad[static_cast<size_t>(i) * w + j] +=
                                self->grad[static_cast<size_t>(i) * n + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return out;
}

// ---- normalization / softmax ----

inline TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gain,
                                 const TensorPtr& bias, double eps = 1e-5) {
    detail::require(x->shape.size() == 2, "layer_norm_rows", "rank-2 required");
    const int m = x->shape[0], n = x->shape[1];
    detail::require(static_cast<int>(gain->numel()) == n &&
                        static_cast<int>(bias->numel()) == n,
                    "layer_norm_rows", "gain/bias length != cols");
    auto out = detail::op_result(x->shape, {x, gain, bias});
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (int i = 0; i < m; ++i) {
        const double* row = x->data.data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<size_t>(i) * n + j] = xh;
            out->data[static_cast<size_t>(i) * n + j] = xh * gain->data[j] + bias->data[j];
        }
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, gain, bias, xhat, inv_std, m, n] {
            for (int i = 0; i < m; ++i) {
                const double* g = self->grad.data() + static_cast<size_t>(i) * n;
                const double* xh = xhat->data() + static_cast<size_t>(i) * n;
                if (gain->requires_grad)
                    for (int j = 0; j < n; ++j) gain->grad[j] += g[j] * xh[j];
                if (bias->requires_grad)
                    for (int j = 0; j < n; ++j) bias->grad[j] += g[j];
                if (x->requires_grad) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dxh = g[j] * gain->data[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= n;
                    mean_dxh_xh /= n;
                    const double is = (*inv_std)[i];
                    double* dx = x->grad.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) {
                        const double dxh = g[j] * gain->data[j];
                        dx[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        };
    }
    return out;
}

inline TensorPtr softmax_rows(const TensorPtr& x) {
    detail::require(x->shape.size() == 2, "softmax_rows", "rank-2 required");
    const int m = x->shape[0], n = x->shape[1];
    auto out = detail::op_result(x->shape, {x});
    for (int i = 0; i < m; ++i) {
        const double* row = x->data.data() + static_cast<size_t>(i) * n;
        double* orow = out->data.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= z;
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, m, n] {
            for (int i = 0; i < m; ++i) {
                const double* y = self->data.data() + static_cast<size_t>(i) * n;
                const double* g = self->grad.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += g[j] * y[j];
                double* dx = x->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return out;
}

// ---- convolution ----

// 1-D convolution of a single-channel signal [1 x L] with F kernels
// [F x 1 x k] at the given stride. Output [F x T'] with T' = (L-k)/stride + 1.
inline TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernel, int stride) {
    detail::require(input->shape.size() == 2 && input->shape[0] == 1, "conv1d",
                    "input must be [1 x L]");
    detail::require(kernel->shape.size() == 3 && kernel->shape[1] == 1, "conv1d",
                    "kernel must be [F x 1 x k]");
    detail::require(stride >= 1, "conv1d", "stride must be positive");
    const int L = input->shape[1];
    const int F = kernel->shape[0];
    const int k = kernel->shape[2];
    detail::require(L >= k, "conv1d", "input shorter than kernel");
    const int Tp = (L - k) / stride + 1;
    auto out = detail::op_result({F, Tp}, {input, kernel});
    {
        const double* __restrict x = input->data.data();
        const double* __restrict w = kernel->data.data();
        double* __restrict y = out->data.data();
        for (int f = 0; f < F; ++f) {
            const double* wf = w + static_cast<size_t>(f) * k;
            double* yf = y + static_cast<size_t>(f) * Tp;
            for (int t = 0; t < Tp; ++t) {
                const double* xt = x + static_cast<size_t>(t) * stride;
                double s = 0.0;
                for (int j = 0; j < k; ++j) s += wf[j] * xt[j];
                yf[t] = s;
            }
        }
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, input, kernel, stride, F, Tp] {
            const int k = kernel->shape[2];
            const double* g = self->grad.data();
            if (input->requires_grad) {
                const double* w = kernel->data.data();
                double* dx = input->grad.data();
                for (int f = 0; f < F; ++f)
                    for (int t = 0; t < Tp; ++t) {
                        const double gv = g[static_cast<size_t>(f) * Tp + t];
                        const double* wf = w + static_cast<size_t>(f) * k;
                        double* dxt = dx + static_cast<size_t>(t) * stride;
                        for (int j = 0; j < k; ++j) dxt[j] += gv * wf[j];
                    }
            }
            if (kernel->requires_grad) {
                const double* x = input->data.data();
                double* dw = kernel->grad.data();
                for (int f = 0; f < F; ++f)
                    for (int t = 0; t < Tp; ++t) {
                        const double gv = g[static_cast<size_t>(f) * Tp + t];
                        const double* xt = x + static_cast<size_t>(t) * stride;
                        double* dwf = dw + static_cast<size_t>(f) * k;
                        for (int j = 0; j < k; ++j) dwf[j] += gv * xt[j];
                    }
            }
        };
    }
    return out;
}

// Exact adjoint of conv1d with the same kernel layout and stride: scatters
// [F x T'] back to [1 x L'] with L' = (T'-1)*stride + k. No kernel flip.
inline TensorPtr transposed_conv1d(const TensorPtr& input, const TensorPtr& kernel,
                                   int stride) {
    detail::require(input->shape.size() == 2, "transposed_conv1d", "input must be [F x T']");
    detail::require(kernel->shape.size() == 3 && kernel->shape[1] == 1,
                    "transposed_conv1d", "kernel must be [F x 1 x k]");
    detail::require(kernel->shape[0] == input->shape[0], "transposed_conv1d",
                    "channel count mismatch");
    detail::require(stride >= 1, "transposed_conv1d", "stride must be positive");
    const int F = input->shape[0];
    const int Tp = input->shape[1];
    const int k = kernel->shape[2];
    const int L = (Tp - 1) * stride + k;
    auto out = detail::op_result({1, L}, {input, kernel});
    {
        const double* __restrict v = input->data.data();
        const double* __restrict w = kernel->data.data();
        double* __restrict y = out->data.data();
        for (int f = 0; f < F; ++f) {
            const double* wf = w + static_cast<size_t>(f) * k;
            const double* vf = v + static_cast<size_t>(f) * Tp;
            for (int t = 0; t < Tp; ++t) {
                const double vv = vf[t];
                double* yt = y + static_cast<size_t>(t) * stride;
                for (int j = 0; j < k; ++j) yt[j] += vv * wf[j];
            }
        }
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, input, kernel, stride, F, Tp] {
            const int k = kernel->shape[2];
            const double* g = self->grad.data();
            if (input->requires_grad) {
                const double* w = kernel->data.data();
                double* dv = input->grad.data();
                for (int f = 0; f < F; ++f)
                    for (int t = 0; t < Tp; ++t) {
                        const double* wf = w + static_cast<size_t>(f) * k;
                        const double* gt = g + static_cast<size_t>(t) * stride;
                        double s = 0.0;
                        for (int j = 0; j < k; ++j) s += gt[j] * wf[j];
                        dv[static_cast<size_t>(f) * Tp + t] += s;
                    }
            }
            if (kernel->requires_grad) {
                const double* v = input->data.data();
                double* dw = kernel->grad.data();
                for (int f = 0; f < F; ++f)
                    for (int t = 0; t < Tp; ++t) {
                        const double vv = v[static_cast<size_t>(f) * Tp + t];
                        const double* gt = g + static_cast<size_t>(t) * stride;
                        double* dwf = dw + static_cast<size_t>(f) * k;
                        for (int j = 0; j < k; ++j) dwf[j] += vv * gt[j];
                    }
            }
        };
    }
    return out;
}

// ---- overlapped chunking ----

namespace detail {

inline int chunk_count(int f, int s) {
    const int hop = s / 2;
    const int over = std::max(f - s, 0);
    return (over + hop - 1) / hop + 1;
}

} // namespace detail

// Split [f x h] rows into chunks of s rows with 50% overlap (hop s/2),
// zero-padding the tail. Returns V = ceil(max(f-s,0)/hop) + 1 chunks.
inline std::vector<TensorPtr> chunk_rows(const TensorPtr& x, int s) {
    detail::require(x->shape.size() == 2, "chunk_rows", "rank-2 required");
    detail::require(s >= 2 && s % 2 == 0, "chunk_rows",
                    "chunk size must be even and >= 2, got " + std::to_string(s));
    const int f = x->shape[0], h = x->shape[1];
    const int hop = s / 2;
    const int V = detail::chunk_count(f, s);
    std::vector<TensorPtr> chunks;
    chunks.reserve(V);
    for (int j = 0; j < V; ++j) {
        const int start = j * hop;
        auto c = detail::op_result({s, h}, {x});
        for (int r = 0; r < s; ++r) {
            const int p = start + r;
            if (p >= f) break;
            std::copy_n(x->data.data() + static_cast<size_t>(p) * h, h,
                        c->data.data() + static_cast<size_t>(r) * h);
        }
        if (c->requires_grad) {
            TensorNode* self = c.get();
            c->backward_fn = [self, x, start, s, h, f] {
                for (int r = 0; r < s; ++r) {
                    const int p = start + r;
                    if (p >= f) break;
                    const double* g = self->grad.data() + static_cast<size_t>(r) * h;
                    double* dx = x->grad.data() + static_cast<size_t>(p) * h;
                    for (int j2 = 0; j2 < h; ++j2) dx[j2] += g[j2];
                }
            };
        }
        chunks.push_back(std::move(c));
    }
    return chunks;
}

// Inverse of chunk_rows: average overlapping rows, drop padding. Exact
// round-trip on unmodified chunks (overlap counts are 1 or 2).
inline TensorPtr unchunk_rows(const std::vector<TensorPtr>& chunks, int f) {
    detail::require(!chunks.empty(), "unchunk_rows", "empty input");
    const int s = chunks[0]->shape[0];
    const int h = chunks[0]->shape[1];
    const int hop = s / 2;
    detail::require(static_cast<int>(chunks.size()) == detail::chunk_count(f, s),
                    "unchunk_rows", "chunk count does not match frame count");
    std::vector<TensorPtr> parents(chunks.begin(), chunks.end());
    auto out = detail::op_result({f, h}, parents);
    std::vector<int> count(f, 0);
    for (size_t j = 0; j < chunks.size(); ++j) {
        const int start = static_cast<int>(j) * hop;
        for (int r = 0; r < s; ++r) {
            const int p = start + r;
            if (p >= f) break;
            count[p]++;
            const double* src = chunks[j]->data.data() + static_cast<size_t>(r) * h;
            double* dst = out->data.data() + static_cast<size_t>(p) * h;
            for (int c = 0; c < h; ++c) dst[c] += src[c];
        }
    }
    for (int p = 0; p < f; ++p) {
        double* row = out->data.data() + static_cast<size_t>(p) * h;
        for (int c = 0; c < h; ++c) row[c] /= count[p];
    }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        auto counts = std::make_shared<std::vector<int>>(std::move(count));
        std::vector<TensorPtr> kept(chunks.begin(), chunks.end());
        out->backward_fn = [self, kept, counts, f, s, h, hop] {
            for (size_t j = 0; j < kept.size(); ++j) {
                if (!kept[j]->requires_grad) continue;
                const int start = static_cast<int>(j) * hop;
                for (int r = 0; r < s; ++r) {
                    const int p = start + r;
                    if (p >= f) break;
                    const double* g = self->grad.data() + static_cast<size_t>(p) * h;
                    double* dc = kept[j]->grad.data() + static_cast<size_t>(r) * h;
                    for (int c = 0; c < h; ++c) dc[c] += g[c] / (*counts)[p];
                }
            }
        };
    }
    return out;
}

// ---- codebook scoring helpers ----

// logits[i][k] = -||x_i - z_k||^2 for rows of x against constant rows of z.
inline TensorPtr neg_sq_dist_logits(const TensorPtr& x, const TensorPtr& z) {
    detail::require(x->shape.size() == 2 && z->shape.size() == 2 &&
                        x->shape[1] == z->shape[1],
                    "neg_sq_dist_logits", "feature dim mismatch");
    const int f = x->shape[0], h = x->shape[1], K = z->shape[0];
    auto out = detail::op_result({f, K}, {x, z});
    for (int i = 0; i < f; ++i)
        for (int k = 0; k < K; ++k) {
            const double* xi = x->data.data() + static_cast<size_t>(i) * h;
            const double* zk = z->data.data() + static_cast<size_t>(k) * h;
            double s = 0.0;
            for (int d = 0; d < h; ++d) {
                const double diff = xi[d] - zk[d];
                s += diff * diff;
            }
            out->data[static_cast<size_t>(i) * K + k] = -s;
        }
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, x, z, f, h, K] {
            for (int i = 0; i < f; ++i)
                for (int k = 0; k < K; ++k) {
                    const double g = self->grad[static_cast<size_t>(i) * K + k];
                    if (g == 0.0) continue;
                    const double* xi = x->data.data() + static_cast<size_t>(i) * h;
                    const double* zk = z->data.data() + static_cast<size_t>(k) * h;
                    if (x->requires_grad) {
                        double* dx = x->grad.data() + static_cast<size_t>(i) * h;
                        for (int d = 0; d < h; ++d) dx[d] += -2.0 * g * (xi[d] - zk[d]);
                    }
                    if (z->requires_grad) {
                        double* dz = z->grad.data() + static_cast<size_t>(k) * h;
                        for (int d = 0; d < h; ++d) dz[d] += 2.0 * g * (xi[d] - zk[d]);
                    }
                }
        };
    }
    return out;
}

// Sum over rows of log softmax(logits)[i, pick[i]].
inline TensorPtr log_softmax_pick(const TensorPtr& logits, const std::vector<int>& pick) {
    detail::require(logits->shape.size() == 2, "log_softmax_pick", "rank-2 required");
    const int f = logits->shape[0], K = logits->shape[1];
    detail::require(static_cast<int>(pick.size()) == f, "log_softmax_pick",
                    "index count != rows");
    auto out = detail::op_result({1}, {logits});
    auto probs = std::make_shared<std::vector<double>>(logits->data.size());
    double total = 0.0;
    for (int i = 0; i < f; ++i) {
        const double* row = logits->data.data() + static_cast<size_t>(i) * K;
        detail::require(0 <= pick[i] && pick[i] < K, "log_softmax_pick", "index out of range");
        double mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<size_t>(i) * K + k] = std::exp(row[k] - mx) / z;
        total += row[pick[i]] - mx - std::log(z);
    }
    out->data[0] = total;
    if (out->requires_grad) {
        TensorNode* self = out.get();
        auto picks = std::make_shared<std::vector<int>>(pick);
        out->backward_fn = [self, logits, probs, picks, f, K] {
            const double g = self->grad[0];
            for (int i = 0; i < f; ++i) {
                double* dl = logits->grad.data() + static_cast<size_t>(i) * K;
                const double* p = probs->data() + static_cast<size_t>(i) * K;
                for (int k = 0; k < K; ++k) dl[k] -= g * p[k];
                dl[(*picks)[i]] += g;
            }
        };
    }
    return out;
}

// ---- graph control ----

inline TensorPtr detach(const TensorPtr& x) {
    auto t = make_tensor(x->shape);
    t->data = x->data;
    return t;
}

// Reverse-mode sweep from a scalar. Fills .grad exactly once for every
// reachable tensor with requires_grad.
inline void backward(const TensorPtr& root) {
    detail::require(root->numel() == 1, "backward", "root must be scalar");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    if (root->requires_grad) stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorNode* n : order) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    if (!root->requires_grad) return;
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

// ---- finite-difference gradient verification ----

struct GradCheckBlock {
    std::string name;
    double max_rel_err = 0.0;
    bool kink_flag = false; // finite differences unstable near a non-smooth point
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_err = 0.0;
    bool ok(double tol) const {
        for (const auto& b : blocks)
            if (!b.kink_flag && b.max_rel_err > tol) return false;
        return true;
    }
};

// Central-difference check of d loss / d param for every named parameter
// block. `f` must rebuild the graph from the same leaves on each call.
inline GradCheckReport grad_check(
    const std::function<TensorPtr()>& f,
    const std::vector<std::pair<std::string, TensorPtr>>& params, double h = 1e-5) {
    GradCheckReport report;
    auto loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) analytic.push_back(p->grad);

    auto eval = [&] { return f()->value(); };
    for (size_t b = 0; b < params.size(); ++b) {
        const auto& p = params[b].second;
        GradCheckBlock block;
        block.name = params[b].first;
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + h;
            const double up = eval();
            p->data[i] = saved - h;
            const double dn = eval();
            p->data[i] = saved;
            const double numeric = (up - dn) / (2.0 * h);
            const double a = analytic[b][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > block.max_rel_err) {
                // re-estimate with a smaller step; inconsistency marks a kink
                p->data[i] = saved + h / 4.0;
                const double up2 = eval();
                p->data[i] = saved - h / 4.0;
                const double dn2 = eval();
                p->data[i] = saved;
                const double numeric2 = (up2 - dn2) / (h / 2.0);
                const double fd_gap = std::abs(numeric - numeric2) /
                                      std::max({std::abs(numeric), std::abs(numeric2), 1e-8});
                if (fd_gap > 0.3 && rel > 1e-3) {
                    block.kink_flag = true;
                    continue;
                }
                const double rel2 = std::abs(a - numeric2) /
                                    std::max({std::abs(a), std::abs(numeric2), 1e-8});
                block.max_rel_err = std::max(block.max_rel_err, std::min(rel, rel2));
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
        report.blocks.push_back(std::move(block));
    }
    return report;
}

} // namespace udpnet
