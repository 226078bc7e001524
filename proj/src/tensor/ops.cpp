#include "snas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace snas {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, std::size_t dilation) {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * padding < span) return 0;
    return (in + 2 * padding - span) / stride + 1;
}

namespace {

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return tape;
    }
    return nullptr;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& x, std::size_t rank) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(x.shape()));
    }
}

// Output positions o in [lo, hi) whose input index o*stride - pad + koff
// falls inside [0, in_len).
inline void valid_range(std::size_t out_len, std::size_t in_len, std::size_t stride,
                        std::size_t pad, std::size_t koff, std::size_t& lo, std::size_t& hi) {
    const long num = static_cast<long>(pad) - static_cast<long>(koff);
    const long s = static_cast<long>(stride);
    lo = num > 0 ? static_cast<std::size_t>((num + s - 1) / s) : 0;
    const long lim = static_cast<long>(in_len) + num;
    hi = lim > 0 ? std::min(out_len, static_cast<std::size_t>((lim + s - 1) / s)) : 0;
    if (lo > hi) lo = hi;
}

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad, dil, groups, cpg, opg;
};

// Visits every valid (output row segment, input row segment, weight) triple
// of a grouped 2-D convolution. fn(out_start, in_start, weight_index, count)
// covers `count` output columns; consecutive outputs advance the input by
// the stride.
template <typename Fn>
void for_each_tap(const ConvGeom& g, Fn&& fn) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
            for (std::size_t oc = grp * g.opg; oc < (grp + 1) * g.opg; ++oc) {
                const std::size_t out_plane = (n * g.o + oc) * g.oh * g.ow;
                for (std::size_t cl = 0; cl < g.cpg; ++cl) {
                    const std::size_t ic = grp * g.cpg + cl;
                    const std::size_t in_plane = (n * g.c + ic) * g.h * g.w;
                    const std::size_t w_base = (oc * g.cpg + cl) * g.kh * g.kw;
                    for (std::size_t ki = 0; ki < g.kh; ++ki) {
                        std::size_t oh_lo, oh_hi;
                        valid_range(g.oh, g.h, g.stride, g.pad, ki * g.dil, oh_lo, oh_hi);
                        for (std::size_t kj = 0; kj < g.kw; ++kj) {
                            std::size_t ow_lo, ow_hi;
                            valid_range(g.ow, g.w, g.stride, g.pad, kj * g.dil, ow_lo, ow_hi);
                            const std::size_t widx = w_base + ki * g.kw + kj;
                            if (ow_lo >= ow_hi) continue;
                            const std::size_t ix0 = ow_lo * g.stride + kj * g.dil - g.pad;
                            for (std::size_t y = oh_lo; y < oh_hi; ++y) {
                                const std::size_t iy = y * g.stride + ki * g.dil - g.pad;
                                fn(out_plane + y * g.ow + ow_lo, in_plane + iy * g.w + ix0, widx,
                                   ow_hi - ow_lo);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("add", out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("sub", out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("mul", out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                auto y = b.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                auto x = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
    if (auto* tape = recording_tape({&x})) {
        tape->record("scale", out, [x, out, factor]() mutable {
            auto g = out.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] + offset;
    if (auto* tape = recording_tape({&x})) {
        tape->record("add_scalar", out, [x, out]() mutable {
            auto g = out.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.size() != 1) {
        throw ShapeError("mul_scalar: factor must have one element, got " + to_string(s.shape()));
    }
    const T factor = s[0];
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
    if (auto* tape = recording_tape({&x, &s})) {
        tape->record("mul_scalar", out, [x, s, out]() mutable {
            auto g = out.grad();
            const T factor = s[0];
            if (x.requires_grad()) {
                auto gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
            }
            if (s.requires_grad()) {
                auto v = x.data();
                T acc = 0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
                s.grad_buffer()[0] += acc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
    if (auto* tape = recording_tape({&x})) {
        tape->record("relu", out, [x, out]() mutable {
            auto g = out.grad();
            auto v = x.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (v[i] > T(0)) gx[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(v[i]);
    if (auto* tape = recording_tape({&x})) {
        tape->record("exp", out, [x, out]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(v[i]);
    if (auto* tape = recording_tape({&x})) {
        tape->record("log", out, [x, out]() mutable {
            auto g = out.grad();
            auto v = x.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / v[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto* tape = recording_tape({&x})) {
        tape->record("sum", out, [x, out]() mutable {
            const T g = out.grad()[0];
            for (auto& gx : x.grad_buffer()) gx += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.size());
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    if (auto* tape = recording_tape({&x})) {
        tape->record("mean", out, [x, out, inv]() mutable {
            const T g = out.grad()[0] * inv;
            for (auto& gx : x.grad_buffer()) gx += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("dot", a, b);
    T acc = 0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("dot", out, [a, b, out]() mutable {
            const T g = out.grad()[0];
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                auto y = b.data();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * y[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                auto x = a.data();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * x[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T av = x[i * k + p];
            for (std::size_t j = 0; j < n; ++j) o[i * n + j] += av * y[p * n + j];
        }
    }
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("matmul", out, [a, b, out, m, k, n]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                auto y = b.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                auto x = a.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const T av = x[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() != 2 && x.rank() != 4) {
        throw ShapeError("add_bias: expected rank 2 or 4, got " + to_string(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (bias.size() != c) {
        throw ShapeError("add_bias: bias of shape " + to_string(bias.shape()) + " for input " +
                         to_string(x.shape()));
    }
    const std::size_t inner = x.size() / (n * c);
    Tensor<T> out(x.shape());
    auto o = out.data();
    auto v = x.data();
    auto bv = bias.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t s = 0; s < inner; ++s) {
                const std::size_t idx = (i * c + ch) * inner + s;
                o[idx] = v[idx] + bv[ch];
            }
    if (auto* tape = recording_tape({&x, &bias})) {
        tape->record("add_bias", out, [x, bias, out, n, c, inner]() mutable {
            auto g = out.grad();
            if (x.requires_grad()) {
                auto gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        T acc = 0;
                        for (std::size_t s = 0; s < inner; ++s) acc += g[(i * c + ch) * inner + s];
                        gb[ch] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Conv2dOptions& opt) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", weight, 4);
    ConvGeom g{};
    g.n = x.dim(0);
    g.c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.o = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = opt.stride;
    g.pad = opt.padding;
    g.dil = opt.dilation;
    g.groups = opt.groups;
    if (g.groups == 0 || g.stride == 0 || g.dil == 0 || g.c % g.groups != 0 ||
        g.o % g.groups != 0 || weight.dim(1) * g.groups != g.c) {
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " and groups " + std::to_string(g.groups));
    }
    g.cpg = g.c / g.groups;
    g.opg = g.o / g.groups;
    g.oh = conv_output_size(g.h, g.kh, g.stride, g.pad, g.dil);
    g.ow = conv_output_size(g.w, g.kw, g.stride, g.pad, g.dil);
    if (g.oh == 0 || g.ow == 0) {
        throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
    }

    Tensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
    {
        T* o = out.data().data();
        const T* in = x.data().data();
        const T* w = weight.data().data();
        const std::size_t s = g.stride;
        for_each_tap(g, [&](std::size_t ob, std::size_t ib, std::size_t widx, std::size_t cnt) {
            const T wv = w[widx];
            T* op = o + ob;
            const T* ip = in + ib;
            for (std::size_t t = 0; t < cnt; ++t) op[t] += wv * ip[t * s];
        });
    }
    if (auto* tape = recording_tape({&x, &weight})) {
        tape->record("conv2d", out, [x, weight, out, g]() mutable {
            const T* go = out.grad().data();
            const std::size_t s = g.stride;
            if (x.requires_grad()) {
                T* gi = x.grad_buffer().data();
                const T* w = weight.data().data();
                for_each_tap(g, [&](std::size_t ob, std::size_t ib, std::size_t widx,
                                    std::size_t cnt) {
                    const T wv = w[widx];
                    const T* gp = go + ob;
                    T* ip = gi + ib;
                    for (std::size_t t = 0; t < cnt; ++t) ip[t * s] += wv * gp[t];
                });
            }
            if (weight.requires_grad()) {
                T* gw = weight.grad_buffer().data();
                const T* in = x.data().data();
                for_each_tap(g, [&](std::size_t ob, std::size_t ib, std::size_t widx,
                                    std::size_t cnt) {
                    const T* gp = go + ob;
                    const T* ip = in + ib;
                    T acc = 0;
                    for (std::size_t t = 0; t < cnt; ++t) acc += gp[t] * ip[t * s];
                    gw[widx] += acc;
                });
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
    require_rank("batch_norm", x, 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.size() != c || beta.size() != c) {
        throw ShapeError("batch_norm: affine parameters " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " for input " + to_string(x.shape()));
    }
    const std::size_t m = n * hw;
    Tensor<T> out(x.shape());
    std::vector<T> x_hat(x.size());
    std::vector<T> inv_std(c);
    auto v = x.data();
    auto o = out.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mu = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) mu += v[(i * c + ch) * hw + s];
        mu /= static_cast<double>(m);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) {
                const double d = v[(i * c + ch) * hw + s] - mu;
                var += d * d;
            }
        var /= static_cast<double>(m);
        const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
        inv_std[ch] = istd;
        const T gm = gamma[ch], bt = beta[ch], mu_t = static_cast<T>(mu);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) {
                const std::size_t idx = (i * c + ch) * hw + s;
                x_hat[idx] = (v[idx] - mu_t) * istd;
                o[idx] = gm * x_hat[idx] + bt;
            }
    }
    if (auto* tape = recording_tape({&x, &gamma, &beta})) {
        tape->record("batch_norm", out,
                     [x, gamma, beta, out, n, c, hw, m, x_hat = std::move(x_hat),
                      inv_std = std::move(inv_std)]() mutable {
                         auto g = out.grad();
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             T sum_g = 0, sum_gx = 0;
                             for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t s = 0; s < hw; ++s) {
                                     const std::size_t idx = (i * c + ch) * hw + s;
                                     sum_g += g[idx];
                                     sum_gx += g[idx] * x_hat[idx];
                                 }
                             if (beta.requires_grad()) beta.grad_buffer()[ch] += sum_g;
                             if (gamma.requires_grad()) gamma.grad_buffer()[ch] += sum_gx;
                             if (x.requires_grad()) {
                                 auto gx = x.grad_buffer();
                                 const T k = gamma[ch] * inv_std[ch] / static_cast<T>(m);
                                 const T mt = static_cast<T>(m);
                                 for (std::size_t i = 0; i < n; ++i)
                                     for (std::size_t s = 0; s < hw; ++s) {
                                         const std::size_t idx = (i * c + ch) * hw + s;
                                         gx[idx] += k * (mt * g[idx] - sum_g - x_hat[idx] * sum_gx);
                                     }
                             }
                         }
                     });
    }
    return out;
}

template <typename T>
Tensor<T> batch_norm_fixed(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, double eps) {
    require_rank("batch_norm_fixed", x, 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.size() != c || beta.size() != c || mean.size() != c || var.size() != c) {
        throw ShapeError("batch_norm_fixed: statistics do not match input " + to_string(x.shape()));
    }
    std::vector<T> scale(c), shift(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double istd = 1.0 / std::sqrt(static_cast<double>(var[ch]) + eps);
        scale[ch] = static_cast<T>(istd);
        shift[ch] = static_cast<T>(-static_cast<double>(mean[ch]) * istd);
    }
    Tensor<T> out(x.shape());
    auto v = x.data();
    auto o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t s = 0; s < hw; ++s) {
                const std::size_t idx = (i * c + ch) * hw + s;
                o[idx] = gamma[ch] * (v[idx] * scale[ch] + shift[ch]) + beta[ch];
            }
    if (auto* tape = recording_tape({&x, &gamma, &beta})) {
        tape->record("batch_norm_fixed", out, [x, gamma, beta, out, n, c, hw, scale, shift]() mutable {
            auto g = out.grad();
            auto v = x.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sum_g = 0, sum_gx = 0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t s = 0; s < hw; ++s) {
                        const std::size_t idx = (i * c + ch) * hw + s;
                        sum_g += g[idx];
                        sum_gx += g[idx] * (v[idx] * scale[ch] + shift[ch]);
                    }
                if (beta.requires_grad()) beta.grad_buffer()[ch] += sum_g;
                if (gamma.requires_grad()) gamma.grad_buffer()[ch] += sum_gx;
                if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    const T k = gamma[ch] * scale[ch];
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t s = 0; s < hw; ++s) gx[(i * c + ch) * hw + s] += k * g[(i * c + ch) * hw + s];
                }
            }
        });
    }
    return out;
}

template <typename T>
void update_running_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var, double momentum) {
    require_rank("update_running_stats", x, 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (mean.size() != c || var.size() != c) throw ShapeError("update_running_stats: statistics do not match input");
    const std::size_t m = n * hw;
    auto v = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) mu += v[(i * c + ch) * hw + s];
        mu /= static_cast<double>(m);
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < hw; ++s) {
                const double d = v[(i * c + ch) * hw + s] - mu;
                sq += d * d;
            }
        const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : 0.0;
        mean[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(mean[ch]) + momentum * mu);
        var[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(var[ch]) + momentum * unbiased);
    }
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, const Pool2dOptions& opt) {
    require_rank("avg_pool2d", x, 4);
    ConvGeom g{};
    g.n = 1;
    g.c = g.o = x.dim(0) * x.dim(1);  // every (sample, channel) plane pools independently
    g.groups = g.c;
    g.cpg = g.opg = 1;
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.kh = g.kw = opt.kernel;
    g.stride = opt.stride;
    g.pad = opt.padding;
    g.dil = 1;
    g.oh = conv_output_size(g.h, g.kh, g.stride, g.pad);
    g.ow = conv_output_size(g.w, g.kw, g.stride, g.pad);
    if (g.oh == 0 || g.ow == 0) throw ShapeError("avg_pool2d: window larger than input " + to_string(x.shape()));
    const T inv = T(1) / static_cast<T>(opt.kernel * opt.kernel);
    Tensor<T> out(Shape{x.dim(0), x.dim(1), g.oh, g.ow});
    {
        T* o = out.data().data();
        const T* in = x.data().data();
        const std::size_t s = g.stride;
        for_each_tap(g, [&](std::size_t ob, std::size_t ib, std::size_t, std::size_t cnt) {
            for (std::size_t t = 0; t < cnt; ++t) o[ob + t] += in[ib + t * s] * inv;
        });
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("avg_pool2d", out, [x, out, g, inv]() mutable {
            const T* go = out.grad().data();
            T* gi = x.grad_buffer().data();
            const std::size_t s = g.stride;
            for_each_tap(g, [&](std::size_t ob, std::size_t ib, std::size_t, std::size_t cnt) {
                for (std::size_t t = 0; t < cnt; ++t) gi[ib + t * s] += go[ob + t] * inv;
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, const Pool2dOptions& opt) {
    require_rank("max_pool2d", x, 4);
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_output_size(h, opt.kernel, opt.stride, opt.padding);
    const std::size_t ow = conv_output_size(w, opt.kernel, opt.stride, opt.padding);
    if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: window larger than input " + to_string(x.shape()));
    Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
    std::vector<std::size_t> argmax(out.size());
    auto v = x.data();
    auto o = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xo = 0; xo < ow; ++xo) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t ki = 0; ki < opt.kernel; ++ki) {
                    const long iy = static_cast<long>(y * opt.stride + ki) - static_cast<long>(opt.padding);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kj = 0; kj < opt.kernel; ++kj) {
                        const long ix = static_cast<long>(xo * opt.stride + kj) - static_cast<long>(opt.padding);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const std::size_t idx = p * h * w + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        if (v[idx] > best) {
                            best = v[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t oidx = (p * oh + y) * ow + xo;
                o[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("max_pool2d", out, [x, out, argmax = std::move(argmax)]() mutable {
            auto g = out.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank("global_avg_pool", x, 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const T inv = T(1) / static_cast<T>(hw);
    Tensor<T> out(Shape{n, c});
    auto v = x.data();
    auto o = out.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        T acc = 0;
        for (std::size_t s = 0; s < hw; ++s) acc += v[p * hw + s];
        o[p] = acc * inv;
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("global_avg_pool", out, [x, out, n, c, hw, inv]() mutable {
            auto g = out.grad();
            auto gx = x.grad_buffer();
            for (std::size_t p = 0; p < n * c; ++p)
                for (std::size_t s = 0; s < hw; ++s) gx[p * hw + s] += g[p] * inv;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {
template <typename T>
void rows_of(const char* op, const Tensor<T>& x, std::size_t& rows, std::size_t& cols) {
    if (x.rank() == 1) {
        rows = 1;
        cols = x.dim(0);
    } else if (x.rank() == 2) {
        rows = x.dim(0);
        cols = x.dim(1);
    } else {
        throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + to_string(x.shape()));
    }
}
}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    std::size_t rows, cols;
    rows_of("softmax", x, rows, cols);
    Tensor<T> out(x.shape());
    auto v = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = v.data() + r * cols;
        T* y = o.data() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        T z = 0;
        for (std::size_t k = 0; k < cols; ++k) z += (y[k] = std::exp(in[k] - mx));
        for (std::size_t k = 0; k < cols; ++k) y[k] /= z;
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("softmax", out, [x, out, rows, cols]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                T dotp = 0;
                for (std::size_t k = 0; k < cols; ++k) dotp += g[r * cols + k] * y[r * cols + k];
                for (std::size_t k = 0; k < cols; ++k)
                    gx[r * cols + k] += y[r * cols + k] * (g[r * cols + k] - dotp);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    std::size_t rows, cols;
    rows_of("log_softmax", x, rows, cols);
    Tensor<T> out(x.shape());
    auto v = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = v.data() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        T z = 0;
        for (std::size_t k = 0; k < cols; ++k) z += std::exp(in[k] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t k = 0; k < cols; ++k) o[r * cols + k] = in[k] - lse;
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("log_softmax", out, [x, out, rows, cols]() mutable {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                T gs = 0;
                for (std::size_t k = 0; k < cols; ++k) gs += g[r * cols + k];
                for (std::size_t k = 0; k < cols; ++k)
                    gx[r * cols + k] += g[r * cols + k] - std::exp(y[r * cols + k]) * gs;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
    }
    std::vector<T> probs(n * k);
    std::vector<int> lab(labels.begin(), labels.end());
    auto v = logits.data();
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k) {
            throw ShapeError("cross_entropy: label " + std::to_string(lab[i]) + " outside " +
                             std::to_string(k) + " classes");
        }
        const T* in = v.data() + i * k;
        const T mx = *std::max_element(in, in + k);
        T z = 0;
        for (std::size_t c = 0; c < k; ++c) z += (probs[i * k + c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < k; ++c) probs[i * k + c] /= z;
        loss -= in[lab[i]] - mx - std::log(z);
    }
    Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(n));
    if (auto* tape = recording_tape({&logits})) {
        tape->record("cross_entropy", out,
                     [logits, out, n, k, probs = std::move(probs), lab = std::move(lab)]() mutable {
                         const T g = out.grad()[0] / static_cast<T>(n);
                         auto gx = logits.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t c = 0; c < k; ++c) {
                                 const T target = static_cast<int>(c) == lab[i] ? T(1) : T(0);
                                 gx[i * k + c] += g * (probs[i * k + c] - target);
                             }
                     });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& p : parts) require_rank("concat_channels", p, 4);
    const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::size_t c_total = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: " + to_string(p.shape()) + " does not match " +
                             to_string(parts[0].shape()));
        }
        c_total += p.dim(1);
    }
    const std::size_t hw = h * w;
    Tensor<T> out(Shape{n, c_total, h, w});
    auto o = out.data();
    bool any_grad = false;
    std::size_t c_off = 0;
    for (const auto& p : parts) {
        auto v = p.data();
        const std::size_t c = p.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(v.begin() + i * c * hw, c * hw, o.begin() + (i * c_total + c_off) * hw);
        c_off += c;
        any_grad = any_grad || p.requires_grad();
    }
    Tape<T>* tape = active_tape<T>();
    if (tape && any_grad) {
        tape->record("concat_channels", out, [parts, out, n, c_total, hw]() mutable {
            auto g = out.grad();
            std::size_t c_off = 0;
            for (auto& p : parts) {
                const std::size_t c = p.dim(1);
                if (p.requires_grad()) {
                    auto gp = p.grad_buffer();
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < c * hw; ++j)
                            gp[i * c * hw + j] += g[(i * c_total + c_off) * hw + j];
                }
                c_off += c;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t r) {
    require_rank("row", x, 2);
    if (r >= x.dim(0)) {
        throw ShapeError("row: index " + std::to_string(r) + " outside " + to_string(x.shape()));
    }
    const std::size_t cols = x.dim(1);
    auto v = x.data();
    Tensor<T> out(Shape{cols}, std::vector<T>(v.begin() + r * cols, v.begin() + (r + 1) * cols));
    if (auto* tape = recording_tape({&x})) {
        tape->record("row", out, [x, out, r, cols]() mutable {
            auto g = out.grad();
            auto gx = x.grad_buffer();
            for (std::size_t k = 0; k < cols; ++k) gx[r * cols + k] += g[k];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mix(const Tensor<T>& weights, const std::vector<Tensor<T>>& inputs) {
    if (weights.size() != inputs.size()) {
        throw ShapeError("mix: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(inputs.size()) + " inputs");
    }
    const Tensor<T>* first = nullptr;
    for (const auto& in : inputs) {
        if (!in.defined()) continue;
        if (!first) first = &in;
        require_same_shape("mix", *first, in);
    }
    if (!first) throw ShapeError("mix: every input is undefined");
    Tensor<T> out(first->shape());
    auto o = out.data();
    bool any_grad = weights.requires_grad();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].defined()) continue;
        const T wk = weights[k];
        auto v = inputs[k].data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += wk * v[i];
        any_grad = any_grad || inputs[k].requires_grad();
    }
    Tape<T>* tape = active_tape<T>();
    if (tape && any_grad) {
        tape->record("mix", out, [weights, inputs, out]() mutable {
            auto g = out.grad();
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                auto& in = inputs[k];
                if (!in.defined()) continue;
                if (in.requires_grad()) {
                    const T wk = weights[k];
                    auto gi = in.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += wk * g[i];
                }
                if (weights.requires_grad()) {
                    auto v = in.data();
                    T acc = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
                    weights.grad_buffer()[k] += acc;
                }
            }
        });
    }
    return out;
}

#define SNAS_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                           \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> relu(const Tensor<T>&);                                               \
    template Tensor<T> exp(const Tensor<T>&);                                                \
    template Tensor<T> log(const Tensor<T>&);                                                \
    template Tensor<T> sum(const Tensor<T>&);                                                \
    template Tensor<T> mean(const Tensor<T>&);                                               \
    template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&);     \
    template Tensor<T> batch_norm_fixed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const Tensor<T>&, double);                                            \
    template void update_running_stats(const Tensor<T>&, Tensor<T>&, Tensor<T>&, double);                     \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                  double);                                                   \
    template Tensor<T> avg_pool2d(const Tensor<T>&, const Pool2dOptions&);                   \
    template Tensor<T> max_pool2d(const Tensor<T>&, const Pool2dOptions&);                   \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                    \
    template Tensor<T> softmax(const Tensor<T>&);                                            \
    template Tensor<T> log_softmax(const Tensor<T>&);                                        \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                       \
    template Tensor<T> row(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> mix(const Tensor<T>&, const std::vector<Tensor<T>>&);

SNAS_INSTANTIATE_OPS(float)
SNAS_INSTANTIATE_OPS(double)

}  // namespace snas
