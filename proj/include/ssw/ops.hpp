#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and
// records an adjoint that accumulates into the gradients of its inputs.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ssw/autodiff.hpp"

namespace ssw {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[M,N] (+)= op(A) * op(B) with row-major operands; op(X) is X or X^T.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    using Map = Eigen::Map<RowMat<T>>;
    using CMap = Eigen::Map<const RowMat<T>>;
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    Map cm(c, M, N);
    if (!accumulate) cm.setZero();
    CMap am(a, trans_a ? K : M, trans_a ? M : K);
    CMap bm(b, trans_b ? N : K, trans_b ? K : N);
    if (!trans_a && !trans_b)
        cm.noalias() += am * bm;
    else if (!trans_a && trans_b)
        cm.noalias() += am * bm.transpose();
    else if (trans_a && !trans_b)
        cm.noalias() += am.transpose() * bm;
    else
        cm.noalias() += am.transpose() * bm.transpose();
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, std::string_view op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
    std::size_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= s[i];
    return p;
}

inline std::size_t norm_axis(long axis, std::size_t rank, std::string_view op) {
    long r = static_cast<long>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis);
}

/// For every element of `big`, the row-major offset of the broadcast element of `small`.
inline std::vector<std::size_t> broadcast_offsets(const Shape& big, const Shape& small) {
    const std::size_t rank = big.size();
    auto sst = strides_of(small);
    for (std::size_t i = 0; i < rank; ++i)
        if (small[i] == 1) sst[i] = 0;
    std::vector<std::size_t> offs(numel(big));
    std::vector<std::size_t> idx(rank, 0);
    std::size_t cur = 0;
    for (std::size_t e = 0; e < offs.size(); ++e) {
        offs[e] = cur;
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < big[ax]) {
                cur += sst[ax];
                break;
            }
            cur -= sst[ax] * (big[ax] - 1);
            idx[ax] = 0;
        }
    }
    return offs;
}

template <class T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& in = x.shape();
    const std::size_t rank = in.size();
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[perm[i]];
    Tensor<T> out(out_shape);
    if (rank == 0) {
        out[0] = x[0];
        return out;
    }
    auto ist = strides_of(in);
    std::vector<std::size_t> st(rank);
    for (std::size_t i = 0; i < rank; ++i) st[i] = ist[perm[i]];
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t inner = out_shape[rank - 1];
    const std::size_t inner_stride = st[rank - 1];
    std::size_t src = 0;
    T* dst = out.ptr();
    const T* s = x.ptr();
    for (std::size_t done = 0; done < out.size(); done += inner) {
        for (std::size_t j = 0; j < inner; ++j) *dst++ = s[src + j * inner_stride];
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                src += st[ax];
                break;
            }
            src -= st[ax] * (out_shape[ax] - 1);
            idx[ax] = 0;
        }
    }
    return out;
}

template <class T>
Var<T> unary(std::string_view op, const Var<T>& x, T (*f)(T), T (*df)(T x, T y)) {
    Tensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return record<T>(op, std::move(out), {x}, [df](Node<T>& n) {
        auto& g = n.in_grad(0);
        const auto& xv = n.in(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(xv[i], n.value[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return record<T>("add", std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t k = 0; k < 2; ++k)
            if (n.wants(k)) n.inputs[k]->accumulate(n.grad);
    });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return record<T>("sub", std::move(out), {a, b}, [](Node<T>& n) {
        if (n.wants(0)) n.inputs[0]->accumulate(n.grad);
        if (n.wants(1)) {
            auto& g = n.in_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return record<T>("mul", std::move(out), {a, b}, [](Node<T>& n) {
        if (n.wants(0)) {
            auto& g = n.in_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.in(1)[i];
        }
        if (n.wants(1)) {
            auto& g = n.in_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.in(0)[i];
        }
    });
}

template <std::floating_point T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "div");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return record<T>("div", std::move(out), {a, b}, [](Node<T>& n) {
        if (n.wants(0)) {
            auto& g = n.in_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / n.in(1)[i];
        }
        if (n.wants(1)) {
            auto& g = n.in_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.value[i] / n.in(1)[i];
        }
    });
}

/// Elementwise minimum; ties route the gradient to `a`.
template <std::floating_point T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a, b, "minimum");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::isnan(b.value()[i]) ? b.value()[i] : std::min(out[i], b.value()[i]);
    return record<T>("minimum", std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            const bool take_a = n.in(0)[i] <= n.in(1)[i];
            const std::size_t k = take_a ? 0 : 1;
            if (n.wants(k)) n.in_grad(k)[i] += n.grad[i];
        }
    });
}

/// a + b where every axis of b has extent 1 or the matching extent of a.
template <std::floating_point T>
Var<T> add_broadcast(const Var<T>& a, const Var<T>& b) {
    if (a.shape().size() != b.shape().size())
        throw ShapeError("add_broadcast: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (std::size_t i = 0; i < a.shape().size(); ++i)
        if (b.dim(i) != 1 && b.dim(i) != a.dim(i))
            throw ShapeError("add_broadcast: cannot broadcast " + shape_str(b.shape()) + " to " +
                             shape_str(a.shape()));
    auto offs = detail::broadcast_offsets(a.shape(), b.shape());
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[offs[i]];
    return record<T>("add_broadcast", std::move(out), {a, b}, [offs = std::move(offs)](Node<T>& n) {
        if (n.wants(0)) n.inputs[0]->accumulate(n.grad);
        if (n.wants(1)) {
            auto& g = n.in_grad(1);
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[offs[i]] += n.grad[i];
        }
    });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& x, T s) {
    Tensor<T> out = x.value();
    for (auto& v : out.data()) v *= s;
    return record<T>("scale", std::move(out), {x}, [s](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& x, T s) {
    Tensor<T> out = x.value();
    for (auto& v : out.data()) v += s;
    return record<T>("add_scalar", std::move(out), {x}, [](Node<T>& n) { n.inputs[0]->accumulate(n.grad); });
}

template <std::floating_point T>
Var<T> neg(const Var<T>& x) {
    return scale(x, T(-1));
}

template <std::floating_point T>
Var<T> relu(const Var<T>& x) {
    return detail::unary<T>(
        "relu", x, [](T v) { return v > T(0) || std::isnan(v) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Exact (erf) GELU.
template <std::floating_point T>
Var<T> gelu(const Var<T>& x) {
    return detail::unary<T>(
        "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
        [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
            return cdf + v * pdf;
        });
}

template <std::floating_point T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary<T>(
        "sigmoid", x,
        [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
        [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().data()) s += v;
    return record<T>("sum", Tensor<T>::scalar(s), {x}, [](Node<T>& n) {
        auto& g = n.in_grad(0);
        const T go = n.grad[0];
        for (auto& v : g.data()) v += go;
    });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// Layout

template <std::floating_point T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return record<T>("reshape", std::move(out), {x}, [](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

template <std::floating_point T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
    if (perm.size() != x.shape().size()) throw ShapeError("permute: permutation rank mismatch for " + shape_str(x.shape()));
    std::vector<std::size_t> inv(perm.size());
    std::vector<bool> hit(perm.size(), false);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] >= perm.size() || hit[perm[i]]) throw ShapeError("permute: invalid permutation");
        hit[perm[i]] = true;
        inv[perm[i]] = i;
    }
    Tensor<T> out = detail::permute_tensor(x.value(), perm);
    return record<T>("permute", std::move(out), {x}, [inv = std::move(inv)](Node<T>& n) {
        n.inputs[0]->accumulate(detail::permute_tensor(n.grad, inv));
    });
}

template <std::floating_point T>
Var<T> concat(const std::vector<Var<T>>& xs, long axis_in) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    const std::size_t axis = detail::norm_axis(axis_in, s0.size(), "concat");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw ShapeError("concat: extent mismatch " + shape_str(s0) + " vs " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    const std::size_t outer = detail::prod(s0, 0, axis);
    const std::size_t inner = detail::prod(s0, axis + 1, s0.size());
    const std::size_t row = out_shape[axis] * inner;
    Tensor<T> out(out_shape);
    std::size_t off = 0;
    for (const auto& x : xs) {
        const std::size_t chunk = x.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.value().ptr() + o * chunk, chunk, out.ptr() + o * row + off);
        off += chunk;
    }
    std::vector<std::size_t> chunks;
    for (const auto& x : xs) chunks.push_back(x.dim(axis) * inner);
    return record<T>("concat", std::move(out), xs, [outer, row, chunks = std::move(chunks)](Node<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < chunks.size(); ++k) {
            const std::size_t chunk = chunks[k];
            if (n.wants(k)) {
                auto& g = n.in_grad(k);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < chunk; ++j) g[o * chunk + j] += n.grad[o * row + off + j];
            }
            off += chunk;
        }
    });
}

/// Contiguous range [start, start+len) along one axis.
template <std::floating_point T>
Var<T> slice(const Var<T>& x, long axis_in, std::size_t start, std::size_t len) {
    const Shape& s = x.shape();
    const std::size_t axis = detail::norm_axis(axis_in, s.size(), "slice");
    if (len == 0 || start + len > s[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of bounds for " + shape_str(s));
    Shape out_shape = s;
    out_shape[axis] = len;
    const std::size_t outer = detail::prod(s, 0, axis);
    const std::size_t inner = detail::prod(s, axis + 1, s.size());
    const std::size_t row = s[axis] * inner;
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.value().ptr() + o * row + start * inner, len * inner, out.ptr() + o * len * inner);
    return record<T>("slice", std::move(out), {x}, [outer, inner, row, start, len](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < len * inner; ++j) g[o * row + start * inner + j] += n.grad[o * len * inner + j];
    });
}

namespace detail {

/// Gather along one axis: out[.., i, ..] = in[.., src[i], ..]. Adjoint scatters back.
template <class T>
Var<T> gather_axis(std::string_view op, const Var<T>& x, std::size_t axis, std::vector<std::size_t> src) {
    const Shape& s = x.shape();
    Shape out_shape = s;
    out_shape[axis] = src.size();
    const std::size_t outer = prod(s, 0, axis);
    const std::size_t inner = prod(s, axis + 1, s.size());
    const std::size_t in_row = s[axis] * inner;
    const std::size_t out_row = src.size() * inner;
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < src.size(); ++i)
            std::copy_n(x.value().ptr() + o * in_row + src[i] * inner, inner, out.ptr() + o * out_row + i * inner);
    return record<T>(op, std::move(out), {x}, [src = std::move(src), outer, inner, in_row, out_row](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < src.size(); ++i) {
                T* dst = g.ptr() + o * in_row + src[i] * inner;
                const T* gs = n.grad.ptr() + o * out_row + i * inner;
                for (std::size_t j = 0; j < inner; ++j) dst[j] += gs[j];
            }
    });
}

}  // namespace detail

/// torch.roll semantics: out[(i + shift) mod n] = in[i] along `axis`.
template <std::floating_point T>
Var<T> cyclic_roll(const Var<T>& x, long axis_in, long shift) {
    const std::size_t axis = detail::norm_axis(axis_in, x.shape().size(), "cyclic_roll");
    const long n = static_cast<long>(x.dim(axis));
    std::vector<std::size_t> src(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) src[static_cast<std::size_t>(i)] = static_cast<std::size_t>((((i - shift) % n) + n) % n);
    return detail::gather_axis<T>("cyclic_roll", x, axis, std::move(src));
}

/// Reflection padding (edge sample not repeated) along one axis.
template <std::floating_point T>
Var<T> pad_reflect(const Var<T>& x, long axis_in, std::size_t before, std::size_t after) {
    const std::size_t axis = detail::norm_axis(axis_in, x.shape().size(), "pad_reflect");
    const std::size_t n = x.dim(axis);
    if (before == 0 && after == 0) return x;
    if (before >= n || after >= n)
        throw ShapeError("pad_reflect: padding " + std::to_string(std::max(before, after)) +
                         " must be smaller than extent " + std::to_string(n));
    std::vector<std::size_t> src(n + before + after);
    for (std::size_t p = 0; p < src.size(); ++p) {
        long s = static_cast<long>(p) - static_cast<long>(before);
        if (s < 0) s = -s;
        if (s >= static_cast<long>(n)) s = 2 * (static_cast<long>(n) - 1) - s;
        src[p] = static_cast<std::size_t>(s);
    }
    return detail::gather_axis<T>("pad_reflect", x, axis, std::move(src));
}

/// Rows of `table` (first axis) selected by `indices`.
template <std::floating_point T>
Var<T> index_select(const Var<T>& table, std::vector<std::size_t> indices) {
    for (std::size_t i : indices)
        if (i >= table.dim(0)) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
    return detail::gather_axis<T>("index_select", table, 0, std::move(indices));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched a[...,M,K] x b[...,K,N] (or b[...,N,K] with transpose_b); batch extents must agree.
template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size())
        throw ShapeError("matmul: incompatible ranks " + shape_str(sa) + " vs " + shape_str(sb));
    const std::size_t r = sa.size();
    for (std::size_t i = 0; i + 2 < r; ++i)
        if (sa[i] != sb[i]) throw ShapeError("matmul: batch mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    const std::size_t m = sa[r - 2], k = sa[r - 1];
    const std::size_t kb = transpose_b ? sb[r - 1] : sb[r - 2];
    const std::size_t nn = transpose_b ? sb[r - 2] : sb[r - 1];
    if (k != kb) throw ShapeError("matmul: inner extent mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    const std::size_t batch = detail::prod(sa, 0, r - 2);
    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(nn);
    Tensor<T> out(out_shape);
    for (std::size_t bi = 0; bi < batch; ++bi)
        detail::gemm(false, transpose_b, m, nn, k, a.value().ptr() + bi * m * k, b.value().ptr() + bi * k * nn,
                     out.ptr() + bi * m * nn, false);
    return record<T>("matmul", std::move(out), {a, b}, [=](Node<T>& n) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* go = n.grad.ptr() + bi * m * nn;
            if (n.wants(0))  // dA = dC * op(B)^T
                detail::gemm(false, !transpose_b, m, k, nn, go, n.in(1).ptr() + bi * k * nn,
                             n.in_grad(0).ptr() + bi * m * k, true);
            if (n.wants(1)) {
                if (transpose_b)  // B is [N,K]: dB = dC^T * A
                    detail::gemm(true, false, nn, k, m, go, n.in(0).ptr() + bi * m * k,
                                 n.in_grad(1).ptr() + bi * k * nn, true);
                else  // dB = A^T * dC
                    detail::gemm(true, false, k, nn, m, n.in(0).ptr() + bi * m * k, go,
                                 n.in_grad(1).ptr() + bi * k * nn, true);
            }
        }
    });
}

/// y = x W^T + b over the last axis; W is [out, in]. `bias` may be an invalid Var.
template <std::floating_point T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {}) {
    const Shape& sx = x.shape();
    if (sx.empty() || weight.shape().size() != 2 || weight.dim(1) != sx.back())
        throw ShapeError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(weight.shape()));
    const std::size_t in = sx.back(), outf = weight.dim(0);
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{outf})
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
    const std::size_t rows = x.size() / in;
    Shape out_shape = sx;
    out_shape.back() = outf;
    Tensor<T> out(out_shape);
    detail::gemm(false, true, rows, outf, in, x.value().ptr(), weight.value().ptr(), out.ptr(), false);
    if (has_bias)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < outf; ++o) out[r * outf + o] += bias.value()[o];
    std::vector<Var<T>> ins{x, weight};
    if (has_bias) ins.push_back(bias);
    return record<T>("linear", std::move(out), std::move(ins), [=](Node<T>& n) {
        if (n.wants(0)) detail::gemm(false, false, rows, in, outf, n.grad.ptr(), n.in(1).ptr(), n.in_grad(0).ptr(), true);
        if (n.wants(1)) detail::gemm(true, false, outf, in, rows, n.grad.ptr(), n.in(0).ptr(), n.in_grad(1).ptr(), true);
        if (has_bias && n.wants(2)) {
            auto& g = n.in_grad(2);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < outf; ++o) g[o] += n.grad[r * outf + o];
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization

template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const Shape& s = x.shape();
    if (s.empty() || s.back() == 0) throw ShapeError("layer_norm: empty channel axis");
    const std::size_t c = s.back();
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + "," + shape_str(beta.shape()) +
                         " do not match channels of " + shape_str(s));
    const std::size_t rows = x.size() / c;
    Tensor<T> out(s);
    std::vector<T> rstd(rows);
    const T* xv = x.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv + r * c;
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j)
            out[r * c + j] = (row[j] - mu) * rstd[r] * gamma.value()[j] + beta.value()[j];
    }
    return record<T>("layer_norm", std::move(out), {x, gamma, beta}, [c, rows, rstd = std::move(rstd)](Node<T>& n) {
        const T* xv = n.in(0).ptr();
        const T* gm = n.in(1).ptr();
        std::vector<T> xhat(c), dxhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xv + r * c;
            const T* go = n.grad.ptr() + r * c;
            T mu = 0;
            for (std::size_t j = 0; j < c; ++j) mu += row[j];
            mu /= static_cast<T>(c);
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
                xhat[j] = (row[j] - mu) * rstd[r];
                dxhat[j] = go[j] * gm[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat[j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            if (n.wants(0)) {
                T* gx = n.in_grad(0).ptr() + r * c;
                for (std::size_t j = 0; j < c; ++j) gx[j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
            }
            if (n.wants(1)) {
                T* gg = n.in_grad(1).ptr();
                for (std::size_t j = 0; j < c; ++j) gg[j] += go[j] * xhat[j];
            }
            if (n.wants(2)) {
                T* gb = n.in_grad(2).ptr();
                for (std::size_t j = 0; j < c; ++j) gb[j] += go[j];
            }
        }
    });
}

/// Max-subtracted softmax along `axis`.
template <std::floating_point T>
Var<T> softmax(const Var<T>& x, long axis_in = -1) {
    const Shape& s = x.shape();
    const std::size_t axis = detail::norm_axis(axis_in, s.size(), "softmax");
    const std::size_t outer = detail::prod(s, 0, axis);
    const std::size_t len = s[axis];
    const std::size_t inner = detail::prod(s, axis + 1, s.size());
    Tensor<T> out(s);
    const T* xv = x.value().ptr();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            T z = 0;
            for (std::size_t j = 0; j < len; ++j) z += (out[base + j * inner] = std::exp(xv[base + j * inner] - mx));
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
        }
    return record<T>("softmax", std::move(out), {x}, [outer, len, inner](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t j = 0; j < len; ++j) dot += n.grad[base + j * inner] * n.value[base + j * inner];
                for (std::size_t j = 0; j < len; ++j)
                    g[base + j * inner] += n.value[base + j * inner] * (n.grad[base + j * inner] - dot);
            }
    });
}

// ---------------------------------------------------------------------------
// Spatial ops on [B, C, H, W]

struct Conv2dGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                T* dst = cols + ((ci * kh + ky) * kw + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        dst[oy * wo + ox] = (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w))
                                                ? img[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]
                                                : T(0);
                    }
                }
            }
}

template <class T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const T* src = cols + ((ci * kh + ky) * kw + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        img[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += src[oy * wo + ox];
                    }
                }
            }
}

}  // namespace detail

/// Cross-correlation. `bias` may be an invalid Var.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding) {
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw ShapeError("conv2d: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t b = sx[0], c = sx[1], h = sx[2], w = sx[3];
    const std::size_t o = sw[0], kh = sw[2], kw = sw[3];
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{o})
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(sw));
    const std::size_t ho = conv_out_extent(h, kh, stride, padding);
    const std::size_t wo = conv_out_extent(w, kw, stride, padding);
    const std::size_t ckk = c * kh * kw, hw = ho * wo;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
    Tensor<T> out(Shape{b, o, ho, wo});
    std::vector<T> cols(pointwise ? 0 : ckk * hw);
    for (std::size_t bi = 0; bi < b; ++bi) {
        const T* img = x.value().ptr() + bi * c * h * w;
        const T* colp = img;
        if (!pointwise) {
            detail::im2col(img, c, h, w, kh, kw, stride, padding, ho, wo, cols.data());
            colp = cols.data();
        }
        T* dst = out.ptr() + bi * o * hw;
        detail::gemm(false, false, o, hw, ckk, weight.value().ptr(), colp, dst, false);
        if (has_bias)
            for (std::size_t oc = 0; oc < o; ++oc)
                for (std::size_t p = 0; p < hw; ++p) dst[oc * hw + p] += bias.value()[oc];
    }
    std::vector<Var<T>> ins{x, weight};
    if (has_bias) ins.push_back(bias);
    return record<T>("conv2d", std::move(out), std::move(ins), [=](Node<T>& n) {
        std::vector<T> cols(pointwise ? 0 : ckk * hw);
        std::vector<T> dcols(pointwise || !n.wants(0) ? 0 : ckk * hw);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const T* go = n.grad.ptr() + bi * o * hw;
            const T* img = n.in(0).ptr() + bi * c * h * w;
            if (n.wants(1)) {
                const T* colp = img;
                if (!pointwise) {
                    detail::im2col(img, c, h, w, kh, kw, stride, padding, ho, wo, cols.data());
                    colp = cols.data();
                }
                detail::gemm(false, true, o, ckk, hw, go, colp, n.in_grad(1).ptr(), true);
            }
            if (n.wants(0)) {
                T* gimg = n.in_grad(0).ptr() + bi * c * h * w;
                if (pointwise) {
                    detail::gemm(true, false, ckk, hw, o, n.in(1).ptr(), go, gimg, true);
                } else {
                    detail::gemm(true, false, ckk, hw, o, n.in(1).ptr(), go, dcols.data(), false);
                    detail::col2im(dcols.data(), c, h, w, kh, kw, stride, padding, ho, wo, gimg);
                }
            }
            if (has_bias && n.wants(2)) {
                auto& gb = n.in_grad(2);
                for (std::size_t oc = 0; oc < o; ++oc)
                    for (std::size_t p = 0; p < hw; ++p) gb[oc] += go[oc * hw + p];
            }
        }
    });
}

/// Max pooling with implicit -inf padding; ties keep the first maximum in scan order.
template <std::floating_point T>
Var<T> max_pool2d(const Var<T>& x, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw, std::size_t ph,
                  std::size_t pw) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("max_pool2d: expected [B,C,H,W], got " + shape_str(s));
    if (ph * 2 > kh || pw * 2 > kw) throw ShapeError("max_pool2d: padding exceeds half the window");
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    const std::size_t ho = conv_out_extent(h, kh, sh, ph), wo = conv_out_extent(w, kw, sw, pw);
    Tensor<T> out(Shape{s[0], s[1], ho, wo});
    std::vector<std::uint32_t> arg(out.size());
    const T* xv = x.value().ptr();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_i = 0;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const long iy = static_cast<long>(oy * sh + ky) - static_cast<long>(ph);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const long ix = static_cast<long>(ox * sw + kx) - static_cast<long>(pw);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const std::size_t i = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        if (xv[p * h * w + i] > best || (std::isnan(xv[p * h * w + i]) && !std::isnan(best))) {
                            best = xv[p * h * w + i];
                            best_i = i;
                        }
                    }
                }
                const std::size_t oi = (p * ho + oy) * wo + ox;
                out[oi] = best;
                arg[oi] = static_cast<std::uint32_t>(best_i);
            }
    const std::size_t plane_out = ho * wo, plane_in = h * w;
    return record<T>("max_pool2d", std::move(out), {x}, [arg = std::move(arg), plane_out, plane_in](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t oi = 0; oi < arg.size(); ++oi) g[(oi / plane_out) * plane_in + arg[oi]] += n.grad[oi];
    });
}

template <std::floating_point T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("upsample_nearest2x: expected [B,C,H,W], got " + shape_str(s));
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    Tensor<T> out(Shape{s[0], s[1], 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(p * 2 * h + y) * 2 * w + xx] = x.value()[(p * h + y / 2) * w + xx / 2];
    return record<T>("upsample_nearest2x", std::move(out), {x}, [planes, h, w](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    g[(p * h + y / 2) * w + xx / 2] += n.grad[(p * 2 * h + y) * 2 * w + xx];
    });
}

/// Samples feature[B,C,H,W] at fractional (y, x) pixel positions coords[B,2,K,Ho,Wo] -> [B,C,K,Ho,Wo].
/// Positions outside the map read zeros. Differentiable in both the feature and the positions.
template <std::floating_point T>
Var<T> bilinear_sample(const Var<T>& feature, const Var<T>& coords) {
    const Shape& sf = feature.shape();
    const Shape& sc = coords.shape();
    if (sf.size() != 4 || sc.size() != 5 || sc[0] != sf[0] || sc[1] != 2)
        throw ShapeError("bilinear_sample: feature " + shape_str(sf) + " incompatible with coords " + shape_str(sc));
    const std::size_t b = sf[0], c = sf[1], h = sf[2], w = sf[3];
    const std::size_t k = sc[2], ho = sc[3], wo = sc[4];
    const std::size_t pts = k * ho * wo;
    Tensor<T> out(Shape{b, c, k, ho, wo});

    // Corner reads and weights are shared by the forward and adjoint passes.
    struct Corner {
        long y0, x0;
        T wy, wx;
    };
    // Far-away or non-finite cells map to an all-outside corner; NaN still reaches the weights.
    auto cell = [](T f, std::size_t n) {
        return std::isfinite(f) ? static_cast<long>(std::clamp(f, T(-2), static_cast<T>(n) + T(1))) : -2L;
    };
    auto corner = [pts, cell, h, w](const T* cv, std::size_t bi, std::size_t p) {
        const T y = cv[(bi * 2 + 0) * pts + p];
        const T xx = cv[(bi * 2 + 1) * pts + p];
        const T fy = std::floor(y), fx = std::floor(xx);
        return Corner{cell(fy, h), cell(fx, w), y - fy, xx - fx};
    };
    auto read = [h, w](const T* plane, long y, long x) -> T {
        return (y >= 0 && y < static_cast<long>(h) && x >= 0 && x < static_cast<long>(w))
                   ? plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)]
                   : T(0);
    };
    const T* fv = feature.value().ptr();
    const T* cv = coords.value().ptr();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t p = 0; p < pts; ++p) {
            const Corner q = corner(cv, bi, p);
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* plane = fv + (bi * c + ci) * h * w;
                const T v00 = read(plane, q.y0, q.x0), v01 = read(plane, q.y0, q.x0 + 1);
                const T v10 = read(plane, q.y0 + 1, q.x0), v11 = read(plane, q.y0 + 1, q.x0 + 1);
                out[(bi * c + ci) * pts + p] = (T(1) - q.wy) * ((T(1) - q.wx) * v00 + q.wx * v01) +
                                               q.wy * ((T(1) - q.wx) * v10 + q.wx * v11);
            }
        }
    return record<T>("bilinear_sample", std::move(out), {feature, coords}, [=](Node<T>& n) {
        const T* fv = n.in(0).ptr();
        const T* cv = n.in(1).ptr();
        T* gf = n.wants(0) ? n.in_grad(0).ptr() : nullptr;
        T* gc = n.wants(1) ? n.in_grad(1).ptr() : nullptr;
        auto scatter = [h, w](T* plane, long y, long x, T v) {
            if (y >= 0 && y < static_cast<long>(h) && x >= 0 && x < static_cast<long>(w))
                plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] += v;
        };
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t p = 0; p < pts; ++p) {
                const Corner q = corner(cv, bi, p);
                T dy = 0, dx = 0;
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const T go = n.grad[(bi * c + ci) * pts + p];
                    if (go == T(0)) continue;
                    if (gf) {
                        T* plane = gf + (bi * c + ci) * h * w;
                        scatter(plane, q.y0, q.x0, go * (T(1) - q.wy) * (T(1) - q.wx));
                        scatter(plane, q.y0, q.x0 + 1, go * (T(1) - q.wy) * q.wx);
                        scatter(plane, q.y0 + 1, q.x0, go * q.wy * (T(1) - q.wx));
                        scatter(plane, q.y0 + 1, q.x0 + 1, go * q.wy * q.wx);
                    }
                    if (gc) {
                        const T* plane = fv + (bi * c + ci) * h * w;
                        const T v00 = read(plane, q.y0, q.x0), v01 = read(plane, q.y0, q.x0 + 1);
                        const T v10 = read(plane, q.y0 + 1, q.x0), v11 = read(plane, q.y0 + 1, q.x0 + 1);
                        dy += go * ((T(1) - q.wx) * (v10 - v00) + q.wx * (v11 - v01));
                        dx += go * ((T(1) - q.wy) * (v01 - v00) + q.wy * (v11 - v10));
                    }
                }
                if (gc) {
                    gc[(bi * 2 + 0) * pts + p] += dy;
                    gc[(bi * 2 + 1) * pts + p] += dx;
                }
            }
    });
}

}  // namespace ssw
