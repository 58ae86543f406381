#pragma once

// Shifted-window attention blocks on channels-last feature maps [B, H, W, C].

#include <cmath>
#include <optional>
#include <string>

#include "ssw/layers.hpp"

namespace ssw {

/// Additive logit penalty between tokens from different pre-shift regions.
inline constexpr double kMaskLarge = 1e9;

struct WindowConfig {
    std::size_t window = 8;
    std::size_t shift = 0;
    std::size_t heads = 1;
    bool relative_bias = true;
};

/// round(channels / 36), at least 1, lowered until it divides `channels`.
inline std::size_t default_heads(std::size_t channels) {
    std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(channels) / 36.0)));
    while (channels % h != 0) --h;
    return h;
}

/// [B, H, W, C] -> [B * nW, M*M, C], windows in row-major order of the window grid.
template <std::floating_point T>
Var<T> window_partition(const Var<T>& x, std::size_t m) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("window_partition: expected [B,H,W,C], got " + shape_str(s));
    if (m == 0 || s[1] % m != 0 || s[2] % m != 0)
        throw ShapeError("window_partition: extents " + shape_str(s) + " not divisible by window " + std::to_string(m));
    const std::size_t b = s[0], h = s[1], w = s[2], c = s[3];
    auto t = reshape(x, Shape{b, h / m, m, w / m, m, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, Shape{b * (h / m) * (w / m), m * m, c});
}

/// Inverse of window_partition.
template <std::floating_point T>
Var<T> window_reverse(const Var<T>& windows, std::size_t m, std::size_t b, std::size_t h, std::size_t w) {
    const Shape& s = windows.shape();
    if (s.size() != 3 || s[1] != m * m || h % m != 0 || w % m != 0 || s[0] != b * (h / m) * (w / m))
        throw ShapeError("window_reverse: windows " + shape_str(s) + " do not tile a " + std::to_string(h) + "x" +
                         std::to_string(w) + " map with window " + std::to_string(m));
    const std::size_t c = s[2];
    auto t = reshape(windows, Shape{b, h / m, w / m, m, m, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, Shape{b, h, w, c});
}

/// Region label of each pixel of an H x W map before the (-s, -s) roll; 3 bands per axis.
inline std::vector<int> shift_region_labels(std::size_t h, std::size_t w, std::size_t m, std::size_t s) {
    auto band = [m, s](std::size_t i, std::size_t n) { return i < n - m ? 0 : (i < n - s ? 1 : 2); };
    std::vector<int> labels(h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) labels[i * w + j] = band(i, h) * 3 + band(j, w);
    return labels;
}

/// [nW, M*M, M*M] additive mask for attention on a map rolled by (-s, -s).
template <std::floating_point T = float>
Tensor<T> build_shift_mask(std::size_t h, std::size_t w, std::size_t m, std::size_t s) {
    if (m == 0 || h % m != 0 || w % m != 0) throw ShapeError("build_shift_mask: extents not divisible by window");
    if (s == 0 || s >= m) throw std::invalid_argument("build_shift_mask: shift must satisfy 0 < s < M");
    const auto labels = shift_region_labels(h, w, m, s);
    const std::size_t nh = h / m, nw = w / m, t = m * m;
    Tensor<T> mask(Shape{nh * nw, t, t});
    std::vector<int> win(t);
    for (std::size_t wy = 0; wy < nh; ++wy)
        for (std::size_t wx = 0; wx < nw; ++wx) {
            for (std::size_t p = 0; p < t; ++p) win[p] = labels[(wy * m + p / m) * w + wx * m + p % m];
            T* dst = mask.ptr() + (wy * nw + wx) * t * t;
            for (std::size_t a = 0; a < t; ++a)
                for (std::size_t b = 0; b < t; ++b) dst[a * t + b] = win[a] == win[b] ? T(0) : T(-kMaskLarge);
        }
    return mask;
}

/// Multi-head self-attention inside each window, with an optional learned relative position bias.
template <std::floating_point T>
class WindowAttention {
   public:
    WindowAttention() = default;
    WindowAttention(ParameterSet<T>& ps, const std::string& name, std::size_t channels, std::size_t window,
                    std::size_t heads, bool relative_bias = true)
        : channels_(channels), window_(window), heads_(heads) {
        if (heads == 0 || channels % heads != 0)
            throw std::invalid_argument("window_attention: channels " + std::to_string(channels) +
                                        " not divisible by heads " + std::to_string(heads));
        qkv_ = Linear<T>(ps, join_name(name, "qkv"), channels, 3 * channels);
        proj_ = Linear<T>(ps, join_name(name, "proj"), channels, channels);
        if (relative_bias)
            bias_table_ = ps.add(join_name(name, "relative_bias"), Shape{(2 * window - 1) * (2 * window - 1), heads},
                                 InitRule::SmallUniform);
    }

    std::size_t heads() const noexcept { return heads_; }
    const Linear<T>& qkv() const noexcept { return qkv_; }
    const Linear<T>& proj() const noexcept { return proj_; }
    const Var<T>& bias_table() const noexcept { return bias_table_; }

    /// windows [N, M*M, C]; mask [nW, M*M, M*M] with N a multiple of nW.
    /// When `probs` is non-null it receives the post-softmax weights [N, heads, M*M, M*M].
    Var<T> operator()(const Var<T>& windows, const Tensor<T>* mask = nullptr, Var<T>* probs = nullptr) const {
        const Shape& s = windows.shape();
        if (s.size() != 3 || s[2] != channels_)
            throw ShapeError("window_attention: expected [N,T," + std::to_string(channels_) + "], got " + shape_str(s));
        const std::size_t n = s[0], t = s[1], c = s[2], d = c / heads_;
        const std::size_t m = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(t))));
        if (m * m != t || m > window_) throw ShapeError("window_attention: token count " + std::to_string(t) + " is not a window of size <= " + std::to_string(window_));

        auto qkv = permute(reshape(qkv_(windows), Shape{n, t, 3, heads_, d}), {2, 0, 3, 1, 4});
        auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, 1), Shape{n, heads_, t, d}); };
        auto q = scale(part(0), T(1) / std::sqrt(static_cast<T>(d)));
        auto logits = matmul(q, part(1), true);
        if (bias_table_.valid()) {
            auto bias = permute(index_select(bias_table_, relative_index(m)), {1, 0});
            logits = add_broadcast(logits, reshape(bias, Shape{1, heads_, t, t}));
        }
        if (mask) {
            const std::size_t nw = mask->dim(0);
            if (mask->shape() != Shape{nw, t, t} || n % nw != 0)
                throw ShapeError("window_attention: mask " + shape_str(mask->shape()) + " does not fit " + shape_str(s));
            auto l5 = reshape(logits, Shape{n / nw, nw, heads_, t, t});
            l5 = add_broadcast(l5, Var<T>::constant(mask->reshaped(Shape{1, nw, 1, t, t})));
            logits = reshape(l5, Shape{n, heads_, t, t});
        }
        auto attn = softmax(logits, -1);
        if (probs) *probs = attn;
        auto out = permute(matmul(attn, part(2)), {0, 2, 1, 3});
        return proj_(reshape(out, Shape{n, t, c}));
    }

   private:
    /// Table row for each token pair of an m x m window (m <= configured window).
    std::vector<std::size_t> relative_index(std::size_t m) const {
        const long span = 2 * static_cast<long>(window_) - 1;
        const long off = static_cast<long>(window_) - 1;
        std::vector<std::size_t> idx;
        idx.reserve(m * m * m * m);
        for (std::size_t a = 0; a < m * m; ++a)
            for (std::size_t b = 0; b < m * m; ++b) {
                const long dy = static_cast<long>(a / m) - static_cast<long>(b / m) + off;
                const long dx = static_cast<long>(a % m) - static_cast<long>(b % m) + off;
                idx.push_back(static_cast<std::size_t>(dy * span + dx));
            }
        return idx;
    }

    std::size_t channels_ = 0;
    std::size_t window_ = 0;
    std::size_t heads_ = 1;
    Linear<T> qkv_;
    Linear<T> proj_;
    Var<T> bias_table_;
};

template <std::floating_point T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;

    Mlp() = default;
    Mlp(ParameterSet<T>& ps, const std::string& name, std::size_t channels)
        : fc1(ps, join_name(name, "fc1"), channels, 4 * channels), fc2(ps, join_name(name, "fc2"), 4 * channels, channels) {}

    Var<T> operator()(const Var<T>& x) const { return fc2(gelu(fc1(x))); }
};

/// One pre-norm transformer block: (S)W-MSA then MLP, each with a residual connection.
template <std::floating_point T>
class SwinBlock {
   public:
    SwinBlock() = default;
    SwinBlock(ParameterSet<T>& ps, const std::string& name, std::size_t channels, WindowConfig cfg)
        : cfg_(cfg),
          norm1_(ps, join_name(name, "norm1"), channels),
          attn_(ps, join_name(name, "attn"), channels, cfg.window, cfg.heads, cfg.relative_bias),
          norm2_(ps, join_name(name, "norm2"), channels),
          mlp_(ps, join_name(name, "mlp"), channels) {
        if (cfg.window == 0 || cfg.shift >= cfg.window)
            throw std::invalid_argument("swin block: shift must satisfy 0 <= s < M");
    }

    const WindowConfig& config() const noexcept { return cfg_; }
    const WindowAttention<T>& attention() const noexcept { return attn_; }
    const Mlp<T>& mlp() const noexcept { return mlp_; }

    /// Window actually used on an H x W map: maps smaller than M use one whole-map window, unshifted.
    std::pair<std::size_t, std::size_t> effective_window(std::size_t h, std::size_t w) const {
        const std::size_t m = std::min({cfg_.window, h, w});
        return {m, m < cfg_.window ? 0 : cfg_.shift};
    }

    Var<T> operator()(const Var<T>& x) const {
        const Shape& s = x.shape();
        if (s.size() != 4) throw ShapeError("swin block: expected [B,H,W,C], got " + shape_str(s));
        const std::size_t b = s[0], h = s[1], w = s[2];
        const auto [m, shift] = effective_window(h, w);
        const std::size_t hp = (h + m - 1) / m * m, wp = (w + m - 1) / m * m;

        auto y = norm1_(x);
        y = pad_reflect(pad_reflect(y, 1, 0, hp - h), 2, 0, wp - w);
        std::optional<Tensor<T>> mask;
        if (shift > 0) {
            y = cyclic_roll(cyclic_roll(y, 1, -static_cast<long>(shift)), 2, -static_cast<long>(shift));
            mask = build_shift_mask<T>(hp, wp, m, shift);
        }
        y = window_reverse(attn_(window_partition(y, m), mask ? &*mask : nullptr), m, b, hp, wp);
        if (shift > 0) y = cyclic_roll(cyclic_roll(y, 1, static_cast<long>(shift)), 2, static_cast<long>(shift));
        if (hp != h) y = slice(y, 1, 0, h);
        if (wp != w) y = slice(y, 2, 0, w);
        auto x1 = add(x, y);
        return add(x1, mlp_(norm2_(x1)));
    }

   private:
    WindowConfig cfg_;
    LayerNorm<T> norm1_;
    WindowAttention<T> attn_;
    LayerNorm<T> norm2_;
    Mlp<T> mlp_;
};

/// W-MSA block followed by an SW-MSA block with shift floor(M/2).
template <std::floating_point T>
class SwinBlockPair {
   public:
    SwinBlockPair() = default;
    SwinBlockPair(ParameterSet<T>& ps, const std::string& name, std::size_t channels, std::size_t window,
                  std::size_t heads, bool relative_bias = true)
        : regular_(ps, join_name(name, "wmsa"), channels, {window, 0, heads, relative_bias}),
          shifted_(ps, join_name(name, "swmsa"), channels, {window, window / 2, heads, relative_bias}) {}

    Var<T> operator()(const Var<T>& x) const { return shifted_(regular_(x)); }

    const SwinBlock<T>& regular() const noexcept { return regular_; }
    const SwinBlock<T>& shifted() const noexcept { return shifted_; }

   private:
    SwinBlock<T> regular_;
    SwinBlock<T> shifted_;
};

/// [B, H, W, C] -> [B, H/2, W/2, 2C]: the four 2x2-strided sub-grids concatenated, normed, projected.
template <std::floating_point T>
class PatchMerging {
   public:
    PatchMerging() = default;
    PatchMerging(ParameterSet<T>& ps, const std::string& name, std::size_t channels)
        : channels_(channels),
          norm_(ps, join_name(name, "norm"), 4 * channels),
          reduction_(ps, join_name(name, "reduction"), 4 * channels, 2 * channels, false) {}

    /// Channel block order: (0,0), (1,0), (0,1), (1,1) as (row, col) offsets in the 2x2 cell.
    static Var<T> gather(const Var<T>& x) {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0)
            throw ShapeError("patch_merging: extents must be even, got " + shape_str(s));
        const std::size_t b = s[0], h = s[1], w = s[2], c = s[3];
        auto t = reshape(x, Shape{b, h / 2, 2, w / 2, 2, c});
        t = permute(t, {0, 1, 3, 4, 2, 5});
        return reshape(t, Shape{b, h / 2, w / 2, 4 * c});
    }

    Var<T> operator()(const Var<T>& x) const {
        if (x.shape().size() != 4 || x.dim(3) != channels_)
            throw ShapeError("patch_merging: expected " + std::to_string(channels_) + " channels, got " + shape_str(x.shape()));
        return reduction_(norm_(gather(x)));
    }

   private:
    std::size_t channels_ = 0;
    LayerNorm<T> norm_;
    Linear<T> reduction_;
};

}  // namespace ssw
