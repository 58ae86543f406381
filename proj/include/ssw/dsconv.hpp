#pragma once

// Dynamic snake convolution. Each output pixel samples `kernel_points` positions along a
// line; along one axis the positions are rigid (j + m), along the other they drift by the
// running sum of learned per-step offsets, walking outward from the kernel center.
//
// Note: `kernel_points` is the total number of sample points (center included), so the
// reach on each side is (kernel_points - 1) / 2.

#include <string>

#include "ssw/layers.hpp"

namespace ssw {

/// X deforms the y-coordinates over a fixed x-grid; Y is the transpose.
enum class SnakeAxis { X, Y };

struct DSConvConfig {
    SnakeAxis axis = SnakeAxis::X;
    std::size_t kernel_points = 9;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    void validate() const {
        if (kernel_points == 0 || kernel_points % 2 == 0)
            throw std::invalid_argument("dsconv: kernel_points must be odd and positive, got " +
                                        std::to_string(kernel_points));
        if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("dsconv: channel counts must be positive");
    }
    std::size_t reach() const { return (kernel_points - 1) / 2; }
};

/// Offset channel that drives the step taken into sample point m (m != 0).
inline std::size_t snake_offset_channel(long m, std::size_t half) {
    const long h = static_cast<long>(half);
    return static_cast<std::size_t>(m < 0 ? m + h : m + h - 1);
}

/// offsets[B, K-1, H, W] -> positions[B, 2, K, H, W] as (y, x) pixel coordinates.
/// The deformed coordinate of point m is the cumulative offset sum from the center out to m.
template <std::floating_point T>
Var<T> accumulate_positions(const Var<T>& offsets, SnakeAxis axis, std::size_t kernel_points) {
    const Shape& s = offsets.shape();
    if (s.size() != 4 || s[1] + 1 != kernel_points)
        throw ShapeError("accumulate_positions: offsets " + shape_str(s) + " do not match kernel_points " +
                         std::to_string(kernel_points));
    const std::size_t b = s[0], h = s[2], w = s[3], k = kernel_points, half = (k - 1) / 2;
    const std::size_t hw = h * w;
    const std::size_t rigid = axis == SnakeAxis::X ? 1 : 0;  // channel of the undeformed coordinate
    const std::size_t drift = 1 - rigid;
    Tensor<T> pos(Shape{b, 2, k, h, w});
    const T* ov = offsets.value().ptr();
    std::vector<T> disp(k);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t p = 0; p < hw; ++p) {
            const T base[2] = {static_cast<T>(p / w), static_cast<T>(p % w)};
            disp[half] = 0;
            for (std::size_t t = 1; t <= half; ++t) {
                disp[half + t] = disp[half + t - 1] + ov[(bi * (k - 1) + snake_offset_channel(static_cast<long>(t), half)) * hw + p];
                disp[half - t] = disp[half - t + 1] + ov[(bi * (k - 1) + snake_offset_channel(-static_cast<long>(t), half)) * hw + p];
            }
            for (std::size_t ki = 0; ki < k; ++ki) {
                const T m = static_cast<T>(static_cast<long>(ki) - static_cast<long>(half));
                pos[((bi * 2 + rigid) * k + ki) * hw + p] = base[rigid] + m;
                pos[((bi * 2 + drift) * k + ki) * hw + p] = base[drift] + disp[ki];
            }
        }
    return record<T>("accumulate_positions", std::move(pos), {offsets}, [=](Node<T>& n) {
        auto& g = n.in_grad(0);
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t p = 0; p < hw; ++p) {
                T run_pos = 0, run_neg = 0;
                for (std::size_t t = half; t >= 1; --t) {
                    run_pos += n.grad[((bi * 2 + drift) * k + half + t) * hw + p];
                    run_neg += n.grad[((bi * 2 + drift) * k + half - t) * hw + p];
                    g[(bi * (k - 1) + snake_offset_channel(static_cast<long>(t), half)) * hw + p] += run_pos;
                    g[(bi * (k - 1) + snake_offset_channel(-static_cast<long>(t), half)) * hw + p] += run_neg;
                }
            }
    });
}

template <std::floating_point T>
class DSConv {
   public:
    DSConv() = default;
    DSConv(ParameterSet<T>& ps, const std::string& name, DSConvConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t k = cfg_.kernel_points;
        // Zero-initialized so a fresh layer starts as a rigid line kernel.
        offset_ = Conv2d<T>(ps, join_name(name, "offset"), cfg_.in_channels, k - 1, 3, 1, InitRule::Zeros);
        weight_ = ps.add(join_name(name, "weight"), Shape{cfg_.out_channels, cfg_.in_channels, k});
        bias_ = ps.add(join_name(name, "bias"), Shape{cfg_.out_channels}, InitRule::Zeros);
    }

    const DSConvConfig& config() const noexcept { return cfg_; }
    const Conv2d<T>& offset_conv() const noexcept { return offset_; }
    const Var<T>& weight() const noexcept { return weight_; }
    const Var<T>& bias() const noexcept { return bias_; }

    /// tanh-squashed per-step offsets, one channel per non-center point.
    Var<T> predict_offsets(const Var<T>& feature) const { return tanh(offset_(feature)); }

    Var<T> positions(const Var<T>& feature) const {
        return accumulate_positions(predict_offsets(feature), cfg_.axis, cfg_.kernel_points);
    }

    Var<T> operator()(const Var<T>& feature) const {
        check_input(feature.shape());
        return contract(bilinear_sample(feature, positions(feature)));
    }

    /// sampled[B, C, K, H, W] x weight[O, C, K] + bias -> [B, O, H, W]
    Var<T> contract(const Var<T>& sampled) const {
        const Shape& s = sampled.shape();
        const std::size_t b = s[0], c = s[1], k = s[2], h = s[3], w = s[4];
        auto rows = reshape(permute(sampled, {0, 3, 4, 1, 2}), Shape{b, h, w, c * k});
        auto y = linear(rows, reshape(weight_, Shape{cfg_.out_channels, c * k}), bias_);
        return permute(y, {0, 3, 1, 2});
    }

    void check_input(const Shape& s) const {
        if (s.size() != 4 || s[1] != cfg_.in_channels)
            throw ShapeError("dsconv: input " + shape_str(s) + " does not have " + std::to_string(cfg_.in_channels) +
                             " channels");
        if (s[2] < cfg_.kernel_points || s[3] < cfg_.kernel_points)
            throw ShapeError("dsconv: spatial extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                             " smaller than kernel reach of " + std::to_string(cfg_.kernel_points) + " points");
    }


   private:
    DSConvConfig cfg_;
    Conv2d<T> offset_;
    Var<T> weight_;
    Var<T> bias_;
};

/// X-axis snake, Y-axis snake and a plain 3x3 conv in parallel, concatenated on channels
/// and fused by a 1x1 conv, then ReLU.
template <std::floating_point T>
class DSConvBlock {
   public:
    DSConvBlock() = default;
    DSConvBlock(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                std::size_t kernel_points = 9)
        : x_(ps, join_name(name, "snake_x"), {SnakeAxis::X, kernel_points, in, out}),
          y_(ps, join_name(name, "snake_y"), {SnakeAxis::Y, kernel_points, in, out}),
          standard_(ps, join_name(name, "conv3x3"), in, out, 3),
          fuse_(ps, join_name(name, "fuse"), 3 * out, out, 1) {}

    Var<T> operator()(const Var<T>& x) const { return relu(fuse_(concat<T>({x_(x), y_(x), standard_(x)}, 1))); }

    const DSConv<T>& snake_x() const noexcept { return x_; }
    const DSConv<T>& snake_y() const noexcept { return y_; }
    const Conv2d<T>& standard() const noexcept { return standard_; }
    const Conv2d<T>& fuse() const noexcept { return fuse_; }


   private:
    DSConv<T> x_;
    DSConv<T> y_;
    Conv2d<T> standard_;
    Conv2d<T> fuse_;
};

}  // namespace ssw
