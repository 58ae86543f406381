#pragma once

// Training-time augmentation. Geometric ops move input and target together;
// photometric ops touch the input only.

#include <numbers>
#include <random>

#include "ssw/pipeline/dataset.hpp"

namespace ssw::data {

struct AugmentConfig {
    double p_hflip = 0.5;
    double p_vflip = 0.5;
    double p_brightness = 0.5;
    double brightness_lo = 0.8, brightness_hi = 1.2;
    double p_rotate = 0.5;
    double max_degrees = 15.0;
    double p_blur = 0.3;
    double p_dropout = 0.3;
    std::size_t max_holes = 4;
    double max_hole_fraction = 0.1;

    static AugmentConfig none() { return {0, 0, 0, 0.8, 1.2, 0, 15.0, 0, 0, 4, 0.1}; }
};

/// Mirror along width (horizontal) or height (vertical), every plane of a [C, H, W] tensor.
inline Tensor<float> flip(const Tensor<float>& t, bool horizontal) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<float> out(t.shape());
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out.at(k, i, j) = horizontal ? t.at(k, i, w - 1 - j) : t.at(k, h - 1 - i, j);
    return out;
}

/// Rotation by `degrees` about the image center; samples falling outside read 0.
inline Tensor<float> rotate(const Tensor<float>& t, double degrees, bool nearest) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    const double a = degrees * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
    const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
    Tensor<float> out(t.shape());
    auto px = [&](std::size_t k, long y, long x) -> double {
        return (y < 0 || x < 0 || y >= long(h) || x >= long(w)) ? 0.0 : t.at(k, std::size_t(y), std::size_t(x));
    };
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            // Inverse map: output pixel -> source coordinate.
            const double dy = double(i) - cy, dx = double(j) - cx;
            const double sy = cy + ca * dy - sa * dx, sx = cx + sa * dy + ca * dx;
            for (std::size_t k = 0; k < c; ++k) {
                if (nearest) {
                    out.at(k, i, j) = static_cast<float>(px(k, std::lround(sy), std::lround(sx)));
                    continue;
                }
                const long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
                const double fy = sy - double(y0), fx = sx - double(x0);
                out.at(k, i, j) = static_cast<float>((1 - fy) * ((1 - fx) * px(k, y0, x0) + fx * px(k, y0, x0 + 1)) +
                                                     fy * ((1 - fx) * px(k, y0 + 1, x0) + fx * px(k, y0 + 1, x0 + 1)));
            }
        }
    return out;
}

/// 3x3 mean over in-bounds neighbours.
inline Tensor<float> box_blur(const Tensor<float>& t) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<float> out(t.shape());
    for (std::size_t k = 0; k < c; ++k)
        for (long i = 0; i < long(h); ++i)
            for (long j = 0; j < long(w); ++j) {
                double s = 0;
                int n = 0;
                for (long di = -1; di <= 1; ++di)
                    for (long dj = -1; dj <= 1; ++dj) {
                        const long y = i + di, x = j + dj;
                        if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) continue;
                        s += t.at(k, std::size_t(y), std::size_t(x));
                        ++n;
                    }
                out.at(k, std::size_t(i), std::size_t(j)) = static_cast<float>(s / n);
            }
    return out;
}

/// Applies each op independently with its probability. Output depends only on (sample, cfg, rng state).
inline SampleRecord augment(const SampleRecord& in, const AugmentConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SampleRecord s = in;
    // Decision draws come first, in a fixed order.
    const double r_h = u(rng), r_v = u(rng), r_b = u(rng), gain = u(rng), r_r = u(rng), angle = u(rng), r_bl = u(rng),
                 r_d = u(rng);
    if (r_h < cfg.p_hflip) s.input = flip(s.input, true), s.target = flip(s.target, true);
    if (r_v < cfg.p_vflip) s.input = flip(s.input, false), s.target = flip(s.target, false);
    if (r_b < cfg.p_brightness) {
        const float g = static_cast<float>(cfg.brightness_lo + gain * (cfg.brightness_hi - cfg.brightness_lo));
        for (float& v : s.input.data()) v = std::clamp(v * g, 0.0f, 1.0f);
    }
    if (r_r < cfg.p_rotate) {
        const double deg = (2 * angle - 1) * cfg.max_degrees;
        s.input = rotate(s.input, deg, false);
        s.target = rotate(s.target, deg, true);
    }
    if (r_bl < cfg.p_blur) s.input = box_blur(s.input);
    if (r_d < cfg.p_dropout && cfg.max_holes > 0) {
        const std::size_t h = s.height(), w = s.width();
        const std::size_t holes = 1 + static_cast<std::size_t>(u(rng) * double(cfg.max_holes)) % cfg.max_holes;
        for (std::size_t k = 0; k < holes; ++k) {
            const auto hh = std::max<std::size_t>(1, std::size_t(u(rng) * cfg.max_hole_fraction * double(h)));
            const auto hw = std::max<std::size_t>(1, std::size_t(u(rng) * cfg.max_hole_fraction * double(w)));
            const auto y0 = std::size_t(u(rng) * double(h - hh + 1)), x0 = std::size_t(u(rng) * double(w - hw + 1));
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = y0; i < std::min(h, y0 + hh); ++i)
                    for (std::size_t j = x0; j < std::min(w, x0 + hw); ++j) s.input.at(c, i, j) = 0.0f;
        }
    }
    return s;
}

}  // namespace ssw::data
