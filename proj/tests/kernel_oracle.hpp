#pragma once

// Direct scalar references for the snake convolution and window attention.

#include <cmath>
#include <vector>

#include "ssw/dsconv.hpp"

namespace oracle {

using ssw::SnakeAxis;
using ssw::Tensor;

/// Rigid line kernel: X axis samples (i, j+m), Y axis samples (i+m, j); zero outside.
inline Tensor<double> rigid_line_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, SnakeAxis axis) {
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
    const long half = long(K - 1) / 2;
    Tensor<double> out({B, O, H, W});
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double acc = b[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t k = 0; k < K; ++k) {
                            const long m = long(k) - half;
                            const long yy = axis == SnakeAxis::X ? long(i) : long(i) + m;
                            const long xx = axis == SnakeAxis::X ? long(j) + m : long(j);
                            if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                            acc += w.at(o, c, k) * x.at(bi, c, yy, xx);
                        }
                    out.at(bi, o, i, j) = acc;
                }
    return out;
}

/// Scalar multi-head attention over all tokens of x [T, C], W/b from the qkv and proj layers.
inline Tensor<double> dense_attention(const Tensor<double>& x, const Tensor<double>& wqkv, const Tensor<double>& bqkv,
                               const Tensor<double>& wp, const Tensor<double>& bp, std::size_t heads) {
    const std::size_t t = x.dim(0), c = x.dim(1), d = c / heads;
    auto project = [&](std::size_t row, std::size_t tok) {
        double acc = bqkv[row];
        for (std::size_t k = 0; k < c; ++k) acc += wqkv.at(row, k) * x.at(tok, k);
        return acc;
    };
    Tensor<double> ctx({t, c});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t a = 0; a < t; ++a) {
            std::vector<double> logit(t);
            double mx = -1e300;
            for (std::size_t b = 0; b < t; ++b) {
                double s = 0;
                for (std::size_t e = 0; e < d; ++e) s += project(h * d + e, a) * project(c + h * d + e, b);
                logit[b] = s / std::sqrt(double(d));
                mx = std::max(mx, logit[b]);
            }
            double z = 0;
            for (auto& l : logit) z += (l = std::exp(l - mx));
            for (std::size_t e = 0; e < d; ++e) {
                double acc = 0;
                for (std::size_t b = 0; b < t; ++b) acc += logit[b] / z * project(2 * c + h * d + e, b);
                ctx.at(a, h * d + e) = acc;
            }
        }
    Tensor<double> out({t, c});
    for (std::size_t a = 0; a < t; ++a)
        for (std::size_t o = 0; o < c; ++o) {
            double acc = bp[o];
            for (std::size_t k = 0; k < c; ++k) acc += wp.at(o, k) * ctx.at(a, k);
            out.at(a, o) = acc;
        }
    return out;
}

}  // namespace oracle
