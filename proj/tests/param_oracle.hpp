#pragma once

// Closed-form parameter enumeration, written independently of the layer classes.

#include <cstddef>

#include "ssw/network.hpp"

namespace oracle {

inline std::size_t conv(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }
inline std::size_t linear(std::size_t in, std::size_t out, bool bias = true) { return out * in + (bias ? out : 0); }
inline std::size_t norm(std::size_t c) { return 2 * c; }

inline std::size_t snake(std::size_t in, std::size_t out, std::size_t k) {
    return conv(in, k - 1, 3) + out * in * k + out;
}

inline std::size_t dsconv_block(std::size_t in, std::size_t out, std::size_t k) {
    return 2 * snake(in, out, k) + conv(in, out, 3) + conv(3 * out, out, 1);
}

inline std::size_t swin_block(std::size_t c, std::size_t m, std::size_t heads, bool rel_bias) {
    const std::size_t attn = linear(c, 3 * c) + linear(c, c) + (rel_bias ? (2 * m - 1) * (2 * m - 1) * heads : 0);
    return norm(c) + attn + norm(c) + linear(c, 4 * c) + linear(4 * c, c);
}

inline std::size_t merge(std::size_t c) { return norm(4 * c) + linear(4 * c, 2 * c, false); }

inline std::size_t model(const ssw::ArchitectureConfig& cfg) {
    std::size_t total = 0, in = cfg.in_channels;
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        const std::size_t c = cfg.init_channels << k, h = c / 2;
        total += dsconv_block(in, h, cfg.kernel_points) + 2 * swin_block(h, cfg.window, ssw::default_heads(h), cfg.relative_bias) +
                 merge(h);
        if (cfg.variant == ssw::Variant::DualBranch) total += conv(in, h, 1) + conv(h, c, 3) + conv(2 * c, c, 1);
        in = c;
    }
    for (std::size_t k = cfg.depth; k-- > 0;) {
        const std::size_t c = cfg.init_channels << k, h = c / 2;
        const std::size_t skip = cfg.variant == ssw::Variant::DualBranch ? c : h;
        total += conv(in + skip, h, 3) + conv(h, h, 3);
        in = h;
    }
    return total + conv(in, cfg.out_channels, 1);
}

}  // namespace oracle
