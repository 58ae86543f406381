#pragma once

// Finite-difference audit of every primitive and composite, run in 64-bit mode on
// random inputs of at most 64 elements. Shared by the test suites and the CLI.

#include <cstdint>
#include <vector>

#include "ssw/dsconv.hpp"
#include "ssw/gradcheck.hpp"
#include "ssw/losses.hpp"
#include "ssw/swin.hpp"

namespace ssw {

inline constexpr double kGradTolerance = 1e-3;
inline constexpr double kGradStep = 1e-5;

namespace detail {

inline std::vector<Var<double>> with_params(std::vector<Var<double>> leaves, ParameterSet<double>& ps) {
    for (auto& p : ps.all()) leaves.push_back(p.var);
    return leaves;
}

/// Re-draws every parameter uniformly so that zero-initialized layers are exercised too.
inline void randomize(ParameterSet<double>& ps, std::uint64_t seed, double lo = -0.5, double hi = 0.5) {
    for (auto& p : ps.all()) p.mutable_value() = random_uniform<double>(p.value().shape(), seed++, lo, hi);
}

}  // namespace detail

inline std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed = 7) {
    using V = Var<double>;
    std::vector<GradCheckReport> out;
    std::uint64_t s = seed;
    auto leaf = [&s](Shape shape, double lo = -1, double hi = 1) { return V::leaf(random_uniform<double>(std::move(shape), s++, lo, hi)); };
    auto check = [&](std::string name, std::vector<V> leaves, auto fn) {
        const std::uint64_t proj = s++;
        out.push_back(gradcheck(std::move(name), [&, fn, proj] { return random_projection(fn(), proj); }, leaves, kGradStep));
    };

    // Elementwise and reductions.
    {
        auto a = leaf({2, 3, 4}), b = leaf({2, 3, 4}), pos = leaf({2, 3, 4}, 0.5, 2.0);
        check("add", {a, b}, [=] { return add(a, b); });
        check("sub", {a, b}, [=] { return sub(a, b); });
        check("mul", {a, b}, [=] { return mul(a, b); });
        check("div", {a, pos}, [=] { return div(a, pos); });
        check("minimum", {a, b}, [=] { return minimum(a, b); });
        check("scale", {a}, [=] { return scale(a, 1.7); });
        check("add_scalar", {a}, [=] { return add_scalar(a, 0.3); });
        check("relu", {a}, [=] { return relu(a); });
        check("gelu", {a}, [=] { return gelu(a); });
        check("tanh", {a}, [=] { return tanh(a); });
        check("sigmoid", {a}, [=] { return sigmoid(a); });
        check("sum", {a}, [=] { return sum(a); });
        check("mean", {a}, [=] { return mean(a); });
        auto row = leaf({1, 3, 1});
        check("add_broadcast", {a, row}, [=] { return add_broadcast(a, row); });
    }
    // Layout.
    {
        auto a = leaf({2, 3, 4}), b = leaf({2, 2, 4});
        check("reshape", {a}, [=] { return reshape(a, Shape{6, 4}); });
        check("permute", {a}, [=] { return permute(a, {2, 0, 1}); });
        check("concat", {a, b}, [=] { return concat<double>({a, b}, 1); });
        check("slice", {a}, [=] { return slice(a, 2, 1, 2); });
        check("cyclic_roll", {a}, [=] { return cyclic_roll(a, 2, -3); });
        check("pad_reflect", {a}, [=] { return pad_reflect(a, 2, 2, 3); });
        auto table = leaf({5, 3});
        check("index_select", {table}, [=] { return index_select(table, {4, 0, 0, 2, 3, 4}); });
    }
    // Linear algebra and normalization.
    {
        auto a = leaf({2, 3, 4}), b = leaf({2, 4, 5}), bt = leaf({2, 5, 4});
        check("matmul", {a, b}, [=] { return matmul(a, b); });
        check("matmul_transposed", {a, bt}, [=] { return matmul(a, bt, true); });
        auto w = leaf({5, 4}), bias = leaf({5});
        check("linear", {a, w, bias}, [=] { return linear(a, w, bias); });
        auto g = leaf({4}, 0.5, 1.5), beta = leaf({4});
        check("layer_norm", {a, g, beta}, [=] { return layer_norm(a, g, beta); });
        check("softmax_last", {a}, [=] { return softmax(a, -1); });
        check("softmax_axis1", {a}, [=] { return softmax(a, 1); });
    }
    // Spatial.
    {
        auto x = leaf({1, 2, 5, 5}), w = leaf({3, 2, 3, 3}), b = leaf({3});
        check("conv2d", {x, w, b}, [=] { return conv2d(x, w, b, 1, 1); });
        check("conv2d_stride2", {x, w, b}, [=] { return conv2d(x, w, b, 2, 1); });
        auto w1 = leaf({3, 2, 1, 1});
        check("conv2d_pointwise", {x, w1, b}, [=] { return conv2d(x, w1, b, 1, 0); });
        check("max_pool2d", {x}, [=] { return max_pool2d(x, 3, 3, 1, 1, 1, 1); });
        check("max_pool2d_3x1", {x}, [=] { return max_pool2d(x, 3, 1, 1, 1, 1, 0); });
        auto small = leaf({1, 2, 3, 3});
        check("upsample_nearest2x", {small}, [=] { return upsample_nearest2x(small); });
        auto f = leaf({1, 2, 4, 4});
        // Fractional positions away from the grid so the interpolation is smooth.
        Tensor<double> c = random_uniform<double>({1, 2, 2, 2, 3}, s++, -0.8, 3.8);
        for (auto& v : c.data())
            if (std::abs(v - std::round(v)) < 0.05) v += 0.1;
        auto coords = V::leaf(c);
        check("bilinear_sample", {f, coords}, [=] { return bilinear_sample(f, coords); });
        auto offs = leaf({1, 4, 3, 3});
        check("accumulate_positions_x", {offs}, [=] { return accumulate_positions(offs, SnakeAxis::X, 5); });
        check("accumulate_positions_y", {offs}, [=] { return accumulate_positions(offs, SnakeAxis::Y, 5); });
    }
    // Composites.
    {
        ParameterSet<double> ps;
        DSConv<double> snake(ps, "snake", {SnakeAxis::X, 3, 2, 2});
        detail::randomize(ps, s++);
        auto x = leaf({1, 2, 4, 4});
        check("dsconv", detail::with_params({x}, ps), [=] { return snake(x); });
    }
    {
        ParameterSet<double> ps;
        DSConvBlock<double> block(ps, "block", 2, 2, 3);
        detail::randomize(ps, s++);
        block.fuse().bias.node()->value.fill(0.5);  // keep the output ReLU mostly open
        auto x = leaf({1, 2, 4, 4});
        check("dsconv_block", detail::with_params({x}, ps), [=] { return block(x); });
    }
    {
        ParameterSet<double> ps;
        WindowAttention<double> attn(ps, "attn", 4, 2, 2);
        detail::randomize(ps, s++);
        auto x = leaf({4, 4, 4});
        auto mask = build_shift_mask<double>(4, 4, 2, 1);
        check("window_attention_masked", detail::with_params({x}, ps), [=] { return attn(x, &mask); });
    }
    {
        ParameterSet<double> ps;
        SwinBlockPair<double> pair(ps, "pair", 4, 2, 2);
        detail::randomize(ps, s++);
        auto x = leaf({1, 4, 4, 4});
        check("swin_block_pair", detail::with_params({x}, ps), [=] { return pair(x); });
    }
    {
        ParameterSet<double> ps;
        PatchMerging<double> merge(ps, "merge", 2);
        detail::randomize(ps, s++);
        auto x = leaf({1, 4, 4, 2});
        check("patch_merging", detail::with_params({x}, ps), [=] { return merge(x); });
    }
    {
        auto pred = leaf({1, 1, 8, 8}, 0.05, 0.95);
        Tensor<double> t = random_uniform<double>({1, 1, 8, 8}, s++, 0.0, 1.0);
        for (auto& v : t.data()) v = v > 0.5 ? 1.0 : 0.0;
        auto target = V::constant(t);
        out.push_back(gradcheck("cl_dice_loss", [=] { return cl_dice_loss(pred, target); }, {pred}, kGradStep));
    }
    return out;
}

}  // namespace ssw
