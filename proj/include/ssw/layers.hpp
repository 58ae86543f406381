#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ssw/ops.hpp"

namespace ssw {

template <std::floating_point T>
struct Conv2d {
    Var<T> weight;
    Var<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2d() = default;
    /// Square kernel; padding defaults to "same" for stride 1.
    Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
           std::size_t stride_ = 1, InitRule rule = InitRule::FanInUniform, bool with_bias = true)
        : stride(stride_), padding((kernel - 1) / 2) {
        weight = ps.add(join_name(name, "weight"), Shape{out, in, kernel, kernel}, rule);
        if (with_bias) bias = ps.add(join_name(name, "bias"), Shape{out}, InitRule::Zeros);
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

};

template <std::floating_point T>
struct Linear {
    Var<T> weight;
    Var<T> bias;

    Linear() = default;
    Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true,
           InitRule rule = InitRule::FanInUniform) {
        weight = ps.add(join_name(name, "weight"), Shape{out, in}, rule);
        if (with_bias) bias = ps.add(join_name(name, "bias"), Shape{out}, InitRule::Zeros);
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <std::floating_point T>
struct LayerNorm {
    Var<T> gamma;
    Var<T> beta;
    T eps = T(1e-5);

    LayerNorm() = default;
    LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t channels) {
        gamma = ps.add(join_name(name, "gamma"), Shape{channels}, InitRule::Ones);
        beta = ps.add(join_name(name, "beta"), Shape{channels}, InitRule::Zeros);
    }

    Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

/// Deterministic per seed; parameters are filled in registration order from one stream.
template <std::floating_point T>
void init_parameters(ParameterSet<T>& ps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : ps.all()) {
        auto& v = p.mutable_value();
        switch (p.init) {
            case InitRule::Zeros:
                v.fill(T(0));
                break;
            case InitRule::Ones:
                v.fill(T(1));
                break;
            case InitRule::SmallUniform: {
                std::uniform_real_distribution<double> d(-0.02, 0.02);
                for (auto& x : v.data()) x = static_cast<T>(d(rng));
                break;
            }
            case InitRule::FanInUniform: {
                const std::size_t fan_in = v.rank() > 1 ? v.size() / v.dim(0) : v.size();
                const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                std::uniform_real_distribution<double> d(-bound, bound);
                for (auto& x : v.data()) x = static_cast<T>(d(rng));
                break;
            }
        }
        p.var.zero_grad();
    }
}

}  // namespace ssw
