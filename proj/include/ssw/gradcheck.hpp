#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ssw/ops.hpp"

namespace ssw {

struct GradCheckReport {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero = 0;  // analytic entries with |g| > 1e-8; zero means the check was vacuous
    std::string worst;  // "<leaf index>[<element>]" of the largest error
    std::size_t input_elements = 0;  // size of the first leaf

    bool passed(double tol) const { return max_rel_error <= tol; }
};

/// Relative error with an absolute floor so near-zero gradients compare absolutely.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `loss_fn` with central differences, perturbing each
/// element of every leaf in place. `loss_fn` must rebuild the graph from the leaves on each call.
inline GradCheckReport gradcheck(std::string name, const std::function<Var<double>()>& loss_fn,
                                 std::vector<Var<double>> leaves, double step = 1e-5) {
    GradCheckReport rep;
    rep.name = std::move(name);
    if (!leaves.empty()) rep.input_elements = leaves.front().value().size();
    for (auto& l : leaves) l.zero_grad();
    backward(loss_fn());
    std::vector<Tensor<double>> analytic;
    for (auto& l : leaves) {
        analytic.push_back(l.grad());
        for (double g : analytic.back().data()) rep.nonzero += std::abs(g) > 1e-8;
    }
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& val = leaves[li].mutable_value();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double orig = val[i];
            val[i] = orig + step;
            const double up = loss_fn().value().item();
            val[i] = orig - step;
            const double down = loss_fn().value().item();
            val[i] = orig;
            const double numeric = (up - down) / (2 * step);
            const double err = grad_rel_error(analytic[li][i], numeric);
            ++rep.checked;
            if (err > rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst = std::to_string(li) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

/// Random tensor with entries uniform in [lo, hi).
template <std::floating_point T>
Tensor<T> random_uniform(Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

/// sum(out * R) for a fixed random R: turns any output into a scalar with a generic cotangent.
template <std::floating_point T>
Var<T> random_projection(const Var<T>& out, std::uint64_t seed) {
    return sum(mul(out, Var<T>::constant(random_uniform<T>(out.shape(), seed))));
}

}  // namespace ssw
