#pragma once

// Topology-aware segmentation loss and overlap metrics.

#include <string>

#include "ssw/ops.hpp"

namespace ssw {

struct SkeletonConfig {
    std::size_t iterations = 10;
};

/// Smoothing added to every pixel-count ratio denominator.
inline constexpr double kRatioSmooth = 1.0;
/// Guard for the harmonic mean of topology precision and sensitivity.
inline constexpr double kHarmonicGuard = 1e-8;
inline constexpr double kDiceWeight = 0.8;
inline constexpr double kCenterlineWeight = 0.2;

/// Min over the 4-neighbourhood cross, as the min of a 3x1 and a 1x3 min-pool.
template <std::floating_point T>
Var<T> soft_erode(const Var<T>& m) {
    auto vertical = neg(max_pool2d(neg(m), 3, 1, 1, 1, 1, 0));
    auto horizontal = neg(max_pool2d(neg(m), 1, 3, 1, 1, 0, 1));
    return minimum(vertical, horizontal);
}

/// 3x3 max-pool.
template <std::floating_point T>
Var<T> soft_dilate(const Var<T>& m) {
    return max_pool2d(m, 3, 3, 1, 1, 1, 1);
}

template <std::floating_point T>
Var<T> soft_open(const Var<T>& m) {
    return soft_dilate(soft_erode(m));
}

/// Iterative soft thinning: collects what each opening removes, erosion by erosion.
template <std::floating_point T>
Var<T> soft_skeleton(const Var<T>& m, const SkeletonConfig& cfg = {}) {
    if (m.shape().size() != 4) throw ShapeError("soft_skeleton: expected [B,C,H,W], got " + shape_str(m.shape()));
    auto img = m;
    auto skel = relu(sub(img, soft_open(img)));
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
        img = soft_erode(img);
        auto delta = relu(sub(img, soft_open(img)));
        skel = add(skel, relu(sub(delta, mul(skel, delta))));
    }
    return skel;
}

namespace detail {
template <class T>
Var<T> ratio(const Var<T>& num, const Var<T>& den, T smooth) {
    return div(num, add_scalar(den, smooth));
}
}  // namespace detail

/// Parts of the combined loss, exposed for inspection.
template <std::floating_point T>
struct ClDiceTerms {
    Var<T> dice;        // 1 - soft Dice
    Var<T> centerline;  // 1 - harmonic mean of topology precision / sensitivity
    Var<T> total;       // 0.8 * dice + 0.2 * centerline
};

template <std::floating_point T>
ClDiceTerms<T> cl_dice_terms(const Var<T>& pred, const Var<T>& target, const SkeletonConfig& cfg = {}) {
    if (pred.shape() != target.shape())
        throw ShapeError("cl_dice_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    const T smooth = static_cast<T>(kRatioSmooth);
    auto inter = sum(mul(pred, target));
    auto dice = add_scalar(neg(scale(detail::ratio(inter, add(sum(pred), sum(target)), smooth), T(2))), T(1));

    auto skel_pred = soft_skeleton(pred, cfg);
    auto skel_true = soft_skeleton(target, cfg);
    auto t_prec = detail::ratio(sum(mul(skel_pred, target)), sum(skel_pred), smooth);
    auto t_sens = detail::ratio(sum(mul(skel_true, pred)), sum(skel_true), smooth);
    auto harmonic = div(scale(mul(t_prec, t_sens), T(2)), add_scalar(add(t_prec, t_sens), static_cast<T>(kHarmonicGuard)));
    auto centerline = add_scalar(neg(harmonic), T(1));

    auto total = add(scale(dice, static_cast<T>(kDiceWeight)), scale(centerline, static_cast<T>(kCenterlineWeight)));
    return {dice, centerline, total};
}

template <std::floating_point T>
Var<T> cl_dice_loss(const Var<T>& pred, const Var<T>& target, const SkeletonConfig& cfg = {}) {
    return cl_dice_terms(pred, target, cfg).total;
}

/// Foreground/intersection/union counts of two masks, the prediction thresholded at 0.5.
struct OverlapCounts {
    std::size_t pred = 0;
    std::size_t target = 0;
    std::size_t intersection = 0;
    std::size_t union_ = 0;
};

template <std::floating_point T>
OverlapCounts overlap_counts(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("overlap: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    OverlapCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > T(0.5);
        const bool t = target[i] > T(0.5);
        c.pred += p;
        c.target += t;
        c.intersection += p && t;
        c.union_ += p || t;
    }
    return c;
}

/// 2|P n Y| / (|P| + |Y|); 1 when both are empty.
template <std::floating_point T>
double dice_score(const Tensor<T>& pred, const Tensor<T>& target) {
    const auto c = overlap_counts(pred, target);
    if (c.pred + c.target == 0) return 1.0;
    return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.pred + c.target);
}

/// |P n Y| / |P u Y|; 1 when both are empty.
template <std::floating_point T>
double jaccard_score(const Tensor<T>& pred, const Tensor<T>& target) {
    const auto c = overlap_counts(pred, target);
    if (c.union_ == 0) return 1.0;
    return static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

}  // namespace ssw
