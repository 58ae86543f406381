#pragma once

// Per-sample Dice / Jaccard / clDice evaluation and its CSV report.

#include <fstream>
#include <iomanip>

#include "ssw/losses.hpp"
#include "ssw/network.hpp"
#include "ssw/pipeline/dataset.hpp"

namespace ssw::train {

struct SampleMetrics {
    int id = 0;
    double dice = 0;
    double jaccard = 0;
    double loss = 0;
};

struct MetricsReport {
    std::vector<SampleMetrics> rows;
    SampleMetrics mean;
};

inline Var<float> as_batch(const Tensor<float>& chw) {
    Shape s{1};
    s.insert(s.end(), chw.shape().begin(), chw.shape().end());
    return Var<float>::constant(chw.reshaped(s));
}

/// Scores probability maps [1, H, W] against the samples' targets.
inline MetricsReport evaluate_predictions(const std::vector<Tensor<float>>& preds,
                                          const std::vector<data::SampleRecord>& samples, const SkeletonConfig& skel = {}) {
    if (preds.size() != samples.size())
        throw std::invalid_argument("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                                    std::to_string(samples.size()) + " samples");
    if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
    MetricsReport r;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        SampleMetrics m{s.id, dice_score(preds[i], s.target), jaccard_score(preds[i], s.target),
                        cl_dice_loss(as_batch(preds[i]), as_batch(s.target), skel).value().item()};
        r.rows.push_back(m);
        r.mean.dice += m.dice;
        r.mean.jaccard += m.jaccard;
        r.mean.loss += m.loss;
    }
    const double n = static_cast<double>(samples.size());
    r.mean.dice /= n;
    r.mean.jaccard /= n;
    r.mean.loss /= n;
    r.mean.id = -1;
    return r;
}

/// Probability map [1, H, W] for one sample.
inline Tensor<float> predict_probabilities(const SegmentationModel<float>& model, const data::SampleRecord& s) {
    auto y = model.forward(as_batch(s.input)).value();
    return y.reshaped({1, s.height(), s.width()});
}

inline MetricsReport evaluate(const SegmentationModel<float>& model, const std::vector<data::SampleRecord>& samples,
                              const SkeletonConfig& skel = {}) {
    std::vector<Tensor<float>> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) preds.push_back(predict_probabilities(model, s));
    return evaluate_predictions(preds, samples, skel);
}

/// One row per sample, then a "mean" row.
inline void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id,dice,jaccard,cldice_loss\n" << std::setprecision(9);
    for (const auto& m : r.rows) out << m.id << ',' << m.dice << ',' << m.jaccard << ',' << m.loss << '\n';
    out << "mean," << r.mean.dice << ',' << r.mean.jaccard << ',' << r.mean.loss << '\n';
}

}  // namespace ssw::train
