#pragma once

// Mini-batch training loop: seeded shuffling and augmentation, AdamW with warm-up,
// periodic validation, and best-by-validation-loss checkpointing.

#include <functional>
#include <numeric>
#include <optional>

#include "ssw/pipeline/augment.hpp"
#include "ssw/pipeline/checkpoint.hpp"
#include "ssw/pipeline/evaluate.hpp"
#include "ssw/pipeline/optim.hpp"

namespace ssw::train {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t eval_every = 10;
    std::size_t batch_size = 2;
    std::uint64_t seed = 0;
    ScheduleConfig schedule;
    AdamWConfig optimizer;
    bool augment = true;
    data::AugmentConfig augmentation;
    SkeletonConfig skeleton;
};

struct LogRow {
    std::size_t epoch = 0;  // 1-based
    data::Split split = data::Split::Train;
    double loss = 0;
    double dice = 0;
    double jaccard = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<LogRow> log;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainHooks {
    std::optional<std::filesystem::path> log_csv;
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const LogRow&)> on_row;
};

inline void append_log_row(std::ostream& out, const LogRow& r) {
    out << r.epoch << ',' << data::to_string(r.split) << ',' << std::setprecision(9) << r.loss << ',' << r.dice << ','
        << r.jaccard << ',' << r.lr << '\n';
}

/// Stacks [C, H, W] tensors into [B, C, H, W].
inline Tensor<float> stack(const std::vector<const Tensor<float>*>& items) {
    Shape s{items.size()};
    s.insert(s.end(), items.front()->shape().begin(), items.front()->shape().end());
    Tensor<float> out(s);
    const std::size_t n = items.front()->size();
    for (std::size_t b = 0; b < items.size(); ++b) {
        if (items[b]->shape() != items.front()->shape())
            throw ShapeError("batch: samples of different extents " + shape_str(items[b]->shape()) + " vs " +
                             shape_str(items.front()->shape()));
        std::copy(items[b]->data().begin(), items[b]->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return out;
}

/// Per-(epoch, sample) augmentation stream, independent of batch order.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t epoch, int id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(id), 0x5a17u};
    return std::mt19937_64(seq);
}

/// Trains in place and leaves the best-validation parameters in `model`.
inline TrainResult fit(SegmentationModel<float>& model, const TrainConfig& cfg,
                       const std::vector<data::SampleRecord>& train_set, const std::vector<data::SampleRecord>& val_set,
                       const TrainHooks& hooks = {}) {
    if (train_set.empty()) throw TrainingError("train: empty training split");
    if (val_set.empty()) throw TrainingError("train: empty validation split");
    if (cfg.batch_size == 0 || cfg.eval_every == 0) throw std::invalid_argument("train: batch_size and eval_every must be positive");

    std::optional<std::ofstream> csv;
    if (hooks.log_csv) {
        if (hooks.log_csv->has_parent_path()) std::filesystem::create_directories(hooks.log_csv->parent_path());
        csv.emplace(*hooks.log_csv, std::ios::trunc);
        if (!*csv) throw std::runtime_error("cannot write " + hooks.log_csv->string());
        *csv << "epoch,split,loss,dice,jaccard,lr\n";
    }
    TrainResult result;
    auto emit = [&](const LogRow& row) {
        result.log.push_back(row);
        if (csv) append_log_row(*csv, row), csv->flush();
        if (hooks.on_row) hooks.on_row(row);
    };

    auto& params = model.parameters();
    AdamW<float> opt(params, cfg.optimizer);
    std::vector<Tensor<float>> best;
    std::vector<std::size_t> order(train_set.size());
    std::mt19937_64 shuffle_rng(cfg.seed);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch - 1, cfg.schedule);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0, dice_sum = 0, jac_sum = 0;
        std::size_t step = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<data::SampleRecord> batch;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = train_set[order[i]];
                if (!cfg.augment) {
                    batch.push_back(s);
                    continue;
                }
                auto rng = sample_rng(cfg.seed, epoch, s.id);
                batch.push_back(data::augment(s, cfg.augmentation, rng));
            }
            std::vector<const Tensor<float>*> xs, ys;
            for (const auto& s : batch) xs.push_back(&s.input), ys.push_back(&s.target);
            const auto target = stack(ys);

            params.zero_grad();
            auto pred = model.forward(Var<float>::constant(stack(xs)));
            auto loss = cl_dice_loss(pred, Var<float>::constant(target), cfg.skeleton);
            const double value = loss.value().item();
            if (!std::isfinite(value))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
            backward(loss);
            opt.step(lr);

            const std::size_t plane = target.size() / batch.size();
            for (std::size_t b = 0; b < batch.size(); ++b) {
                Tensor<float> p({plane}), t({plane});
                std::copy_n(pred.value().data().begin() + static_cast<std::ptrdiff_t>(b * plane), plane, p.data().begin());
                std::copy_n(target.data().begin() + static_cast<std::ptrdiff_t>(b * plane), plane, t.data().begin());
                dice_sum += dice_score(p, t);
                jac_sum += jaccard_score(p, t);
            }
            loss_sum += value * static_cast<double>(batch.size());
        }
        const double n = static_cast<double>(train_set.size());
        emit({epoch, data::Split::Train, loss_sum / n, dice_sum / n, jac_sum / n, lr});

        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            const auto rep = evaluate(model, val_set, cfg.skeleton);
            emit({epoch, data::Split::Val, rep.mean.loss, rep.mean.dice, rep.mean.jaccard, lr});
            if (rep.mean.loss < result.best_val_loss) {
                result.best_val_loss = rep.mean.loss;
                result.best_epoch = epoch;
                best.clear();
                for (const auto& p : params.all()) best.push_back(p.value());
                if (hooks.checkpoint_dir) ckpt::save(*hooks.checkpoint_dir, params);
            }
        }
    }
    if (!best.empty())
        for (std::size_t i = 0; i < best.size(); ++i) params.all()[i].mutable_value() = best[i];
    return result;
}

}  // namespace ssw::train
