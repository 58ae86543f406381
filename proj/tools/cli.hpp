#pragma once

// Command-line front end: option table, config-file handling, and the subcommands.

#include <CLI11.hpp>

#include <iostream>

#include "ssw/gradient_suite.hpp"
#include "ssw/pipeline.hpp"

namespace cli {

namespace fs = std::filesystem;
using namespace ssw;

struct RunOptions {
    std::string data;
    std::string task = "rv";
    std::string subset = "3m";
    std::string arch = "dual";
    std::size_t channels = 0;  // 0: variant default
    std::size_t depth = 4;
    std::size_t kernel = 9;
    std::size_t window = 8;
    std::uint64_t seed = 0;
    std::string out = "run";

    std::size_t epochs = 100;
    std::size_t eval_every = 10;
    std::size_t batch = 2;
    double lr_start = 1e-4;
    double lr_peak = 1e-2;
    std::size_t warmup = 10;
    double weight_decay = 1e-2;
    bool augment = true;

    std::string checkpoint;
    std::string split = "test";
    std::vector<int> ids;
    std::size_t size = 304;

    std::size_t synth_train = 4;
    std::size_t synth_val = 2;
    std::size_t synth_test = 2;
    std::size_t synth_size = 64;

    ArchitectureConfig architecture() const {
        ArchitectureConfig a = parse_variant(arch) == Variant::DualBranch ? ArchitectureConfig::dual_branch()
                                                                          : ArchitectureConfig::alternating();
        if (channels) a.init_channels = channels;
        a.depth = depth;
        a.kernel_points = kernel;
        a.window = window;
        a.validate();
        return a;
    }

    train::TrainConfig training() const {
        train::TrainConfig t;
        t.epochs = epochs;
        t.eval_every = eval_every;
        t.batch_size = batch;
        t.seed = seed;
        t.schedule = {lr_start, lr_peak, warmup};
        t.optimizer.weight_decay = weight_decay;
        t.augment = augment;
        return t;
    }

    fs::path checkpoint_dir() const { return checkpoint.empty() ? fs::path(out) / "checkpoint" : fs::path(checkpoint); }
};

/// Flat key=value file holding every option; readable again through --config.
inline void write_config(const fs::path& path, const RunOptions& o) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    f << "data=" << o.data << "\ntask=" << o.task << "\nsubset=" << o.subset << "\narch=" << o.arch
      << "\nchannels=" << o.architecture().init_channels << "\ndepth=" << o.depth << "\nkernel=" << o.kernel
      << "\nwindow=" << o.window << "\nseed=" << o.seed << "\nout=" << o.out << "\nepochs=" << o.epochs
      << "\neval-every=" << o.eval_every << "\nbatch=" << o.batch << "\nlr-start=" << o.lr_start
      << "\nlr-peak=" << o.lr_peak << "\nwarmup=" << o.warmup << "\nweight-decay=" << o.weight_decay
      << "\naugment=" << (o.augment ? "true" : "false") << '\n';
}

/// Registers every option on the top-level app; subcommands fall through to them,
/// so a config file and the command line share one flat namespace (command line wins).
inline void add_options(CLI::App& app, RunOptions& o) {
    app.set_config("--config", "", "flat key=value file; any key is an option name below");
    app.add_option("--data", o.data, "dataset root (<root>/<3M|6M>/projections|labels/...)");
    app.add_option("--task", o.task, "rv|faz|capillary|artery|vein")->capture_default_str();
    app.add_option("--subset", o.subset, "3m|6m")->capture_default_str();
    app.add_option("--arch", o.arch, "dual|alt")->capture_default_str();
    app.add_option("--channels", o.channels, "initial channels (default 72 dual, 108 alt)");
    app.add_option("--depth", o.depth, "encoder stages")->capture_default_str();
    app.add_option("--kernel", o.kernel, "snake kernel points (odd)")->capture_default_str();
    app.add_option("--window", o.window, "attention window")->capture_default_str();
    app.add_option("--seed", o.seed, "seed for init, shuffling and augmentation")->capture_default_str();
    app.add_option("--out", o.out, "output directory")->capture_default_str();
    app.add_option("--epochs", o.epochs)->capture_default_str();
    app.add_option("--eval-every", o.eval_every)->capture_default_str();
    app.add_option("--batch", o.batch)->capture_default_str();
    app.add_option("--lr-start", o.lr_start)->capture_default_str();
    app.add_option("--lr-peak", o.lr_peak)->capture_default_str();
    app.add_option("--warmup", o.warmup, "warm-up epochs")->capture_default_str();
    app.add_option("--weight-decay", o.weight_decay)->capture_default_str();
    app.add_option("--augment", o.augment, "true|false")->capture_default_str();
    app.add_option("--checkpoint", o.checkpoint, "checkpoint directory (default <out>/checkpoint)");
    app.add_option("--split", o.split, "train|val|test")->capture_default_str();
    app.add_option("--ids", o.ids, "sample IDs for predict (default: every ID of --split)");
    app.add_option("--size", o.size, "input extent for the params stage table")->capture_default_str();
    app.add_option("--synth-train", o.synth_train)->capture_default_str();
    app.add_option("--synth-val", o.synth_val)->capture_default_str();
    app.add_option("--synth-test", o.synth_test)->capture_default_str();
    app.add_option("--synth-size", o.synth_size)->capture_default_str();
}

inline data::Dataset load(const RunOptions& o) {
    if (o.data.empty()) throw std::invalid_argument("--data is required");
    return data::load_dataset(o.data, data::PartitionSpec::octa500(data::parse_subset(o.subset)), data::parse_task(o.task));
}

inline SegmentationModel<float> load_model(const RunOptions& o) {
    SegmentationModel<float> model(o.architecture(), o.seed);
    ckpt::load(o.checkpoint_dir(), model.parameters());
    return model;
}

inline int run_train(const RunOptions& o) {
    const auto ds = load(o);
    SegmentationModel<float> model(o.architecture(), o.seed);
    std::cout << "model: " << to_string(model.config().variant) << ", " << model.count_parameters() << " parameters; "
              << ds.train.size() << " train / " << ds.val.size() << " val samples\n";
    const fs::path out(o.out);
    write_config(out / "config.txt", o);
    train::TrainHooks hooks;
    hooks.log_csv = out / "train_log.csv";
    hooks.checkpoint_dir = o.checkpoint_dir();
    hooks.on_row = [](const train::LogRow& r) {
        if (r.split == data::Split::Val)
            std::cout << "epoch " << r.epoch << "  val loss " << r.loss << "  dice " << r.dice << "  jac " << r.jaccard
                      << "  lr " << r.lr << std::endl;
    };
    const auto res = train::fit(model, o.training(), ds.train, ds.val, hooks);
    std::cout << "best epoch " << res.best_epoch << " (val loss " << res.best_val_loss << "), checkpoint "
              << o.checkpoint_dir().string() << '\n';
    return 0;
}

inline int run_eval(const RunOptions& o) {
    const auto ds = load(o);
    const auto model = load_model(o);
    const auto& samples = ds.split(data::parse_split(o.split));
    const auto rep = train::evaluate(model, samples);
    const fs::path csv = fs::path(o.out) / ("metrics_" + o.split + ".csv");
    train::write_metrics_csv(csv, rep);
    std::cout << o.split << ": " << samples.size() << " samples, dice " << rep.mean.dice << ", jaccard "
              << rep.mean.jaccard << ", cldice loss " << rep.mean.loss << " -> " << csv.string() << '\n';
    return 0;
}

inline int run_predict(const RunOptions& o) {
    if (o.data.empty()) throw std::invalid_argument("--data is required");
    const auto subset = data::parse_subset(o.subset);
    std::vector<int> ids = o.ids;
    if (ids.empty()) {
        const auto part = data::PartitionSpec::octa500(subset);
        const auto split = data::parse_split(o.split);
        for (int id : data::discover_ids(o.data, subset))
            if (part.split_of(id) == split) ids.push_back(id);
        if (ids.empty()) throw data::DataError("no samples in split " + o.split);
    }
    const auto model = load_model(o);
    int failed = 0;
    for (const auto& r : train::predict(model, o.data, subset, data::parse_task(o.task), ids, fs::path(o.out) / "predictions")) {
        if (r.error.empty()) {
            std::cout << r.id << ": " << r.mask.string() << ", " << r.overlay.string() << '\n';
        } else {
            std::cerr << r.id << ": " << r.error << '\n';
            ++failed;
        }
    }
    return failed ? 1 : 0;
}

inline int run_gradcheck() {
    bool ok = true;
    for (const auto& r : run_gradient_suite()) {
        const bool pass = r.passed(kGradTolerance) && r.nonzero > 0;
        ok &= pass;
        std::cout << (pass ? "PASS " : "FAIL ") << r.name << "  max rel err " << r.max_rel_error << "  (" << r.checked
                  << " entries)\n";
    }
    return ok ? 0 : 1;
}

inline int run_params(const RunOptions& o) {
    SegmentationModel<float> model(o.architecture(), o.seed);
    const auto& c = model.config();
    std::cout << to_string(c.variant) << " init=" << c.init_channels << " depth=" << c.depth << " kernel=" << c.kernel_points
              << " window=" << c.window << '\n';
    auto [enc, dec] = model.describe(o.size, o.size);
    for (const auto& s : enc)
        std::cout << "encoder " << s.index << ": " << s.in_channels << "x" << s.in_extent_h << " -> " << s.out_channels
                  << "x" << s.out_extent_h << " (skip " << s.skip_channels << ")\n";
    for (const auto& s : dec)
        std::cout << "decoder " << s.index << ": " << s.in_channels << "x" << s.in_extent_h << " -> " << s.out_channels
                  << "x" << s.out_extent_h << '\n';
    std::cout << "parameters: " << model.count_parameters() << '\n';
    return 0;
}

inline int run_synth(const RunOptions& o) {
    const auto part = data::PartitionSpec::octa500(data::parse_subset(o.subset));
    data::write_synthetic_dataset(o.out, part, data::parse_task(o.task), {o.synth_train, o.synth_val, o.synth_test},
                                  o.synth_size, o.seed);
    std::cout << "wrote synthetic " << data::to_string(part.subset) << " samples under " << o.out << '\n';
    return 0;
}

}  // namespace cli
