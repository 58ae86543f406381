#include "cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Snake-convolution / shifted-window segmentation for OCTA en-face images"};
    app.fallthrough();
    app.require_subcommand(1);
    cli::RunOptions opts;
    cli::add_options(app, opts);
    auto* train = app.add_subcommand("train", "train on --data and keep the best-validation checkpoint");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on --split, write metrics CSV");
    auto* predict = app.add_subcommand("predict", "write mask and overlay PNGs");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operator");
    auto* params = app.add_subcommand("params", "parameter count and stage table");
    auto* synth = app.add_subcommand("synth", "write a small synthetic vessel dataset to --out");
    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cli::run_train(opts);
        if (*eval) return cli::run_eval(opts);
        if (*predict) return cli::run_predict(opts);
        if (*grad) return cli::run_gradcheck();
        if (*params) return cli::run_params(opts);
        if (*synth) return cli::run_synth(opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
