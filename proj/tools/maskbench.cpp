#include "maskbench/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    using namespace maskbench;

    CLI::App app{"maskbench: attack preprocessor defenses and check for gradient masking"};
    app.require_subcommand(1);

    unsigned threads = 1;
    std::string out_dir;
    app.add_option("--threads", threads, "worker threads for attacks and checks")->check(CLI::Range(1u, 1024u));
    app.add_option("--out-dir", out_dir, "output directory (overrides output.dir)");

    std::string config, checkpoint;
    auto* train = app.add_subcommand("train", "train a classifier, write checkpoint and loss trace");
    train->add_option("config", config, "experiment config (.ini or .json)")->required();

    auto* attack = app.add_subcommand("attack", "run every configured attack, write reports");
    attack->add_option("config", config)->required();
    attack->add_option("checkpoint", checkpoint)->required();

    auto* diagnose = app.add_subcommand("diagnose", "run the gradient-masking checklist");
    diagnose->add_option("config", config)->required();
    diagnose->add_option("checkpoint", checkpoint)->required();

    SweepArgs sweep_args;
    std::string sweep_out;
    auto* sweep = app.add_subcommand("sweep", "tabulate the differentiable rounding and its gradient");
    sweep->add_option("--c", sweep_args.c, "error coefficient")->capture_default_str();
    sweep->add_option("--decimals", sweep_args.decimals, "0 or 1")->capture_default_str();
    sweep->add_option("--lo", sweep_args.lo)->capture_default_str();
    sweep->add_option("--hi", sweep_args.hi)->capture_default_str();
    sweep->add_option("--n", sweep_args.n, "grid points")->capture_default_str();
    sweep->add_option("--output,-o", sweep_out, "CSV file (default: standard output)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    CliContext ctx;
    ctx.threads = threads;
    if (!out_dir.empty()) ctx.out_dir = out_dir;

    return run_guarded(
        [&] {
            if (*train) return cmd_train(config, ctx);
            if (*attack) return cmd_attack(config, checkpoint, ctx);
            if (*diagnose) return cmd_diagnose(config, checkpoint, ctx);
            if (!sweep_out.empty()) sweep_args.output = sweep_out;
            return cmd_sweep(sweep_args, ctx);
        },
        std::cerr);
}
