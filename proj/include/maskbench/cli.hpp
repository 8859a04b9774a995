#pragma once

// Command implementations behind tools/maskbench. Each returns a process exit
// code: 0 success, 2 configuration error, 3 numerical failure.

#include "maskbench/attacks.hpp"
#include "maskbench/config.hpp"
#include "maskbench/diagnostics.hpp"
#include "maskbench/nn.hpp"
#include "maskbench/training.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

namespace maskbench {

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_numeric = 3 };

struct CliContext {
    unsigned threads = 1;
    std::optional<std::filesystem::path> out_dir; // overrides output.dir
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;
};

struct SweepArgs {
    double c = 0.01;
    int decimals = 0;
    double lo = 0.0;
    double hi = 0.3;
    std::size_t n = 256;
    std::optional<std::filesystem::path> output; // stdout when unset
};

namespace detail {

inline std::filesystem::path output_dir(const ExperimentConfig& cfg, const CliContext& ctx) {
    auto dir = ctx.out_dir ? *ctx.out_dir : cfg.output.dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("output.dir", "cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string dims_str(const std::vector<std::size_t>& d) {
    std::string s = "[";
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + "]";
}

struct Loaded {
    ExperimentConfig cfg;
    Dataset train, test;
    DefendedModel model;
};

inline Loaded load_for_evaluation(const std::filesystem::path& config, const std::filesystem::path& checkpoint) {
    Loaded l;
    l.cfg = load_config(config);
    std::tie(l.train, l.test) = load_datasets(l.cfg);
    const auto expected = architecture(l.cfg, l.test);
    Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.model.dims() != expected)
        throw ConfigError("model", "checkpoint architecture " + dims_str(ck.model.dims()) +
                                       " does not match the configured architecture " + dims_str(expected));
    l.model = DefendedModel{l.cfg.defense, std::move(ck.model)};
    return l;
}

} // namespace detail

// Maps library exceptions onto exit codes and prints the message.
inline int run_guarded(const std::function<int()>& body, std::ostream& err) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return exit_config;
    } catch (const NonFiniteError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return exit_numeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_numeric;
    }
}

inline int cmd_train(const std::filesystem::path& config, const CliContext& ctx = {}) {
    const ExperimentConfig cfg = load_config(config);
    auto [train_set, test_set] = load_datasets(cfg);
    cfg.model.train.validate(train_set.size());
    const auto dir = detail::output_dir(cfg, ctx);

    const Preprocessor transform = cfg.model.train_through_defense ? cfg.defense : Preprocessor::identity();
    TrainResult r = train(Mlp::init(architecture(cfg, train_set), cfg.model.init_seed), train_set, cfg.model.train, transform);

    nlohmann::json header{{"train", cfg.model.train.to_json()},
                          {"init_seed", cfg.model.init_seed},
                          {"dataset", train_set.provenance},
                          {"trained_through", transform.to_json()}};
    save_checkpoint(dir / cfg.output.checkpoint, r.model, header);

    std::string trace = "epoch,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, r.loss_trace[i]);
        trace += buf;
    }
    detail::write_text(dir / "train_loss.csv", trace);

    *ctx.out << "checkpoint " << (dir / cfg.output.checkpoint).string() << "\n"
             << "train accuracy " << accuracy(r.model, train_set, cfg.defense) << "\n"
             << "test accuracy " << accuracy(r.model, test_set, cfg.defense) << "\n";
    return exit_ok;
}

inline int cmd_attack(const std::filesystem::path& config, const std::filesystem::path& checkpoint,
                      const CliContext& ctx = {}) {
    auto l = detail::load_for_evaluation(config, checkpoint);
    if (l.cfg.attacks.empty()) throw ConfigError("attack", "no [attack.NAME] sections configured");
    const auto dir = detail::output_dir(l.cfg, ctx);
    for (const auto& spec : l.cfg.attacks) {
        const EvalReport rep = evaluate(l.model, l.test, spec, EvalOptions{ctx.threads});
        const std::string stem = spec.name + "_eps" + detail::format_double(spec.config.eps);
        nlohmann::json j = rep.to_json();
        j["defense"] = l.cfg.defense.to_json();
        if (l.cfg.output.json) detail::write_text(dir / ("report_" + stem + ".json"), j.dump(2) + "\n");
        if (l.cfg.output.csv) detail::write_text(dir / ("samples_" + stem + ".csv"), rep.samples_csv());
        *ctx.out << spec.name << " eps " << spec.config.eps << ": clean " << rep.clean_accuracy << " robust "
                 << rep.robust_accuracy << " success " << rep.attack_success_rate << " gradient-dead "
                 << rep.gradient_dead_count << "/" << rep.n_samples;
        if (rep.error_count) *ctx.out << " errors " << rep.error_count;
        *ctx.out << "\n";
    }
    return exit_ok;
}

inline int cmd_diagnose(const std::filesystem::path& config, const std::filesystem::path& checkpoint,
                        const CliContext& ctx = {}) {
    auto l = detail::load_for_evaluation(config, checkpoint);
    if (!l.cfg.diagnose.eps) throw ConfigError("diagnose.eps", "required for diagnose");
    const auto dir = detail::output_dir(l.cfg, ctx);
    ChecklistOptions opts = l.cfg.diagnose.options;
    opts.threads = ctx.threads;
    const ChecklistReport rep = run_checklist(l.model, l.test, *l.cfg.diagnose.eps, opts);
    nlohmann::json j = rep.to_json();
    j["defense"] = l.cfg.defense.to_json();
    detail::write_text(dir / "checklist.json", j.dump(2) + "\n");
    *ctx.out << rep.summary();
    return exit_ok;
}

inline int cmd_sweep(const SweepArgs& args, const CliContext& ctx = {}) {
    const std::string csv = sweep_csv(rounding_sweep(args.c, args.decimals, args.lo, args.hi, args.n));
    if (!args.output) {
        *ctx.out << csv;
        return exit_ok;
    }
    auto path = *args.output;
    if (ctx.out_dir && path.is_relative()) {
        std::filesystem::create_directories(*ctx.out_dir);
        path = *ctx.out_dir / path;
    }
    detail::write_text(path, csv);
    return exit_ok;
}

} // namespace maskbench
