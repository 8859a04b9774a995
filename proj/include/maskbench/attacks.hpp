#pragma once

// l-infinity attacks against a DefendedModel. Gradients are always taken in
// the attack phase; final predictions in evaluate() use the eval phase.

#include "maskbench/autodiff.hpp"
#include "maskbench/data.hpp"
#include "maskbench/defenses.hpp"
#include "maskbench/errors.hpp"
#include "maskbench/nn.hpp"
#include "maskbench/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace maskbench {

struct AttackConfig {
    double eps = 0.0;
    int steps = 1;
    std::optional<double> step_size; // defaults to 2.5 * eps / steps
    bool random_start = true;
    int eot_samples = 1;
    std::uint64_t seed = 0;

    double effective_step_size() const { return step_size ? *step_size : 2.5 * eps / steps; }

    void validate(const std::string& path = "attack") const {
        if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError(path + ".eps", "must lie in [0, 1]");
        if (steps < 1) throw ConfigError(path + ".steps", "must be at least 1");
        if (step_size && !(*step_size > 0.0)) throw ConfigError(path + ".step_size", "must be positive");
        if (eot_samples < 1) throw ConfigError(path + ".eot_samples", "must be at least 1");
    }
};

struct AttackResult {
    Tensor adversarial;
    std::vector<bool> gradient_dead;
    std::vector<double> start_loss; // attack-phase loss where the search started
    std::vector<double> best_loss;  // attack-phase loss at the returned point
    std::vector<std::vector<double>> loss_trace; // per row: loss after each step
};

struct LossGrad {
    std::vector<double> losses; // per row, averaged over EoT samples
    Tensor grad;                // averaged over EoT samples
    std::vector<Tensor> samples; // individual EoT gradients, when requested
};

// Attack-phase loss and input gradient, averaged over `eot_samples` passes.
inline LossGrad attack_loss_grad(const DefendedModel& model, const Tensor& x, std::span<const int> labels,
                                 int eot_samples, Rng& rng, bool keep_samples = false) {
    LossGrad out{std::vector<double>(x.rows(), 0.0), Tensor::zeros(x.shape()), {}};
    for (int s = 0; s < eot_samples; ++s) {
        Tape tape;
        Tensor input = tape.leaf(x);
        Tensor logits = defended_forward(model, input, Phase::attack, &rng);
        Tensor loss = cross_entropy(logits, labels);
        auto rows = per_sample_cross_entropy(logits, labels);
        Tensor g = tape.owns(loss) ? backward(tape, loss).wrt(input) : Tensor::zeros(x.shape());
        for (std::size_t r = 0; r < rows.size(); ++r) out.losses[r] += rows[r];
        for (std::size_t k = 0; k < g.size(); ++k) out.grad[k] += g[k];
        if (keep_samples) out.samples.push_back(std::move(g));
    }
    if (eot_samples > 1) {
        for (auto& l : out.losses) l /= eot_samples;
        for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] /= eot_samples;
    }
    for (std::size_t r = 0; r < out.losses.size(); ++r)
        if (!std::isfinite(out.losses[r]))
            throw NonFiniteError("attack: non-finite loss for row " + std::to_string(r));
    return out;
}

inline std::vector<double> eval_losses(const DefendedModel& model, const Tensor& x, std::span<const int> labels, Rng& rng) {
    return per_sample_cross_entropy(defended_forward(model, x, Phase::eval, &rng), labels);
}

namespace detail {

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// One signed step projected onto the eps-ball around x0 intersected with [0, 1].
inline Tensor signed_step(const Tensor& x, const Tensor& grad, const Tensor& x0, double step, double eps) {
    Tensor out = x.detached();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x[i] + step * sign_of(grad[i]);
        v = std::clamp(v, x0[i] - eps, x0[i] + eps);
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

inline std::vector<bool> zero_rows(const Tensor& g) {
    const std::size_t rows = g.rows(), cols = g.cols();
    std::vector<bool> out(rows, true);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (g[r * cols + c] != 0.0) {
                out[r] = false;
                break;
            }
    return out;
}

inline void check_attack_input(const char* op, const Tensor& x, std::span<const int> labels) {
    if (x.rank() != 2) throw ShapeError(std::string(op) + ": input must be (batch, dim)");
    if (labels.size() != x.rows()) throw ShapeError(std::string(op) + ": one label per row required");
}

inline Tensor run_pgd(const DefendedModel& model, const Tensor& x0_in, std::span<const int> labels,
                      const AttackConfig& cfg, int eot_samples, AttackResult& result) {
    cfg.validate();
    const Tensor x0 = x0_in.detached();
    Rng rng(derive_seed(cfg.seed, {0x96d}));
    const double eps = cfg.eps, step = cfg.effective_step_size();
    const std::size_t rows = x0.rows(), cols = x0.cols();

    Tensor x = x0;
    if (cfg.random_start)
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x0[i] + uniform(rng, -eps, eps), 0.0, 1.0);

    result.gradient_dead.assign(rows, true);
    result.best_loss.assign(rows, -std::numeric_limits<double>::infinity());
    result.loss_trace.assign(rows, {});
    Tensor best = x;

    LossGrad lg = attack_loss_grad(model, x, labels, eot_samples, rng);
    result.start_loss = lg.losses;
    for (int t = 1; t <= cfg.steps; ++t) {
        auto zero = zero_rows(lg.grad);
        for (std::size_t r = 0; r < rows; ++r) result.gradient_dead[r] = result.gradient_dead[r] && zero[r];
        x = signed_step(x, lg.grad, x0, step, eps);
        lg = attack_loss_grad(model, x, labels, eot_samples, rng);
        for (std::size_t r = 0; r < rows; ++r) {
            result.loss_trace[r].push_back(lg.losses[r]);
            if (t == 1 || lg.losses[r] > result.best_loss[r]) {
                result.best_loss[r] = lg.losses[r];
                std::copy_n(x.data().begin() + r * cols, cols, best.mutable_data().begin() + r * cols);
            }
        }
    }
    return best;
}

} // namespace detail

// x' = clip(x + eps * sign(grad)). An all-zero gradient leaves the row unchanged
// and marks it gradient-dead.
inline AttackResult fgsm(const DefendedModel& model, const Tensor& x, std::span<const int> labels, double eps,
                         std::uint64_t seed = 0) {
    detail::check_attack_input("fgsm", x, labels);
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("attack.eps", "must lie in [0, 1]");
    const Tensor x0 = x.detached();
    Rng rng(derive_seed(seed, {0x96d}));
    AttackResult r;
    LossGrad lg = attack_loss_grad(model, x0, labels, 1, rng);
    r.start_loss = lg.losses;
    r.gradient_dead = detail::zero_rows(lg.grad);
    r.adversarial = detail::signed_step(x0, lg.grad, x0, eps, eps);
    r.best_loss = attack_loss_grad(model, r.adversarial, labels, 1, rng).losses;
    r.loss_trace.resize(r.best_loss.size());
    for (std::size_t i = 0; i < r.best_loss.size(); ++i) r.loss_trace[i] = {r.best_loss[i]};
    return r;
}

// Sign-gradient ascent with projection. Returns, per row, the post-step
// iterate with the highest attack-phase loss.
inline AttackResult pgd(const DefendedModel& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
    detail::check_attack_input("pgd", x, labels);
    AttackResult r;
    r.adversarial = detail::run_pgd(model, x, labels, cfg, 1, r);
    return r;
}

// PGD whose step direction averages cfg.eot_samples stochastic gradients.
inline AttackResult eot_pgd(const DefendedModel& model, const Tensor& x, std::span<const int> labels,
                            const AttackConfig& cfg) {
    detail::check_attack_input("eot_pgd", x, labels);
    AttackResult r;
    r.adversarial = detail::run_pgd(model, x, labels, cfg, cfg.eot_samples, r);
    return r;
}

// Worst of `trials` random corners of the eps-ball, scored by the deployed (eval-phase) loss.
inline AttackResult noise_attack(const DefendedModel& model, const Tensor& x, std::span<const int> labels, double eps,
                                 int trials, std::uint64_t seed) {
    detail::check_attack_input("noise_attack", x, labels);
    if (trials < 1) throw ConfigError("attack.trials", "must be at least 1");
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("attack.eps", "must lie in [0, 1]");
    const Tensor x0 = x.detached();
    const std::size_t rows = x0.rows(), cols = x0.cols();
    Rng rng(derive_seed(seed, {0x0153}));
    AttackResult r;
    r.adversarial = x0;
    r.gradient_dead.assign(rows, false);
    r.start_loss = eval_losses(model, x0, labels, rng);
    r.best_loss.assign(rows, -std::numeric_limits<double>::infinity());
    r.loss_trace.assign(rows, {});
    for (int t = 0; t < trials; ++t) {
        Tensor probe = x0;
        for (std::size_t i = 0; i < probe.size(); ++i)
            probe[i] = std::clamp(x0[i] + ((rng() >> 63) ? eps : -eps), 0.0, 1.0);
        auto losses = eval_losses(model, probe, labels, rng);
        for (std::size_t row = 0; row < rows; ++row) {
            r.loss_trace[row].push_back(losses[row]);
            if (t == 0 || losses[row] > r.best_loss[row]) {
                r.best_loss[row] = losses[row];
                std::copy_n(probe.data().begin() + row * cols, cols, r.adversarial.mutable_data().begin() + row * cols);
            }
        }
    }
    return r;
}

// ---- evaluation ---------------------------------------------------------------

enum class AttackMethod { none, fgsm, pgd, eot_pgd, noise };

inline const char* to_string(AttackMethod m) {
    switch (m) {
    case AttackMethod::none: return "none";
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::eot_pgd: return "eot_pgd";
    case AttackMethod::noise: return "noise";
    }
    return "?";
}

struct AttackSpec {
    std::string name = "attack";
    AttackMethod method = AttackMethod::pgd;
    AttackConfig config;
    int trials = 100; // noise only
    std::optional<GradientMode> gradient_mode; // overrides the defense's mode for this attack
    std::optional<int> omit_index;

    void validate(const std::string& path = "attack") const {
        if (name.empty()) throw ConfigError(path + ".name", "must not be empty");
        config.validate(path);
        if (method == AttackMethod::noise && trials < 1) throw ConfigError(path + ".trials", "must be at least 1");
    }

    DefendedModel apply_to(const DefendedModel& model) const {
        DefendedModel m = model;
        if (omit_index) m.preprocessor = m.preprocessor.with_omitted(*omit_index);
        else if (gradient_mode) m.preprocessor = m.preprocessor.with_gradient_mode(*gradient_mode);
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"name", name},
                         {"method", to_string(method)},
                         {"eps", config.eps},
                         {"steps", config.steps},
                         {"step_size", config.effective_step_size()},
                         {"random_start", config.random_start},
                         {"eot_samples", config.eot_samples},
                         {"seed", config.seed}};
        if (method == AttackMethod::noise) j["trials"] = trials;
        if (gradient_mode) j["gradient_mode"] = to_string(*gradient_mode);
        if (omit_index) j["omit_index"] = *omit_index;
        return j;
    }
};

// Runs one attack on a batch (rows are attacked jointly but independently).
inline AttackResult run_attack(const DefendedModel& model, const Tensor& x, std::span<const int> labels,
                               const AttackSpec& spec, std::uint64_t seed) {
    AttackConfig cfg = spec.config;
    cfg.seed = seed;
    switch (spec.method) {
    case AttackMethod::none: {
        AttackResult r;
        r.adversarial = x.detached();
        r.gradient_dead.assign(x.rows(), false);
        return r;
    }
    case AttackMethod::fgsm: return fgsm(model, x, labels, cfg.eps, seed);
    case AttackMethod::pgd: return pgd(model, x, labels, cfg);
    case AttackMethod::eot_pgd: return eot_pgd(model, x, labels, cfg);
    case AttackMethod::noise: return noise_attack(model, x, labels, cfg.eps, spec.trials, seed);
    }
    throw Error("unknown attack method");
}

struct SampleRecord {
    std::size_t index = 0;
    int label = 0;
    int clean_pred = 0;
    int adv_pred = 0;
    double linf = 0.0;
    bool gradient_dead = false;
    double start_loss = 0.0;
    double best_loss = 0.0;
    std::string error;
};

struct EvalReport {
    AttackSpec attack;
    std::size_t n_samples = 0;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    double attack_success_rate = 0.0;
    double attack_success_on_correct = 0.0;
    std::size_t gradient_dead_count = 0;
    std::size_t error_count = 0;
    double max_linf = 0.0;
    std::vector<SampleRecord> samples;

    nlohmann::json to_json() const {
        nlohmann::json errors = nlohmann::json::array();
        for (const auto& s : samples)
            if (!s.error.empty()) errors.push_back({{"index", s.index}, {"message", s.error}});
        return {{"schema_version", 1},
                {"attack", attack.to_json()},
                {"n_samples", n_samples},
                {"clean_accuracy", clean_accuracy},
                {"robust_accuracy", robust_accuracy},
                {"attack_success_rate", attack_success_rate},
                {"attack_success_on_correct", attack_success_on_correct},
                {"gradient_dead_count", gradient_dead_count},
                {"error_count", error_count},
                {"max_linf_distortion", max_linf},
                {"errors", errors}};
    }

    std::string samples_csv() const {
        std::string out = "index,label,clean_pred,adv_pred,linf_distortion,gradient_dead\n";
        char buf[160];
        for (const auto& s : samples) {
            std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%.17g,%d\n", s.index, s.label, s.clean_pred, s.adv_pred,
                          s.linf, s.gradient_dead ? 1 : 0);
            out += buf;
        }
        return out;
    }
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be independent.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    for (auto& th : pool) th.join();
}

struct EvalOptions {
    unsigned threads = 1;
};

// Attacks every sample independently (own tape, own seed stream) and
// classifies the result with the full preprocessor.
inline EvalReport evaluate(const DefendedModel& model, const Dataset& data, const AttackSpec& spec,
                           const EvalOptions& opts = {}) {
    if (data.empty()) throw ConfigError("dataset", "evaluation needs at least one sample");
    spec.validate("attack." + spec.name);
    const DefendedModel attacked = spec.apply_to(model);
    const std::uint64_t seed = spec.config.seed;

    EvalReport report;
    report.attack = spec;
    report.n_samples = data.size();
    report.samples.resize(data.size());

    parallel_for(data.size(), opts.threads, [&](std::size_t i) {
        SampleRecord& rec = report.samples[i];
        rec.index = i;
        rec.label = data.labels[i];
        const Tensor x = data.sample(i);
        const std::vector<int> label{rec.label};
        Rng clean_rng(derive_seed(seed, {i, 1}));
        rec.clean_pred = predict(defended_forward(model, x, Phase::eval, &clean_rng))[0];
        Tensor adv = x;
        try {
            AttackResult r = run_attack(attacked, x, label, spec, derive_seed(seed, {i, 2}));
            adv = r.adversarial;
            rec.gradient_dead = r.gradient_dead.at(0);
            if (!r.start_loss.empty()) rec.start_loss = r.start_loss[0];
            if (!r.best_loss.empty()) rec.best_loss = r.best_loss[0];
        } catch (const std::exception& e) {
            rec.error = e.what();
            adv = x;
        }
        Rng eval_rng(derive_seed(seed, {i, 3}));
        rec.adv_pred = predict(defended_forward(model, adv, Phase::eval, &eval_rng))[0];
        double linf = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) linf = std::max(linf, std::abs(adv[k] - x[k]));
        rec.linf = linf;
    });

    std::size_t clean_ok = 0, robust_ok = 0, flipped_correct = 0;
    for (const auto& s : report.samples) {
        const bool c = s.clean_pred == s.label, r = s.adv_pred == s.label;
        clean_ok += c;
        robust_ok += r;
        flipped_correct += c && !r;
        report.gradient_dead_count += s.gradient_dead;
        report.error_count += !s.error.empty();
        report.max_linf = std::max(report.max_linf, s.linf);
    }
    const double n = static_cast<double>(data.size());
    report.clean_accuracy = clean_ok / n;
    report.robust_accuracy = robust_ok / n;
    report.attack_success_rate = static_cast<double>(data.size() - robust_ok) / n;
    report.attack_success_on_correct = clean_ok ? static_cast<double>(flipped_correct) / clean_ok : 0.0;
    return report;
}

} // namespace maskbench
