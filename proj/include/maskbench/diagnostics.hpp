#pragma once

// Gradient-masking checklist. Each check runs attacks against the model as
// configured for attack and records what it measured; the verdict is data.

#include "maskbench/attacks.hpp"
#include "maskbench/autodiff.hpp"
#include "maskbench/data.hpp"
#include "maskbench/defenses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

namespace maskbench {

struct CheckRecord {
    std::string name;
    std::string rule;
    nlohmann::json measured = nlohmann::json::object();
    bool flagged = false;
    std::string error;

    nlohmann::json to_json() const {
        nlohmann::json j{{"name", name}, {"rule", rule}, {"measured", measured}, {"flagged", flagged}};
        if (!error.empty()) j["error"] = error;
        return j;
    }
};

inline CheckRecord check_record(std::string name, std::string rule) {
    CheckRecord c;
    c.name = std::move(name);
    c.rule = std::move(rule);
    return c;
}

enum class Verdict { no_evidence, suspicious, masked };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::no_evidence: return "no evidence";
    case Verdict::suspicious: return "suspicious";
    case Verdict::masked: return "masked";
    }
    return "?";
}

struct ChecklistOptions {
    int pgd_steps = 100;
    int noise_trials = 100;
    double unbounded_eps = 0.5;
    bool random_start = true;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::size_t fd_coords = 32; // finite-difference coordinates per sample
    double fd_step = 1e-5;
    int stats_steps = 20;       // PGD length for the loss-increase rate
};

namespace detail {

inline AttackSpec pgd_spec(const std::string& name, double eps, int steps, const ChecklistOptions& o) {
    return {name, AttackMethod::pgd, AttackConfig{eps, steps, std::nullopt, o.random_start, 1, o.seed}, 100, {}, {}};
}

inline AttackSpec fgsm_spec(double eps, const ChecklistOptions& o) {
    return {"fgsm", AttackMethod::fgsm, AttackConfig{eps, 1, std::nullopt, false, 1, o.seed}, 100, {}, {}};
}

inline AttackSpec noise_spec(double eps, const ChecklistOptions& o) {
    return {"noise", AttackMethod::noise, AttackConfig{eps, 1, std::nullopt, false, 1, o.seed}, o.noise_trials, {}, {}};
}

} // namespace detail

// Flags when PGD leaves more than 1 point more accuracy than FGSM.
inline CheckRecord check_iterative_vs_single(const EvalReport& fgsm_report, const EvalReport& pgd_report) {
    CheckRecord c = check_record("iterative_vs_single", "an iterative attack should never leave higher accuracy than a single step");
    c.measured = {{"fgsm_robust_accuracy", fgsm_report.robust_accuracy},
                  {"pgd_robust_accuracy", pgd_report.robust_accuracy},
                  {"pgd_steps", pgd_report.attack.config.steps},
                  {"threshold_points", 1.0}};
    c.flagged = pgd_report.robust_accuracy > fgsm_report.robust_accuracy + 0.01;
    return c;
}

inline CheckRecord check_iterative_vs_single(const DefendedModel& model, const Dataset& data, double eps,
                                             const ChecklistOptions& o = {}) {
    EvalOptions eo{o.threads};
    return check_iterative_vs_single(evaluate(model, data, detail::fgsm_spec(eps, o), eo),
                                     evaluate(model, data, detail::pgd_spec("pgd", eps, o.pgd_steps, o), eo));
}

inline double chance_threshold(std::size_t n_classes) { return 1.0 / static_cast<double>(n_classes) + 0.05; }

// Flags when accuracy at eps = 0.5 beats chance by more than 5 points.
inline CheckRecord check_unbounded(const EvalReport& report, std::size_t n_classes) {
    CheckRecord c = check_record("unbounded", "at an l-inf budget of 0.5 accuracy should fall to random guessing");
    const double threshold = chance_threshold(n_classes);
    c.measured = {{"eps", report.attack.config.eps},
                  {"robust_accuracy", report.robust_accuracy},
                  {"threshold", threshold},
                  {"n_classes", n_classes}};
    c.flagged = report.robust_accuracy > threshold;
    return c;
}

inline CheckRecord check_unbounded(const DefendedModel& model, const Dataset& data, const ChecklistOptions& o = {}) {
    return check_unbounded(evaluate(model, data, detail::pgd_spec("pgd_unbounded", o.unbounded_eps, o.pgd_steps, o),
                                    EvalOptions{o.threads}),
                           data.n_classes);
}

// Flags when random corners of the ball succeed more often than the gradient attack.
inline CheckRecord check_noise_floor(const EvalReport& noise_report, const EvalReport& gradient_report) {
    CheckRecord c = check_record("noise_floor", "random noise of the same norm should not beat a gradient attack");
    c.measured = {{"noise_success_rate", noise_report.attack_success_rate},
                  {"gradient_success_rate", gradient_report.attack_success_rate},
                  {"trials", noise_report.attack.trials}};
    c.flagged = noise_report.attack_success_rate > gradient_report.attack_success_rate;
    return c;
}

inline CheckRecord check_noise_floor(const DefendedModel& model, const Dataset& data, double eps,
                                     const ChecklistOptions& o = {}) {
    EvalOptions eo{o.threads};
    return check_noise_floor(evaluate(model, data, detail::noise_spec(eps, o), eo),
                             evaluate(model, data, detail::pgd_spec("pgd", eps, o.pgd_steps, o), eo));
}

// Flags when accuracy under attack exceeds clean accuracy by more than half a point.
inline CheckRecord check_attack_improves_accuracy(double clean, double robust) {
    CheckRecord c = check_record("attack_improves_accuracy", "accuracy under attack should not exceed accuracy without attack");
    c.measured = {{"clean_accuracy", clean}, {"robust_accuracy", robust}, {"threshold_points", 0.5}};
    c.flagged = robust > clean + 0.005;
    return c;
}

struct GradientStats {
    std::size_t n_samples = 0;
    double mean_abs_gradient = 0.0;
    double zero_gradient_fraction = 0.0;
    double sign_agreement = 1.0;        // tape vs. central differences of the attack-phase loss
    double loss_increase_rate = 0.0;    // samples whose PGD loss rose above the starting loss
    double preprocessor_mean_slope = 0.0;   // attack-phase d(sum p)/dx per coordinate
    double preprocessor_secant_slope = 0.0; // forward secant over +-eps per coordinate
    double slope_agreement = 1.0;       // sign match between the two slopes

    nlohmann::json to_json() const {
        return {{"n_samples", n_samples},
                {"mean_abs_gradient", mean_abs_gradient},
                {"zero_gradient_fraction", zero_gradient_fraction},
                {"sign_agreement", sign_agreement},
                {"loss_increase_rate", loss_increase_rate},
                {"preprocessor_mean_slope", preprocessor_mean_slope},
                {"preprocessor_secant_slope", preprocessor_secant_slope},
                {"slope_agreement", slope_agreement}};
    }
};

namespace detail {

inline int deadband_sign(double v, double tol) { return v > tol ? 1 : (v < -tol ? -1 : 0); }

struct SampleGradientStats {
    double abs_sum = 0.0;
    std::size_t zeros = 0, coords = 0;
    std::size_t fd_agree = 0, fd_total = 0;
    double slope_sum = 0.0, secant_sum = 0.0;
    std::size_t slope_agree = 0, slope_total = 0;
    bool increased = false;
};

inline SampleGradientStats sample_gradient_stats(const DefendedModel& model, const Tensor& x, int label, double eps,
                                                 int steps, const ChecklistOptions& o, std::uint64_t seed) {
    SampleGradientStats s;
    const std::vector<int> y{label};
    const std::uint64_t noise_seed = derive_seed(seed, {7});

    Rng rng(noise_seed);
    const Tensor g = attack_loss_grad(model, x, y, 1, rng).grad;
    s.coords = g.size();
    for (double v : g.data()) {
        s.abs_sum += std::abs(v);
        s.zeros += v == 0.0;
    }

    // Same noise draw for every probe so stochastic defenses difference cleanly.
    auto loss_at = [&](const Tensor& probe) {
        Rng r(noise_seed);
        return per_sample_cross_entropy(defended_forward(model, probe, Phase::attack, &r), y)[0];
    };
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    Rng pick(derive_seed(seed, {8}));
    std::shuffle(coords.begin(), coords.end(), pick);
    coords.resize(std::min(o.fd_coords, coords.size()));
    std::sort(coords.begin(), coords.end());
    const Tensor fd = finite_diff_partial(loss_at, x, o.fd_step, coords);
    for (auto i : coords) {
        s.fd_total++;
        s.fd_agree += deadband_sign(g[i], 1e-8) == deadband_sign(fd[i], 1e-8);
    }

    {
        Tape tape;
        Tensor in = tape.leaf(x);
        Rng r(noise_seed);
        Tensor z = model.preprocessor.attack_forward(in, &r);
        Tensor slope = tape.owns(z) ? backward(tape, z, Tensor::full(z.shape(), 1.0)).wrt(in) : Tensor::zeros(x.shape());
        if (eps > 0.0) {
            Tensor lo = x, hi = x;
            for (std::size_t i = 0; i < x.size(); ++i) {
                lo[i] = std::max(0.0, x[i] - eps);
                hi[i] = std::min(1.0, x[i] + eps);
            }
            Rng r1(noise_seed), r2(noise_seed);
            const Tensor plo = model.preprocessor.forward(lo, &r1);
            const Tensor phi = model.preprocessor.forward(hi, &r2);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double secant = (phi[i] - plo[i]) / (hi[i] - lo[i]);
                s.secant_sum += secant;
                s.slope_total++;
                s.slope_agree += deadband_sign(slope[i], 1e-12) == deadband_sign(secant, 1e-12);
            }
        }
        for (double v : slope.data()) s.slope_sum += v;
    }

    AttackConfig cfg{eps, steps, std::nullopt, o.random_start, 1, derive_seed(seed, {9})};
    if (steps > 0) {
        const AttackResult r = pgd(model, x, y, cfg);
        s.increased = r.best_loss[0] > r.start_loss[0] + 1e-12;
    }
    return s;
}

} // namespace detail

// Input-gradient health over `sample`: zero coordinates, agreement with
// finite differences, preprocessor slope against its own secant at the attack
// scale, and whether PGD raises the loss at all.
inline GradientStats gradient_stats(const DefendedModel& model, const Dataset& sample, double eps, int steps,
                                    const ChecklistOptions& o = {}) {
    if (sample.empty()) throw ConfigError("dataset", "gradient statistics need at least one sample");
    std::vector<detail::SampleGradientStats> per(sample.size());
    parallel_for(sample.size(), o.threads, [&](std::size_t i) {
        per[i] = detail::sample_gradient_stats(model, sample.sample(i), sample.labels[i], eps, steps, o,
                                               derive_seed(o.seed, {i, 0x57a7}));
    });
    detail::SampleGradientStats t;
    std::size_t increased = 0;
    for (const auto& s : per) {
        t.abs_sum += s.abs_sum;
        t.zeros += s.zeros;
        t.coords += s.coords;
        t.fd_agree += s.fd_agree;
        t.fd_total += s.fd_total;
        t.slope_sum += s.slope_sum;
        t.secant_sum += s.secant_sum;
        t.slope_agree += s.slope_agree;
        t.slope_total += s.slope_total;
        increased += s.increased;
    }
    GradientStats g;
    g.n_samples = sample.size();
    g.mean_abs_gradient = t.abs_sum / static_cast<double>(t.coords);
    g.zero_gradient_fraction = static_cast<double>(t.zeros) / static_cast<double>(t.coords);
    g.sign_agreement = t.fd_total ? static_cast<double>(t.fd_agree) / static_cast<double>(t.fd_total) : 1.0;
    g.loss_increase_rate = steps > 0 ? static_cast<double>(increased) / static_cast<double>(sample.size()) : 0.0;
    g.preprocessor_mean_slope = t.slope_sum / static_cast<double>(t.coords);
    g.preprocessor_secant_slope = t.slope_total ? t.secant_sum / static_cast<double>(t.slope_total) : 0.0;
    g.slope_agreement = t.slope_total ? static_cast<double>(t.slope_agree) / static_cast<double>(t.slope_total) : 1.0;
    return g;
}

inline CheckRecord check_gradient_health(const GradientStats& g) {
    CheckRecord c = check_record("gradient_health",
                  "input gradients should be nonzero, match finite differences and the preprocessor's "
                  "behavior at the attack scale, and let PGD raise the loss");
    nlohmann::json anomalies = nlohmann::json::array();
    if (g.zero_gradient_fraction >= 0.5) anomalies.push_back("zero_gradient");
    if (g.sign_agreement < 0.9) anomalies.push_back("finite_difference_disagreement");
    if (g.slope_agreement < 0.5)
        anomalies.push_back(g.preprocessor_mean_slope < 0.0 ? "constant_negative_gradient" : "slope_mismatch");
    if (g.loss_increase_rate < 0.5) anomalies.push_back("no_loss_increase");
    c.measured = g.to_json();
    c.measured["anomalies"] = anomalies;
    c.flagged = !anomalies.empty();
    return c;
}

struct ChecklistReport {
    double eps = 0.0;
    double unbounded_eps = 0.5;
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    std::vector<CheckRecord> checks;
    GradientStats stats;
    std::size_t flag_count = 0;
    Verdict verdict = Verdict::no_evidence;

    const CheckRecord& check(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw Error("no check named " + name);
    }

    nlohmann::json to_json() const {
        nlohmann::json cs = nlohmann::json::array();
        for (const auto& c : checks) cs.push_back(c.to_json());
        return {{"schema_version", 1},      {"eps", eps},
                {"unbounded_eps", unbounded_eps}, {"n_samples", n_samples},
                {"n_classes", n_classes},   {"checks", cs},
                {"gradient_stats", stats.to_json()}, {"flag_count", flag_count},
                {"verdict", to_string(verdict)}};
    }

    std::string summary() const {
        std::string out;
        char buf[256];
        for (const auto& c : checks) {
            std::snprintf(buf, sizeof buf, "  %-26s %s%s\n", c.name.c_str(), c.flagged ? "FLAG" : "ok",
                          c.error.empty() ? "" : " (error)");
            out += buf;
        }
        std::snprintf(buf, sizeof buf, "verdict: %s (%zu of %zu checks flagged)\n", to_string(verdict), flag_count,
                      checks.size());
        return out + buf;
    }
};

// Masked iff two or more checks flag, or the unbounded check flags on its own.
inline Verdict verdict_for(const std::vector<CheckRecord>& checks) {
    std::size_t flags = 0;
    bool unbounded = false;
    for (const auto& c : checks) {
        flags += c.flagged;
        unbounded = unbounded || (c.name == "unbounded" && c.flagged);
    }
    if (flags >= 2 || unbounded) return Verdict::masked;
    return flags == 1 ? Verdict::suspicious : Verdict::no_evidence;
}

inline ChecklistReport run_checklist(const DefendedModel& model, const Dataset& data, double eps,
                                     const ChecklistOptions& o = {}) {
    if (data.empty()) throw ConfigError("dataset", "checklist needs at least one sample");
    const EvalOptions eo{o.threads};
    ChecklistReport rep;
    rep.eps = eps;
    rep.unbounded_eps = o.unbounded_eps;
    rep.n_samples = data.size();
    rep.n_classes = data.n_classes;

    auto guarded = [&](const char* name, auto&& body) {
        try {
            rep.checks.push_back(body());
        } catch (const std::exception& e) {
            CheckRecord c = check_record(name, "");
            c.error = e.what();
            rep.checks.push_back(std::move(c));
        }
    };

    std::optional<EvalReport> fgsm_r, pgd_r;
    try {
        fgsm_r = evaluate(model, data, detail::fgsm_spec(eps, o), eo);
        pgd_r = evaluate(model, data, detail::pgd_spec("pgd", eps, o.pgd_steps, o), eo);
    } catch (const std::exception&) {
    }

    guarded("iterative_vs_single", [&] {
        if (!fgsm_r || !pgd_r) throw Error("baseline attacks failed");
        return check_iterative_vs_single(*fgsm_r, *pgd_r);
    });
    guarded("unbounded", [&] { return check_unbounded(model, data, o); });
    guarded("noise_floor", [&] {
        if (!pgd_r) throw Error("baseline attacks failed");
        return check_noise_floor(evaluate(model, data, detail::noise_spec(eps, o), eo), *pgd_r);
    });
    guarded("attack_improves_accuracy", [&] {
        if (!pgd_r) throw Error("baseline attacks failed");
        return check_attack_improves_accuracy(pgd_r->clean_accuracy, pgd_r->robust_accuracy);
    });
    guarded("gradient_health", [&] {
        rep.stats = gradient_stats(model, data, eps, o.stats_steps, o);
        return check_gradient_health(rep.stats);
    });

    for (const auto& c : rep.checks) rep.flag_count += c.flagged;
    rep.verdict = verdict_for(rep.checks);
    return rep;
}

// ---- rounding sweep -----------------------------------------------------------

struct SweepRow {
    double x;
    double value;
    double gradient;
};

// diff_round and its tape derivative on an even grid over [lo, hi].
inline std::vector<SweepRow> rounding_sweep(double c, int decimals, double lo, double hi, std::size_t n_points) {
    if (!(lo < hi)) throw ConfigError("sweep.lo", "lo must be below hi");
    if (n_points < 2) throw ConfigError("sweep.n", "need at least 2 points");
    check_decimals(decimals);
    std::vector<double> xs(n_points);
    for (std::size_t i = 0; i < n_points; ++i)
        xs[i] = i + 1 == n_points ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_points - 1);
    Tape tape;
    Tensor x = tape.leaf(Tensor::vector(xs));
    Tensor y = diff_round(x, decimals, c);
    Tensor g = backward(tape, sum(y)).wrt(x);
    std::vector<SweepRow> rows(n_points);
    for (std::size_t i = 0; i < n_points; ++i) rows[i] = {xs[i], y[i], g[i]};
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "x,value,gradient\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r.x, r.value, r.gradient);
        out += buf;
    }
    return out;
}

} // namespace maskbench
