#pragma once

// Preprocessor defenses p and the defended classifier f(p(x)).
//
// Every preprocessor has one true forward transform. Its gradient mode only
// changes what the attack sees: the true derivative, a straight-through
// (identity) derivative, a surrogate's derivative, or a forward pass with one
// designated sub-transform dropped. Evaluation always runs the full transform.

#include "maskbench/autodiff.hpp"
#include "maskbench/errors.hpp"
#include "maskbench/nn.hpp"
#include "maskbench/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace maskbench {

enum class Phase { attack, eval };

enum class PreprocessorKind { identity, diff_round, precision_blend, hard_quantize, affine, additive_noise, chain };

enum class GradientMode { true_gradient, bpda_identity, bpda_substitute, omit_at_attack };

inline const char* to_string(PreprocessorKind k) {
    switch (k) {
    case PreprocessorKind::identity: return "identity";
    case PreprocessorKind::diff_round: return "diff_round";
    case PreprocessorKind::precision_blend: return "precision_blend";
    case PreprocessorKind::hard_quantize: return "hard_quantize";
    case PreprocessorKind::affine: return "affine";
    case PreprocessorKind::additive_noise: return "additive_noise";
    case PreprocessorKind::chain: return "chain";
    }
    return "?";
}

inline const char* to_string(GradientMode m) {
    switch (m) {
    case GradientMode::true_gradient: return "true_gradient";
    case GradientMode::bpda_identity: return "bpda_identity";
    case GradientMode::bpda_substitute: return "bpda_substitute";
    case GradientMode::omit_at_attack: return "omit_at_attack";
    }
    return "?";
}

inline GradientMode parse_gradient_mode(const std::string& s, const std::string& path) {
    for (auto m : {GradientMode::true_gradient, GradientMode::bpda_identity, GradientMode::bpda_substitute,
                   GradientMode::omit_at_attack})
        if (s == to_string(m)) return m;
    throw ConfigError(path, "unknown gradient mode '" + s + "'");
}

inline PreprocessorKind parse_preprocessor_kind(const std::string& s, const std::string& path) {
    for (auto k : {PreprocessorKind::identity, PreprocessorKind::diff_round, PreprocessorKind::precision_blend,
                   PreprocessorKind::hard_quantize, PreprocessorKind::affine, PreprocessorKind::additive_noise,
                   PreprocessorKind::chain})
        if (s == to_string(k)) return k;
    throw ConfigError(path, "unknown preprocessor kind '" + s + "'");
}

// ---- elementwise transforms -------------------------------------------------

inline void check_decimals(int decimals) {
    if (decimals != 0 && decimals != 1) throw ConfigError("decimals", "must be 0 or 1, got " + std::to_string(decimals));
}

// s = 10^decimals, y = s x, diff = (1 + c) y - floor(y),
// out = (y - diff + [diff >= 0.5]) / s.
// Its derivative is -c wherever it exists.
inline Tensor diff_round(const Tensor& x, int decimals, double c) {
    check_decimals(decimals);
    const double scale = decimals == 0 ? 1.0 : 10.0;
    Tensor y = x * scale;
    Tensor diff = (1.0 + c) * y - floor(y);
    return (y - diff + where_ge(diff, Tensor::scalar(0.5))) / scale;
}

// Decimal digits kept for a perturbation budget: clamp(-floor(log10(1.25 eps)) - 1, 0, 1).
inline int precision_decimals(double eps) {
    const int d = -static_cast<int>(std::floor(std::log10(std::abs(1.25 * eps)))) - 1;
    return std::max(std::min(d, 1), 0);
}

inline Tensor precision_blend(const Tensor& x, double eps, double c) {
    if (!(eps > 0.0)) return x;
    return diff_round(x, precision_decimals(eps), c);
}

inline Tensor hard_quantize(const Tensor& x, int levels) {
    if (levels < 2) throw ConfigError("levels", "must be at least 2");
    const double top = static_cast<double>(levels - 1);
    return round(x * top) / top;
}

// ---- Preprocessor -----------------------------------------------------------

class Preprocessor {
public:
    static Preprocessor identity() { return Preprocessor(PreprocessorKind::identity); }

    static Preprocessor diff_round(int decimals, double error_coefficient = 0.01) {
        Preprocessor p(PreprocessorKind::diff_round);
        p.decimals_ = decimals;
        p.error_coefficient_ = error_coefficient;
        p.validate();
        return p;
    }

    static Preprocessor precision_blend(double eps, double error_coefficient = 0.01) {
        Preprocessor p(PreprocessorKind::precision_blend);
        p.eps_ = eps;
        p.error_coefficient_ = error_coefficient;
        p.validate();
        return p;
    }

    static Preprocessor hard_quantize(int levels = 8) {
        Preprocessor p(PreprocessorKind::hard_quantize);
        p.levels_ = levels;
        p.validate();
        return p;
    }

    // scale * x + offset; must map [0, 1] into [0, 1].
    static Preprocessor affine(double scale, double offset) {
        Preprocessor p(PreprocessorKind::affine);
        p.scale_ = scale;
        p.offset_ = offset;
        p.validate();
        return p;
    }

    // clamp(x + N(0, stddev^2), 0, 1); needs a generator.
    static Preprocessor additive_noise(double stddev) {
        Preprocessor p(PreprocessorKind::additive_noise);
        p.stddev_ = stddev;
        p.validate();
        return p;
    }

    // Applied left to right.
    static Preprocessor chain(std::vector<Preprocessor> links) {
        Preprocessor p(PreprocessorKind::chain);
        p.links_ = std::move(links);
        p.validate();
        return p;
    }

    PreprocessorKind kind() const noexcept { return kind_; }
    GradientMode gradient_mode() const noexcept { return mode_; }
    int decimals() const noexcept { return decimals_; }
    double error_coefficient() const noexcept { return error_coefficient_; }
    double eps() const noexcept { return eps_; }
    int levels() const noexcept { return levels_; }
    double scale() const noexcept { return scale_; }
    double offset() const noexcept { return offset_; }
    double stddev() const noexcept { return stddev_; }
    const std::vector<Preprocessor>& links() const noexcept { return links_; }
    std::optional<int> omit_index() const noexcept { return omit_index_; }
    const Preprocessor* surrogate() const noexcept { return surrogate_.get(); }

    Preprocessor with_gradient_mode(GradientMode mode) const {
        Preprocessor p = *this;
        p.mode_ = mode;
        if (mode == GradientMode::omit_at_attack && !p.omit_index_ && kind_ != PreprocessorKind::chain) p.omit_index_ = 0;
        p.validate();
        return p;
    }

    Preprocessor with_bpda_substitute(Preprocessor surrogate) const {
        Preprocessor p = *this;
        p.mode_ = GradientMode::bpda_substitute;
        p.surrogate_ = std::make_shared<const Preprocessor>(std::move(surrogate));
        p.validate();
        return p;
    }

    // Drops one sub-transform from the attack-time forward: a chain link by
    // index, or (index 0) the whole transform for a single preprocessor.
    Preprocessor with_omitted(int index) const {
        Preprocessor p = *this;
        p.mode_ = GradientMode::omit_at_attack;
        p.omit_index_ = index;
        p.validate();
        return p;
    }

    bool stochastic() const {
        if (kind_ == PreprocessorKind::additive_noise) return true;
        for (const auto& l : links_)
            if (l.stochastic()) return true;
        return false;
    }

    void validate(const std::string& path = "defense") const {
        auto fail = [&](const std::string& field, const std::string& what) {
            throw ConfigError(path + "." + field, what);
        };
        switch (kind_) {
        case PreprocessorKind::diff_round:
            if (decimals_ != 0 && decimals_ != 1) fail("decimals", "must be 0 or 1");
            if (!std::isfinite(error_coefficient_)) fail("error_coefficient", "must be finite");
            break;
        case PreprocessorKind::precision_blend:
            if (!(eps_ >= 0.0) || !std::isfinite(eps_)) fail("eps", "must be finite and non-negative");
            if (!std::isfinite(error_coefficient_)) fail("error_coefficient", "must be finite");
            break;
        case PreprocessorKind::hard_quantize:
            if (levels_ < 2) fail("levels", "must be at least 2");
            break;
        case PreprocessorKind::affine:
            if (!(offset_ >= 0.0 && offset_ <= 1.0 && offset_ + scale_ >= 0.0 && offset_ + scale_ <= 1.0))
                fail("scale", "affine map must send [0, 1] into [0, 1]");
            break;
        case PreprocessorKind::additive_noise:
            if (!(stddev_ >= 0.0) || !std::isfinite(stddev_)) fail("stddev", "must be finite and non-negative");
            break;
        case PreprocessorKind::chain:
            if (links_.empty()) fail("links", "chain needs at least one link");
            for (std::size_t i = 0; i < links_.size(); ++i) links_[i].validate(path + ".links[" + std::to_string(i) + "]");
            break;
        case PreprocessorKind::identity: break;
        }
        if (mode_ == GradientMode::bpda_substitute) {
            if (!surrogate_) fail("surrogate", "bpda_substitute needs a surrogate preprocessor");
            surrogate_->validate(path + ".surrogate");
        }
        if (mode_ == GradientMode::omit_at_attack) {
            if (kind_ == PreprocessorKind::identity) fail("omit_index", "identity has no omissible sub-transform");
            if (!omit_index_) fail("omit_index", "omit_at_attack needs omit_index");
            const int n = kind_ == PreprocessorKind::chain ? static_cast<int>(links_.size()) : 1;
            if (*omit_index_ < 0 || *omit_index_ >= n)
                fail("omit_index", "index " + std::to_string(*omit_index_) + " does not designate a sub-transform");
        }
    }

    // The real transform. Differentiable (true gradient) when `x` is tracked.
    Tensor forward(const Tensor& x, Rng* rng = nullptr) const {
        switch (kind_) {
        case PreprocessorKind::identity: return x;
        case PreprocessorKind::diff_round: return maskbench::diff_round(x, decimals_, error_coefficient_);
        case PreprocessorKind::precision_blend: return maskbench::precision_blend(x, eps_, error_coefficient_);
        case PreprocessorKind::hard_quantize: return maskbench::hard_quantize(x, levels_);
        case PreprocessorKind::affine: return x * scale_ + offset_;
        case PreprocessorKind::additive_noise: {
            if (!rng) throw Error("additive_noise preprocessor needs a random generator");
            std::normal_distribution<double> gauss(0.0, 1.0);
            Tensor noise = Tensor::zeros(x.shape());
            for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = stddev_ * gauss(*rng);
            return clamp(x + noise, 0.0, 1.0);
        }
        case PreprocessorKind::chain: {
            Tensor h = x;
            for (const auto& l : links_) h = l.forward(h, rng);
            return h;
        }
        }
        throw Error("unknown preprocessor kind");
    }

    // What the attacker differentiates through.
    Tensor attack_forward(const Tensor& x, Rng* rng = nullptr) const {
        switch (mode_) {
        case GradientMode::true_gradient:
            if (kind_ != PreprocessorKind::chain) return forward(x, rng);
            return fold_links(x, rng, std::nullopt);
        case GradientMode::bpda_identity:
            return custom_grad({std::string("bpda:") + to_string(kind_),
                                [this, rng](const Tensor& v) { return forward(v, rng); }, {}},
                               x);
        case GradientMode::bpda_substitute:
            return custom_grad({std::string("bpda:") + to_string(kind_),
                                [this, rng](const Tensor& v) { return forward(v, rng); },
                                [s = surrogate_, rng](const Tensor& v) { return s->attack_forward(v, rng); }},
                               x);
        case GradientMode::omit_at_attack:
            if (kind_ != PreprocessorKind::chain) return x;
            return fold_links(x, rng, omit_index_);
        }
        throw Error("unknown gradient mode");
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", to_string(kind_)}};
        switch (kind_) {
        case PreprocessorKind::diff_round:
            j["decimals"] = decimals_;
            j["error_coefficient"] = error_coefficient_;
            break;
        case PreprocessorKind::precision_blend:
            j["eps"] = eps_;
            j["error_coefficient"] = error_coefficient_;
            break;
        case PreprocessorKind::hard_quantize: j["levels"] = levels_; break;
        case PreprocessorKind::affine:
            j["scale"] = scale_;
            j["offset"] = offset_;
            break;
        case PreprocessorKind::additive_noise: j["stddev"] = stddev_; break;
        case PreprocessorKind::chain:
            j["links"] = nlohmann::json::array();
            for (const auto& l : links_) j["links"].push_back(l.to_json());
            break;
        case PreprocessorKind::identity: break;
        }
        j["gradient_mode"] = to_string(mode_);
        if (omit_index_) j["omit_index"] = *omit_index_;
        if (surrogate_) j["surrogate"] = surrogate_->to_json();
        return j;
    }

    // Strict: unknown keys and keys that do not apply to the kind are errors.
    static Preprocessor from_json(const nlohmann::json& j, const std::string& path = "defense") {
        if (!j.is_object()) throw ConfigError(path, "must be an object");
        if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError(path + ".kind", "required string");
        const auto kind = parse_preprocessor_kind(j["kind"].get<std::string>(), path + ".kind");

        std::set<std::string> allowed{"kind", "gradient_mode", "omit_index", "surrogate"};
        switch (kind) {
        case PreprocessorKind::diff_round: allowed.insert({"decimals", "error_coefficient"}); break;
        case PreprocessorKind::precision_blend: allowed.insert({"eps", "error_coefficient"}); break;
        case PreprocessorKind::hard_quantize: allowed.insert("levels"); break;
        case PreprocessorKind::affine: allowed.insert({"scale", "offset"}); break;
        case PreprocessorKind::additive_noise: allowed.insert("stddev"); break;
        case PreprocessorKind::chain: allowed.insert("links"); break;
        case PreprocessorKind::identity: break;
        }
        for (const auto& [key, _] : j.items())
            if (!allowed.count(key)) throw ConfigError(path + "." + key, "unknown key for kind " + std::string(to_string(kind)));

        auto number = [&](const char* key, double fallback) {
            if (!j.contains(key)) return fallback;
            if (!j[key].is_number()) throw ConfigError(path + "." + key, "must be a number");
            return j[key].get<double>();
        };
        auto integer = [&](const char* key, int fallback) {
            if (!j.contains(key)) return fallback;
            if (!j[key].is_number_integer()) throw ConfigError(path + "." + key, "must be an integer");
            return j[key].get<int>();
        };

        Preprocessor p(kind);
        p.decimals_ = integer("decimals", p.decimals_);
        p.error_coefficient_ = number("error_coefficient", p.error_coefficient_);
        p.eps_ = number("eps", p.eps_);
        p.levels_ = integer("levels", p.levels_);
        p.scale_ = number("scale", p.scale_);
        p.offset_ = number("offset", p.offset_);
        p.stddev_ = number("stddev", p.stddev_);
        if (kind == PreprocessorKind::chain) {
            if (!j.contains("links") || !j["links"].is_array()) throw ConfigError(path + ".links", "required array");
            for (std::size_t i = 0; i < j["links"].size(); ++i)
                p.links_.push_back(from_json(j["links"][i], path + ".links[" + std::to_string(i) + "]"));
        }
        if (j.contains("gradient_mode")) {
            if (!j["gradient_mode"].is_string()) throw ConfigError(path + ".gradient_mode", "must be a string");
            p.mode_ = parse_gradient_mode(j["gradient_mode"].get<std::string>(), path + ".gradient_mode");
        }
        if (j.contains("omit_index")) p.omit_index_ = integer("omit_index", 0);
        else if (p.mode_ == GradientMode::omit_at_attack && kind != PreprocessorKind::chain) p.omit_index_ = 0;
        if (j.contains("surrogate"))
            p.surrogate_ = std::make_shared<const Preprocessor>(from_json(j["surrogate"], path + ".surrogate"));
        p.validate(path);
        return p;
    }

private:
    explicit Preprocessor(PreprocessorKind kind) : kind_(kind) {}

    Tensor fold_links(const Tensor& x, Rng* rng, std::optional<int> skip) const {
        Tensor h = x;
        for (std::size_t i = 0; i < links_.size(); ++i) {
            if (skip && static_cast<int>(i) == *skip) continue;
            h = links_[i].attack_forward(h, rng);
        }
        return h;
    }

    PreprocessorKind kind_;
    GradientMode mode_ = GradientMode::true_gradient;
    int decimals_ = 0;
    double error_coefficient_ = 0.01;
    double eps_ = 0.0;
    int levels_ = 8;
    double scale_ = 1.0;
    double offset_ = 0.0;
    double stddev_ = 0.0;
    std::vector<Preprocessor> links_;
    std::optional<int> omit_index_;
    std::shared_ptr<const Preprocessor> surrogate_;
};

struct DefendedModel {
    Preprocessor preprocessor = Preprocessor::identity();
    Mlp classifier;
};

// eval: classifier(p(x)) with the full transform. attack: the gradient mode decides.
inline Tensor defended_forward(const DefendedModel& model, const Tensor& x, Phase phase, Rng* rng = nullptr) {
    if (x.rank() != 2 || x.cols() != model.classifier.input_dim())
        throw ShapeError("defended_forward: expected input (batch, " + std::to_string(model.classifier.input_dim()) +
                         "), got " + shape_str(x.shape()));
    const Tensor z = phase == Phase::eval ? model.preprocessor.forward(x, rng) : model.preprocessor.attack_forward(x, rng);
    return mlp_forward(model.classifier, z);
}

} // namespace maskbench
