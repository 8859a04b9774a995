#pragma once

// Experiment configuration. The schema is one tree; an INI file with
// [section] / [section.sub] headers and a JSON file are two spellings of it.
// INI values are read as JSON literals when they parse (numbers, booleans,
// arrays) and as bare strings otherwise. Every key is checked.

#include "maskbench/attacks.hpp"
#include "maskbench/data.hpp"
#include "maskbench/defenses.hpp"
#include "maskbench/diagnostics.hpp"
#include "maskbench/errors.hpp"
#include "maskbench/training.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace maskbench {

using ConfigTree = nlohmann::ordered_json;

namespace detail {

inline ConfigTree ini_value(const std::string& raw) {
    try {
        return ConfigTree::parse(raw);
    } catch (const nlohmann::json::exception&) {
        return raw;
    }
}

} // namespace detail

inline ConfigTree parse_ini_tree(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree root;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("", "line " + std::to_string(e.line()) + ": " + e.message());
    }
    ConfigTree tree = ConfigTree::object();
    for (const auto& [section, body] : root) {
        if (body.empty()) throw ConfigError(section, "top-level keys must sit inside a [section]");
        ConfigTree* node = &tree;
        std::string path;
        std::size_t start = 0;
        while (true) {
            const auto dot = section.find('.', start);
            const std::string part = section.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError(section, "empty component in section name");
            path += (path.empty() ? "" : ".") + part;
            ConfigTree& child = (*node)[part];
            if (child.is_null()) child = ConfigTree::object();
            if (!child.is_object()) throw ConfigError(path, "is both a key and a section");
            node = &child;
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (const auto& [key, value] : body) {
            if (!value.empty()) throw ConfigError(path + "." + key, "nested keys are not allowed");
            if (node->contains(key)) throw ConfigError(path + "." + key, "given twice");
            (*node)[key] = detail::ini_value(value.data());
        }
    }
    return tree;
}

inline ConfigTree read_config_tree(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (path.extension() == ".json") {
        try {
            ConfigTree t = ConfigTree::parse(text);
            if (!t.is_object()) throw ConfigError("", "JSON config must be an object");
            return t;
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("", std::string("malformed JSON: ") + e.what());
        }
    }
    return parse_ini_tree(text);
}

// Typed, strict view of one object in the config tree. finish() rejects
// every key that no getter asked for.
class Section {
public:
    Section(const ConfigTree& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_, "must be a section");
    }

    const std::string& path() const noexcept { return path_; }
    bool has(const std::string& key) const { return node_.contains(key); }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const ConfigTree* raw(const std::string& key) {
        seen_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    double number(const std::string& key, double fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (!v->is_number()) throw ConfigError(field(key), "must be a number");
        const double d = v->get<double>();
        if (!std::isfinite(d)) throw ConfigError(field(key), "must be finite");
        return d;
    }

    std::optional<double> optional_number(const std::string& key) {
        if (!has(key)) {
            seen_.insert(key);
            return std::nullopt;
        }
        return number(key, 0.0);
    }

    long long integer(const std::string& key, long long fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (!v->is_number_integer()) throw ConfigError(field(key), "must be an integer");
        return v->get<long long>();
    }

    std::size_t count(const std::string& key, std::size_t fallback, std::size_t min = 0) {
        const long long v = integer(key, static_cast<long long>(fallback));
        if (v < static_cast<long long>(min)) throw ConfigError(field(key), "must be at least " + std::to_string(min));
        return static_cast<std::size_t>(v);
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<long long>() >= 0) return static_cast<std::uint64_t>(v->get<long long>());
        throw ConfigError(field(key), "must be a non-negative integer");
    }

    bool boolean(const std::string& key, bool fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (!v->is_boolean()) throw ConfigError(field(key), "must be true or false");
        return v->get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (!v->is_string()) throw ConfigError(field(key), "must be a string");
        return v->get<std::string>();
    }

    std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (!v->is_array()) throw ConfigError(field(key), "must be an array of positive integers");
        std::vector<std::size_t> out;
        for (const auto& e : *v) {
            if (!e.is_number_integer() || e.get<long long>() < 1)
                throw ConfigError(field(key), "must be an array of positive integers");
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    std::optional<Section> child(const std::string& key) {
        auto v = raw(key);
        if (!v) return std::nullopt;
        return Section(*v, field(key));
    }

    void finish() const {
        for (const auto& [key, _] : node_.items())
            if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }

private:
    const ConfigTree& node_;
    std::string path_;
    std::set<std::string> seen_;
};

struct DatasetSection {
    std::string source = "synthetic"; // synthetic | idx
    BlobSpec blobs;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::optional<std::size_t> train_limit, test_limit;
    std::size_t n_classes = 10; // idx only
};

struct ModelSection {
    std::vector<std::size_t> hidden{128, 64};
    std::uint64_t init_seed = 0;
    TrainConfig train;
    bool train_through_defense = false; // fit the classifier to the defense's output
};

struct DiagnoseSection {
    std::optional<double> eps;
    ChecklistOptions options;
};

struct OutputSection {
    std::filesystem::path dir = "out";
    std::string checkpoint = "model.ckpt";
    bool json = true;
    bool csv = true;
};

struct ExperimentConfig {
    std::filesystem::path base_dir; // relative data paths resolve against this
    DatasetSection dataset;
    ModelSection model;
    Preprocessor defense = Preprocessor::identity();
    std::vector<AttackSpec> attacks;
    DiagnoseSection diagnose;
    OutputSection output;
};

namespace detail {

inline DatasetSection parse_dataset(Section s) {
    DatasetSection d;
    d.source = s.string("source", d.source);
    if (d.source == "synthetic") {
        d.blobs.seed = s.seed("seed", d.blobs.seed);
        d.blobs.n_per_class = s.count("n_per_class", d.blobs.n_per_class, 1);
        d.blobs.dim = s.count("dim", d.blobs.dim, 2);
        d.blobs.n_classes = s.count("n_classes", d.blobs.n_classes, 2);
        d.blobs.separation = s.number("separation", d.blobs.separation);
        d.blobs.noise = s.number("noise", d.blobs.noise);
        d.train_fraction = s.number("train_fraction", d.train_fraction);
        d.split_seed = s.seed("split_seed", d.split_seed);
        if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0))
            throw ConfigError(s.field("train_fraction"), "must lie strictly between 0 and 1");
        if (!(d.blobs.separation > 0.0)) throw ConfigError(s.field("separation"), "must be positive");
        if (!(d.blobs.noise >= 0.0)) throw ConfigError(s.field("noise"), "must be non-negative");
    } else if (d.source == "idx") {
        for (auto [key, target] : {std::pair{"train_images", &d.train_images}, std::pair{"train_labels", &d.train_labels},
                                   std::pair{"test_images", &d.test_images}, std::pair{"test_labels", &d.test_labels}}) {
            const std::string v = s.string(key, "");
            if (v.empty()) throw ConfigError(s.field(key), "required for source = idx");
            *target = v;
        }
        d.n_classes = s.count("n_classes", d.n_classes, 2);
        if (s.has("train_limit")) d.train_limit = s.count("train_limit", 0, 1);
    } else {
        throw ConfigError(s.field("source"), "unknown source '" + d.source + "' (expected synthetic or idx)");
    }
    if (s.has("test_limit")) d.test_limit = s.count("test_limit", 0, 1);
    s.finish();
    return d;
}

inline ModelSection parse_model(Section s) {
    ModelSection m;
    m.hidden = s.counts("hidden", m.hidden);
    m.init_seed = s.seed("init_seed", m.init_seed);
    m.train.epochs = s.count("epochs", m.train.epochs, 1);
    m.train.batch_size = s.count("batch_size", m.train.batch_size, 1);
    m.train.learning_rate = s.number("learning_rate", m.train.learning_rate);
    m.train.seed = s.seed("seed", m.train.seed);
    m.train_through_defense = s.boolean("train_through_defense", m.train_through_defense);
    if (!(m.train.learning_rate > 0.0)) throw ConfigError(s.field("learning_rate"), "must be positive");
    if (auto adv = s.child("adversarial")) {
        AdversarialTraining a;
        a.eps = adv->number("eps", a.eps);
        a.steps = static_cast<int>(adv->count("steps", static_cast<std::size_t>(a.steps), 1));
        a.step_size = adv->optional_number("step_size");
        adv->finish();
        AttackConfig{a.eps, a.steps, a.step_size}.validate(adv->path());
        m.train.adversarial = a;
    }
    s.finish();
    return m;
}

inline AttackMethod parse_attack_method(const std::string& s, const std::string& path) {
    for (auto m : {AttackMethod::none, AttackMethod::fgsm, AttackMethod::pgd, AttackMethod::eot_pgd, AttackMethod::noise})
        if (s == to_string(m)) return m;
    throw ConfigError(path, "unknown attack method '" + s + "' (expected none, fgsm, pgd, eot_pgd or noise)");
}

inline AttackSpec parse_attack(const std::string& name, Section s) {
    for (char ch : name)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-')
            throw ConfigError(s.path(), "attack names may use letters, digits, '_' and '-' only");
    AttackSpec a;
    a.name = name;
    a.method = parse_attack_method(s.string("method", "pgd"), s.field("method"));
    a.config.eps = s.number("eps", 0.0);
    a.config.steps = static_cast<int>(s.count("steps", 1, 1));
    a.config.step_size = s.optional_number("step_size");
    a.config.random_start = s.boolean("random_start", a.config.random_start);
    a.config.eot_samples = static_cast<int>(s.count("eot_samples", 1, 1));
    a.config.seed = s.seed("seed", 0);
    a.trials = static_cast<int>(s.count("trials", 100, 1));
    if (s.has("gradient_mode")) a.gradient_mode = parse_gradient_mode(s.string("gradient_mode", ""), s.field("gradient_mode"));
    if (s.has("omit_index")) a.omit_index = static_cast<int>(s.integer("omit_index", 0));
    s.finish();
    a.validate(s.path());
    return a;
}

inline DiagnoseSection parse_diagnose(Section s) {
    DiagnoseSection d;
    auto& o = d.options;
    d.eps = s.optional_number("eps");
    if (d.eps && !(*d.eps >= 0.0 && *d.eps <= 1.0)) throw ConfigError(s.field("eps"), "must lie in [0, 1]");
    o.seed = s.seed("seed", o.seed);
    o.pgd_steps = static_cast<int>(s.count("pgd_steps", static_cast<std::size_t>(o.pgd_steps), 1));
    o.noise_trials = static_cast<int>(s.count("noise_trials", static_cast<std::size_t>(o.noise_trials), 1));
    o.unbounded_eps = s.number("unbounded_eps", o.unbounded_eps);
    o.random_start = s.boolean("random_start", o.random_start);
    o.fd_coords = s.count("fd_coords", o.fd_coords, 1);
    o.fd_step = s.number("fd_step", o.fd_step);
    o.stats_steps = static_cast<int>(s.count("stats_steps", static_cast<std::size_t>(o.stats_steps), 0));
    if (!(o.unbounded_eps > 0.0 && o.unbounded_eps <= 1.0)) throw ConfigError(s.field("unbounded_eps"), "must lie in (0, 1]");
    if (!(o.fd_step > 0.0)) throw ConfigError(s.field("fd_step"), "must be positive");
    s.finish();
    return d;
}

inline OutputSection parse_output(Section s) {
    OutputSection o;
    o.dir = s.string("dir", o.dir.string());
    o.checkpoint = s.string("checkpoint", o.checkpoint);
    if (o.checkpoint.empty() || std::filesystem::path(o.checkpoint).has_parent_path())
        throw ConfigError(s.field("checkpoint"), "must be a plain file name");
    if (auto f = s.raw("formats")) {
        if (!f->is_array()) throw ConfigError(s.field("formats"), "must be an array of \"json\" and/or \"csv\"");
        o.json = o.csv = false;
        for (const auto& e : *f) {
            if (e == "json") o.json = true;
            else if (e == "csv") o.csv = true;
            else throw ConfigError(s.field("formats"), "unknown format " + e.dump());
        }
    }
    s.finish();
    return o;
}

} // namespace detail

inline ExperimentConfig parse_config(const ConfigTree& tree, const std::filesystem::path& base_dir = ".") {
    Section root(tree, "");
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    if (auto s = root.child("dataset")) cfg.dataset = detail::parse_dataset(*s);
    if (auto s = root.child("model")) cfg.model = detail::parse_model(*s);
    if (auto d = root.raw("defense")) {
        nlohmann::json plain = nlohmann::json::parse(d->dump());
        if (plain.is_object() && !plain.contains("kind")) plain["kind"] = "identity";
        cfg.defense = Preprocessor::from_json(plain, "defense");
    }
    if (auto s = root.child("attack")) {
        for (const auto& [name, body] : tree["attack"].items())
            cfg.attacks.push_back(detail::parse_attack(name, Section(body, "attack." + name)));
    }
    if (auto s = root.child("diagnose")) cfg.diagnose = detail::parse_diagnose(*s);
    if (auto s = root.child("output")) cfg.output = detail::parse_output(*s);
    root.finish();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_config_tree(path), path.parent_path().empty() ? "." : path.parent_path());
}

inline std::filesystem::path resolve(const ExperimentConfig& cfg, const std::filesystem::path& p) {
    return p.is_absolute() ? p : cfg.base_dir / p;
}

inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    Dataset train, test;
    if (d.source == "synthetic") {
        std::tie(train, test) = split(synthetic_blobs(d.blobs), d.train_fraction, d.split_seed);
    } else {
        train = load_idx(resolve(cfg, d.train_images), resolve(cfg, d.train_labels), d.train_limit, d.n_classes);
        test = load_idx(resolve(cfg, d.test_images), resolve(cfg, d.test_labels), std::nullopt, d.n_classes);
    }
    if (d.test_limit) test = test.head(*d.test_limit);
    if (train.empty()) throw ConfigError("dataset", "training split is empty");
    if (test.empty()) throw ConfigError("dataset", "test split is empty");
    return {std::move(train), std::move(test)};
}

inline std::vector<std::size_t> architecture(const ExperimentConfig& cfg, const Dataset& data) {
    std::vector<std::size_t> dims{data.dim};
    dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    dims.push_back(data.n_classes);
    return dims;
}

} // namespace maskbench
