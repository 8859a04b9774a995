#pragma once

#include "maskbench/autodiff.hpp"
#include "maskbench/errors.hpp"
#include "maskbench/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace maskbench {

// Row-major (n_samples x dim) inputs in [0, 1] with class labels.
struct Dataset {
    std::size_t dim = 0;
    std::size_t n_classes = 0;
    std::vector<double> inputs;
    std::vector<int> labels;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

    Tensor sample(std::size_t i) const { return Tensor::matrix(1, dim, {row(i).begin(), row(i).end()}); }

    Tensor batch(std::span<const std::size_t> idx) const {
        std::vector<double> out;
        out.reserve(idx.size() * dim);
        for (auto i : idx) out.insert(out.end(), row(i).begin(), row(i).end());
        return Tensor::matrix(idx.size(), dim, std::move(out));
    }

    Tensor all_inputs() const { return Tensor::matrix(size(), dim, inputs); }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset d;
        d.dim = dim;
        d.n_classes = n_classes;
        d.provenance = provenance;
        d.inputs.reserve(idx.size() * dim);
        for (auto i : idx) {
            d.inputs.insert(d.inputs.end(), row(i).begin(), row(i).end());
            d.labels.push_back(labels[i]);
        }
        return d;
    }

    Dataset head(std::size_t n) const {
        std::vector<std::size_t> idx(std::min(n, size()));
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return subset(idx);
    }

    void validate() const {
        if (inputs.size() != labels.size() * dim) throw Error("dataset: inputs and labels disagree in sample count");
        for (double v : inputs)
            if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset: input value outside [0, 1]");
        for (int l : labels)
            if (l < 0 || static_cast<std::size_t>(l) >= n_classes) throw Error("dataset: label out of range");
    }
};

class IdxError : public FormatError {
public:
    enum class Kind { io, bad_magic, length_mismatch, truncated };

    IdxError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

} // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

// Reads an unsigned-byte IDX image/label pair. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::optional<std::size_t> limit = std::nullopt,
                        std::optional<std::size_t> n_classes = std::nullopt) {
    using K = IdxError::Kind;
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    if (img.size() < 4 || detail::be32(img, 0) != idx_images_magic)
        throw IdxError(K::bad_magic, images_path.string() + ": not an IDX image file (expected magic 0x00000803)");
    if (lab.size() < 4 || detail::be32(lab, 0) != idx_labels_magic)
        throw IdxError(K::bad_magic, labels_path.string() + ": not an IDX label file (expected magic 0x00000801)");
    if (img.size() < 16) throw IdxError(K::truncated, images_path.string() + ": truncated header");
    if (lab.size() < 8) throw IdxError(K::truncated, labels_path.string() + ": truncated header");

    const std::size_t count = detail::be32(img, 4);
    const std::size_t rows = detail::be32(img, 8);
    const std::size_t cols = detail::be32(img, 12);
    const std::size_t label_count = detail::be32(lab, 4);
    if (count != label_count)
        throw IdxError(K::length_mismatch, "IDX length mismatch: " + std::to_string(count) + " images but " +
                                               std::to_string(label_count) + " labels");
    const std::size_t dim = rows * cols;
    if (img.size() < 16 + count * dim) throw IdxError(K::truncated, images_path.string() + ": truncated pixel data");
    if (lab.size() < 8 + count) throw IdxError(K::truncated, labels_path.string() + ": truncated label data");

    const std::size_t n = limit ? std::min(*limit, count) : count;
    Dataset d;
    d.dim = dim;
    d.inputs.resize(n * dim);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n * dim; ++i) d.inputs[i] = img[16 + i] / 255.0;
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        d.labels[i] = lab[8 + i];
        max_label = std::max(max_label, d.labels[i]);
    }
    d.n_classes = n_classes ? *n_classes : static_cast<std::size_t>(max_label + 1);
    for (int l : d.labels)
        if (static_cast<std::size_t>(l) >= d.n_classes)
            throw IdxError(K::length_mismatch, "label " + std::to_string(l) + " exceeds n_classes");
    d.provenance = {{"kind", "idx"},
                    {"images", images_path.string()},
                    {"labels", labels_path.string()},
                    {"rows", rows},
                    {"cols", cols}};
    if (limit) d.provenance["limit"] = *limit;
    return d;
}

// Writes pixels as round(255 * v); reloading is exact to within 1/510.
inline void write_idx(const Dataset& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path, std::size_t rows, std::size_t cols) {
    if (rows * cols != d.dim) throw ShapeError("write_idx: rows * cols must equal the dataset dimension");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw IdxError(IdxError::Kind::io, "write_idx: cannot open output files");
    detail::put_be32(img, idx_images_magic);
    detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(rows));
    detail::put_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : d.inputs) img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    detail::put_be32(lab, idx_labels_magic);
    detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
    for (int l : d.labels) {
        if (l < 0 || l > 255) throw FormatError("write_idx: label does not fit in an unsigned byte");
        lab.put(static_cast<char>(static_cast<unsigned char>(l)));
    }
}

struct BlobSpec {
    std::uint64_t seed = 0;
    std::size_t n_per_class = 100;
    std::size_t dim = 64;
    std::size_t n_classes = 10;
    double separation = 1.0; // minimum Euclidean distance between class centers
    double noise = 0.1;      // per-coordinate standard deviation
};

// Isotropic Gaussian blobs around seeded centers in [0.25, 0.75]^dim, spread
// about 0.5 (clipping at the box) if needed to reach `separation`.
inline Dataset synthetic_blobs(const BlobSpec& spec) {
    if (spec.dim < 2) throw ConfigError("dataset.dim", "must be at least 2");
    if (spec.n_classes < 2) throw ConfigError("dataset.n_classes", "must be at least 2");
    if (!(spec.separation > 0.0)) throw ConfigError("dataset.separation", "must be positive");
    if (!(spec.noise >= 0.0)) throw ConfigError("dataset.noise", "must be non-negative");

    Rng rng(derive_seed(spec.seed, {0xb10b}));
    const std::size_t k = spec.n_classes, d = spec.dim;
    std::vector<double> centers(k * d);
    for (auto& c : centers) c = uniform(rng, 0.25, 0.75);

    auto min_distance = [&](const std::vector<double>& cs) {
        double m = INFINITY;
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a + 1; b < k; ++b) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += (cs[a * d + j] - cs[b * d + j]) * (cs[a * d + j] - cs[b * d + j]);
                m = std::min(m, std::sqrt(s));
            }
        return m;
    };
    auto spread = [&](double scale) {
        std::vector<double> cs(centers.size());
        for (std::size_t i = 0; i < cs.size(); ++i) cs[i] = std::clamp(0.5 + scale * (centers[i] - 0.5), 0.0, 1.0);
        return cs;
    };

    const double base = min_distance(centers);
    if (base < spec.separation) {
        // Scale about 0.5 until the separation holds; past the box the centers
        // clip, so scan geometrically up to full saturation.
        double max_dev = 0.0, min_dev = INFINITY;
        for (double c : centers) {
            max_dev = std::max(max_dev, std::abs(c - 0.5));
            if (c != 0.5) min_dev = std::min(min_dev, std::abs(c - 0.5));
        }
        const double linear = spec.separation / base;
        const double saturated = 0.5 / min_dev;
        double best = 0.0;
        bool found = false;
        if (linear <= 0.5 / max_dev) {
            centers = spread(linear);
            found = true;
        } else {
            for (double scale = 0.5 / max_dev; scale <= saturated * 1.02; scale *= 1.02) {
                auto cs = spread(scale);
                const double m = min_distance(cs);
                best = std::max(best, m);
                if (m >= spec.separation) {
                    centers = std::move(cs);
                    found = true;
                    break;
                }
            }
        }
        if (!found)
            throw ConfigError("dataset.separation", "infeasible for " + std::to_string(k) + " classes in [0,1]^" +
                                                         std::to_string(d) + "; maximal feasible value is " +
                                                         std::to_string(best));
    }

    Dataset out;
    out.dim = d;
    out.n_classes = k;
    out.inputs.reserve(k * spec.n_per_class * d);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            for (std::size_t j = 0; j < d; ++j)
                out.inputs.push_back(std::clamp(centers[c * d + j] + spec.noise * gauss(rng), 0.0, 1.0));
            out.labels.push_back(static_cast<int>(c));
        }
    }
    out.provenance = {{"kind", "synthetic"},   {"seed", spec.seed},           {"n_per_class", spec.n_per_class},
                      {"dim", spec.dim},       {"n_classes", spec.n_classes}, {"separation", spec.separation},
                      {"noise", spec.noise}};
    return out;
}

// Seeded permutation followed by a prefix split.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("dataset.train_fraction", "must lie strictly between 0 and 1");
    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x5911}));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(d.size())));
    std::span<const std::size_t> all(perm);
    return {d.subset(all.first(n_train)), d.subset(all.subspan(n_train))};
}

} // namespace maskbench
