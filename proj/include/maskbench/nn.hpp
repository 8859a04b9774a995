#pragma once

#include "maskbench/autodiff.hpp"
#include "maskbench/errors.hpp"
#include "maskbench/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace maskbench {

// weights: (in x out); bias: (1 x out) so it broadcasts through a ones column.
struct Dense {
    Tensor weights;
    Tensor bias;
};

using MlpGrads = std::vector<Dense>;

class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ShapeError("mlp: needs at least one layer");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            if (l.weights.rank() != 2 || l.bias.rank() != 2 || l.bias.rows() != 1 ||
                l.bias.cols() != l.weights.cols())
                throw ShapeError("mlp: layer " + std::to_string(i) + " has weights " + shape_str(l.weights.shape()) +
                                 " and bias " + shape_str(l.bias.shape()));
            if (i > 0 && layers_[i - 1].weights.cols() != l.weights.rows())
                throw ShapeError("mlp: layer " + std::to_string(i - 1) + " output " +
                                 std::to_string(layers_[i - 1].weights.cols()) + " does not feed layer " +
                                 std::to_string(i) + " input " + std::to_string(l.weights.rows()));
        }
    }

    // Glorot-uniform weights, zero biases.
    static Mlp init(const std::vector<std::size_t>& dims, std::uint64_t seed) {
        if (dims.size() < 2) throw ShapeError("mlp: architecture needs input and output sizes");
        Rng rng(derive_seed(seed, {0x1417}));
        std::vector<Dense> layers;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            const std::size_t in = dims[i], out = dims[i + 1];
            const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
            std::vector<double> w(in * out);
            for (auto& v : w) v = uniform(rng, -limit, limit);
            layers.push_back({Tensor::matrix(in, out, std::move(w)), Tensor::zeros({1, out})});
        }
        return Mlp(std::move(layers));
    }

    static Mlp from_flat(const std::vector<std::size_t>& dims, std::span<const double> params) {
        if (dims.size() < 2) throw ShapeError("mlp: architecture needs input and output sizes");
        std::vector<Dense> layers;
        std::size_t off = 0;
        auto take = [&](std::size_t n) {
            if (off + n > params.size()) throw ShapeError("mlp: parameter block too short for architecture");
            std::vector<double> v(params.begin() + off, params.begin() + off + n);
            off += n;
            return v;
        };
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            auto w = take(dims[i] * dims[i + 1]);
            auto b = take(dims[i + 1]);
            layers.push_back({Tensor::matrix(dims[i], dims[i + 1], std::move(w)), Tensor::matrix(1, dims[i + 1], std::move(b))});
        }
        if (off != params.size()) throw ShapeError("mlp: parameter block longer than architecture");
        return Mlp(std::move(layers));
    }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d{layers_.front().weights.rows()};
        for (const auto& l : layers_) d.push_back(l.weights.cols());
        return d;
    }
    std::size_t input_dim() const { return layers_.front().weights.rows(); }
    std::size_t n_classes() const { return layers_.back().weights.cols(); }

    const std::vector<Dense>& layers() const noexcept { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
        return n;
    }

    std::vector<double> flat_parameters() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& l : layers_) {
            out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
            out.insert(out.end(), l.bias.data().begin(), l.bias.data().end());
        }
        return out;
    }

    // Copy whose parameters are leaves of `tape`.
    Mlp bind(Tape& tape) const {
        Mlp m;
        for (const auto& l : layers_) m.layers_.push_back({tape.leaf(l.weights), tape.leaf(l.bias)});
        return m;
    }

    bool all_finite() const {
        for (const auto& l : layers_)
            if (!maskbench::all_finite(l.weights) || !maskbench::all_finite(l.bias)) return false;
        return true;
    }

private:
    std::vector<Dense> layers_;
};

// ReLU between layers, none on the output.
inline Tensor mlp_forward(const Mlp& model, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != model.input_dim())
        throw ShapeError("mlp_forward: expected input (batch, " + std::to_string(model.input_dim()) + "), got " +
                         shape_str(x.shape()));
    const Tensor ones = Tensor::full({x.rows(), 1}, 1.0);
    Tensor h = x;
    const auto& layers = model.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = matmul(h, layers[i].weights) + matmul(ones, layers[i].bias);
        if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
}

namespace detail {

inline void check_labels(const char* op, const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError(std::string(op) + ": logits must be (batch, classes)");
    if (labels.size() != logits.rows())
        throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= logits.cols())
            throw Error(std::string(op) + ": label " + std::to_string(l) + " outside [0, " +
                        std::to_string(logits.cols()) + ")");
}

} // namespace detail

// -log softmax(z)[y] via log1p of the non-maximal terms.
inline std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    detail::check_labels("cross_entropy", logits, labels);
    const std::size_t b = logits.rows(), c = logits.cols();
    std::vector<double> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* z = logits.data().data() + i * c;
        const std::size_t m = static_cast<std::size_t>(std::max_element(z, z + c) - z);
        double rest = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (j != m) rest += std::exp(z[j] - z[m]);
        out[i] = std::log1p(rest) + (z[m] - z[labels[i]]);
    }
    return out;
}

// Mean cross-entropy over the batch.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    auto losses = per_sample_cross_entropy(logits, labels);
    double total = 0.0;
    for (double l : losses) total += l;
    const double mean = total / static_cast<double>(losses.size());
    return detail::finish(
        "cross_entropy", Tensor::scalar(mean), {&logits},
        [z = logits.detached(), y = std::vector<int>(labels.begin(), labels.end())](const Tensor& up,
                                                                                    const std::vector<bool>&) {
            const std::size_t b = z.rows(), c = z.cols();
            Tensor g = Tensor::zeros(z.shape());
            const double scale = up[0] / static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i) {
                const double* row = z.data().data() + i * c;
                const std::size_t m = static_cast<std::size_t>(std::max_element(row, row + c) - row);
                double denom = 1.0;
                for (std::size_t j = 0; j < c; ++j)
                    if (j != m) denom += std::exp(row[j] - row[m]);
                for (std::size_t j = 0; j < c; ++j) {
                    const double p = std::exp(row[j] - row[m]) / denom;
                    g[i * c + j] = scale * (p - (static_cast<int>(j) == y[i] ? 1.0 : 0.0));
                }
            }
            return std::vector<std::optional<Tensor>>{std::move(g)};
        });
}

inline std::vector<int> predict(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    const std::size_t c = logits.cols();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* z = logits.data().data() + i * c;
        out[i] = static_cast<int>(std::max_element(z, z + c) - z);
    }
    return out;
}

inline MlpGrads parameter_grads(const Mlp& bound, const Gradients& g) {
    MlpGrads out;
    for (const auto& l : bound.layers()) out.push_back({g.wrt(l.weights), g.wrt(l.bias)});
    return out;
}

// theta <- theta - lr * grad
inline Mlp sgd_step(const Mlp& model, const MlpGrads& grads, double lr) {
    const auto& layers = model.layers();
    if (grads.size() != layers.size())
        throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradient layers for " +
                         std::to_string(layers.size()) + " model layers");
    std::vector<Dense> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto update = [&](const Tensor& p, const Tensor& g, const char* what) {
            if (p.shape() != g.shape())
                throw ShapeError("sgd_step: layer " + std::to_string(i) + " " + what + " gradient shape " +
                                 shape_str(g.shape()) + " does not match " + shape_str(p.shape()));
            Tensor q = p.detached();
            for (std::size_t k = 0; k < q.size(); ++k) q[k] -= lr * g[k];
            return q;
        };
        out.push_back({update(layers[i].weights, grads[i].weights, "weights"),
                       update(layers[i].bias, grads[i].bias, "bias")});
    }
    return Mlp(std::move(out));
}

// Checkpoint layout: "MBCKPT01", u64 LE header length, JSON header bytes,
// then parameter_count() little-endian float64 values (per layer: W row-major, b).
struct Checkpoint {
    Mlp model;
    nlohmann::json header;
};

inline constexpr char checkpoint_magic[8] = {'M', 'B', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void put_le64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le64(const std::string& in, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[off + i])} << (8 * i);
    return v;
}

} // namespace detail

inline std::string encode_checkpoint(const Mlp& model, nlohmann::json header) {
    header["architecture"] = model.dims();
    header["n_params"] = model.parameter_count();
    const std::string text = header.dump();
    std::string out(checkpoint_magic, 8);
    detail::put_le64(out, text.size());
    out += text;
    for (double v : model.flat_parameters()) detail::put_le64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), checkpoint_magic, 8) != 0)
        throw FormatError("checkpoint: bad magic");
    const auto len = detail::get_le64(bytes, 8);
    if (bytes.size() < 16 + len) throw FormatError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    if (!header.contains("architecture") || !header["architecture"].is_array())
        throw FormatError("checkpoint: header lacks architecture");
    const auto dims = header["architecture"].get<std::vector<std::size_t>>();
    std::size_t expected = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) expected += dims[i] * dims[i + 1] + dims[i + 1];
    if (header.value("n_params", std::size_t{0}) != expected)
        throw FormatError("checkpoint: n_params does not match architecture");
    if (bytes.size() != 16 + len + 8 * expected)
        throw FormatError("checkpoint: parameter block has " + std::to_string((bytes.size() - 16 - len) / 8) +
                          " values, architecture needs " + std::to_string(expected));
    std::vector<double> params(expected);
    for (std::size_t i = 0; i < expected; ++i)
        params[i] = std::bit_cast<double>(detail::get_le64(bytes, 16 + len + 8 * i));
    return {Mlp::from_flat(dims, params), std::move(header)};
}

inline void save_checkpoint(const std::filesystem::path& path, const Mlp& model, nlohmann::json header) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const auto bytes = encode_checkpoint(model, std::move(header));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

} // namespace maskbench
