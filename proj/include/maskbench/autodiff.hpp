#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a value (shape + row-major storage). A Tensor produced by an
// operation whose inputs live on a Tape is bound to the node that recorded
// it; operations on untracked tensors record nothing, so the same code path
// computes plain forward values and differentiable ones.

#include "maskbench/errors.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace maskbench {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

class Tape;

class Tensor {
public:
    Tensor() : shape_{}, data_{0.0} {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
        if (data_.size() != numel(shape_))
            throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " +
                             std::to_string(numel(shape_)) + " values, got " + std::to_string(data_.size()));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor full(Shape shape, double v) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor vector(std::vector<double> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool is_scalar() const noexcept { return shape_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> mutable_data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : throw ShapeError("rows() needs a matrix"); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : throw ShapeError("cols() needs a matrix"); }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool tracked() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::uint64_t tape_id() const noexcept { return tape_id_; }
    std::size_t node() const noexcept { return node_; }

    Tensor detached() const {
        Tensor t = *this;
        t.tape_ = nullptr;
        t.tape_id_ = 0;
        t.node_ = 0;
        return t;
    }

private:
    friend class Tape;

    Shape shape_;
    std::vector<double> data_;
    Tape* tape_ = nullptr;
    std::uint64_t tape_id_ = 0;
    std::size_t node_ = 0;
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

// Per-input gradients; entries for inputs that are not tracked may be left empty.
using BackwardFn = std::function<std::vector<std::optional<Tensor>>(const Tensor& upstream,
                                                                    const std::vector<bool>& needed)>;

struct TapeNode {
    std::string op;
    Shape shape;
    std::vector<std::optional<std::size_t>> inputs; // node id per input, empty for constants
    BackwardFn backward;
};

class Tape {
public:
    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    std::uint64_t id() const noexcept { return id_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

    bool owns(const Tensor& t) const noexcept { return t.tape_ == this && t.tape_id_ == id_; }

    Tensor leaf(Tensor value) {
        value = value.detached();
        return bind(std::move(value), TapeNode{"leaf", value.shape(), {}, {}});
    }

    // Records `value` as the output of `op` applied to `inputs`. If no input is
    // tracked on this tape the value is returned untracked.
    Tensor record(std::string op, Tensor value, const std::vector<const Tensor*>& inputs, BackwardFn fn) {
        TapeNode n{std::move(op), value.shape(), {}, std::move(fn)};
        bool any = false;
        for (const Tensor* in : inputs) {
            if (in->tracked() && !owns(*in))
                throw Error(n.op + ": input belongs to a different tape");
            if (in->tracked()) {
                n.inputs.emplace_back(in->node_);
                any = true;
            } else {
                n.inputs.emplace_back(std::nullopt);
            }
        }
        if (!any) return value.detached();
        return bind(std::move(value), std::move(n));
    }

private:
    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    Tensor bind(Tensor value, TapeNode n) {
        value.tape_ = this;
        value.tape_id_ = id_;
        value.node_ = nodes_.size();
        nodes_.push_back(std::move(n));
        return value;
    }

    std::uint64_t id_;
    std::vector<TapeNode> nodes_;
};

namespace detail {

inline Tape* common_tape(const char* op, std::initializer_list<const Tensor*> inputs) {
    Tape* tape = nullptr;
    std::uint64_t id = 0;
    for (const Tensor* t : inputs) {
        if (!t->tracked()) continue;
        if (tape && (t->tape() != tape || t->tape_id() != id))
            throw Error(std::string(op) + ": inputs are recorded on different tapes");
        tape = t->tape();
        id = t->tape_id();
    }
    return tape;
}

inline Tensor finish(const char* op, Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    Tape* tape = common_tape(op, inputs);
    if (!tape) return value;
    return tape->record(op, std::move(value), std::vector<const Tensor*>(inputs), std::move(fn));
}

enum class Broadcast { same, lhs_scalar, rhs_scalar };

inline Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (a.is_scalar()) return Broadcast::lhs_scalar;
    if (b.is_scalar()) return Broadcast::rhs_scalar;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " (only scalar broadcasting is supported)");
}

// Reduces a full-size gradient back to the shape of `like` (sums for scalars).
inline Tensor reduce_to(const Tensor& like, Tensor g) {
    if (like.shape() == g.shape()) return g;
    double s = 0.0;
    for (double v : g.data()) s += v;
    return Tensor::scalar(s);
}

template <class F>
Tensor binary_values(const char* op, const Tensor& a, const Tensor& b, F f) {
    auto kind = broadcast_kind(op, a, b);
    const Shape& shape = kind == Broadcast::lhs_scalar ? b.shape() : a.shape();
    std::vector<double> out(numel(shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = kind == Broadcast::lhs_scalar ? a[0] : a[i];
        double y = kind == Broadcast::rhs_scalar ? b[0] : b[i];
        out[i] = f(x, y);
    }
    return Tensor(shape, std::move(out));
}

template <class F>
Tensor unary_values(const Tensor& a, F f) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
    return Tensor(a.shape(), std::move(out));
}

inline double at_bcast(const Tensor& t, std::size_t i) { return t.is_scalar() ? t[0] : t[i]; }

// Shared backward for primitives whose derivative is zero everywhere it exists.
inline BackwardFn zero_backward(std::vector<Tensor> input_likes) {
    return [likes = std::move(input_likes)](const Tensor&, const std::vector<bool>& needed) {
        std::vector<std::optional<Tensor>> g(likes.size());
        for (std::size_t i = 0; i < likes.size(); ++i)
            if (needed[i]) g[i] = Tensor::zeros(likes[i].shape());
        return g;
    };
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = detail::binary_values("add", a, b, [](double x, double y) { return x + y; });
    return detail::finish("add", std::move(out), {&a, &b},
                          [a = a.detached(), b = b.detached()](const Tensor& up, const std::vector<bool>& need) {
                              std::vector<std::optional<Tensor>> g(2);
                              if (need[0]) g[0] = detail::reduce_to(a, up);
                              if (need[1]) g[1] = detail::reduce_to(b, up);
                              return g;
                          });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out = detail::binary_values("sub", a, b, [](double x, double y) { return x - y; });
    return detail::finish("sub", std::move(out), {&a, &b},
                          [a = a.detached(), b = b.detached()](const Tensor& up, const std::vector<bool>& need) {
                              std::vector<std::optional<Tensor>> g(2);
                              if (need[0]) g[0] = detail::reduce_to(a, up);
                              if (need[1]) {
                                  Tensor neg = detail::unary_values(up, [](double v) { return -v; });
                                  g[1] = detail::reduce_to(b, std::move(neg));
                              }
                              return g;
                          });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor out = detail::binary_values("mul", a, b, [](double x, double y) { return x * y; });
    return detail::finish("mul", std::move(out), {&a, &b},
                          [a = a.detached(), b = b.detached()](const Tensor& up, const std::vector<bool>& need) {
                              std::vector<std::optional<Tensor>> g(2);
                              if (need[0]) {
                                  Tensor ga = Tensor::zeros(up.shape());
                                  for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] * detail::at_bcast(b, i);
                                  g[0] = detail::reduce_to(a, std::move(ga));
                              }
                              if (need[1]) {
                                  Tensor gb = Tensor::zeros(up.shape());
                                  for (std::size_t i = 0; i < up.size(); ++i) gb[i] = up[i] * detail::at_bcast(a, i);
                                  g[1] = detail::reduce_to(b, std::move(gb));
                              }
                              return g;
                          });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    Tensor out = detail::binary_values("div", a, b, [](double x, double y) { return x / y; });
    return detail::finish("div", std::move(out), {&a, &b},
                          [a = a.detached(), b = b.detached()](const Tensor& up, const std::vector<bool>& need) {
                              std::vector<std::optional<Tensor>> g(2);
                              if (need[0]) {
                                  Tensor ga = Tensor::zeros(up.shape());
                                  for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] / detail::at_bcast(b, i);
                                  g[0] = detail::reduce_to(a, std::move(ga));
                              }
                              if (need[1]) {
                                  Tensor gb = Tensor::zeros(up.shape());
                                  for (std::size_t i = 0; i < up.size(); ++i) {
                                      double y = detail::at_bcast(b, i);
                                      gb[i] = -up[i] * detail::at_bcast(a, i) / (y * y);
                                  }
                                  g[1] = detail::reduce_to(b, std::move(gb));
                              }
                              return g;
                          });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
        }
    Tensor value = Tensor::matrix(m, n, std::move(out));
    return detail::finish(
        "matmul", std::move(value), {&a, &b},
        [a = a.detached(), b = b.detached(), m, k, n](const Tensor& up, const std::vector<bool>& need) {
            std::vector<std::optional<Tensor>> g(2);
            if (need[0]) {
                std::vector<double> ga(m * k, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += up[i * n + j] * b[p * n + j];
                        ga[i * k + p] = s;
                    }
                g[0] = Tensor::matrix(m, k, std::move(ga));
            }
            if (need[1]) {
                std::vector<double> gb(k * n, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * up[i * n + j];
                    }
                g[1] = Tensor::matrix(k, n, std::move(gb));
            }
            return g;
        });
}

inline Tensor relu(const Tensor& x) {
    Tensor out = detail::unary_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
    return detail::finish("relu", std::move(out), {&x}, [x = x.detached()](const Tensor& up, const std::vector<bool>&) {
        Tensor g = Tensor::zeros(up.shape());
        for (std::size_t i = 0; i < up.size(); ++i) g[i] = x[i] > 0.0 ? up[i] : 0.0;
        return std::vector<std::optional<Tensor>>{std::move(g)};
    });
}

// Gradient is 1 strictly inside (lo, hi), 0 at and beyond the bounds.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    Tensor out = detail::unary_values(x, [=](double v) { return v < lo ? lo : (v > hi ? hi : v); });
    return detail::finish("clamp", std::move(out), {&x},
                          [x = x.detached(), lo, hi](const Tensor& up, const std::vector<bool>&) {
                              Tensor g = Tensor::zeros(up.shape());
                              for (std::size_t i = 0; i < up.size(); ++i)
                                  g[i] = (x[i] > lo && x[i] < hi) ? up[i] : 0.0;
                              return std::vector<std::optional<Tensor>>{std::move(g)};
                          });
}

inline Tensor floor(const Tensor& x) {
    Tensor out = detail::unary_values(x, [](double v) { return std::floor(v); });
    return detail::finish("floor", std::move(out), {&x}, detail::zero_backward({x.detached()}));
}

// Half away from zero.
inline Tensor round(const Tensor& x) {
    Tensor out = detail::unary_values(x, [](double v) { return std::round(v); });
    return detail::finish("round", std::move(out), {&x}, detail::zero_backward({x.detached()}));
}

inline Tensor sign(const Tensor& x) {
    Tensor out = detail::unary_values(x, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return detail::finish("sign", std::move(out), {&x}, detail::zero_backward({x.detached()}));
}

// Indicator [a >= b] as 1.0 / 0.0.
inline Tensor where_ge(const Tensor& a, const Tensor& b) {
    Tensor out = detail::binary_values("where_ge", a, b, [](double x, double y) { return x >= y ? 1.0 : 0.0; });
    return detail::finish("where_ge", std::move(out), {&a, &b}, detail::zero_backward({a.detached(), b.detached()}));
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::finish("sum", Tensor::scalar(s), {&x}, [shape = x.shape()](const Tensor& up, const std::vector<bool>&) {
        return std::vector<std::optional<Tensor>>{Tensor::full(shape, up[0])};
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }

enum class Primitive { add, sub, mul, div, matmul, relu, clamp, floor, round, sign, where_ge, sum };

inline const char* primitive_name(Primitive p) {
    switch (p) {
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::div: return "div";
    case Primitive::matmul: return "matmul";
    case Primitive::relu: return "relu";
    case Primitive::clamp: return "clamp";
    case Primitive::floor: return "floor";
    case Primitive::round: return "round";
    case Primitive::sign: return "sign";
    case Primitive::where_ge: return "where_ge";
    case Primitive::sum: return "sum";
    }
    return "?";
}

// Uniform entry point over the primitive set. clamp takes (x, lo, hi) with
// scalar bounds; every other primitive takes its natural operands.
inline Tensor apply_primitive(Primitive kind, std::span<const Tensor> in) {
    auto arity = [&](std::size_t n) {
        if (in.size() != n)
            throw ShapeError(std::string(primitive_name(kind)) + ": expected " + std::to_string(n) +
                             " inputs, got " + std::to_string(in.size()));
    };
    switch (kind) {
    case Primitive::add: arity(2); return add(in[0], in[1]);
    case Primitive::sub: arity(2); return sub(in[0], in[1]);
    case Primitive::mul: arity(2); return mul(in[0], in[1]);
    case Primitive::div: arity(2); return div(in[0], in[1]);
    case Primitive::matmul: arity(2); return matmul(in[0], in[1]);
    case Primitive::where_ge: arity(2); return where_ge(in[0], in[1]);
    case Primitive::relu: arity(1); return relu(in[0]);
    case Primitive::floor: arity(1); return floor(in[0]);
    case Primitive::round: arity(1); return round(in[0]);
    case Primitive::sign: arity(1); return sign(in[0]);
    case Primitive::sum: arity(1); return sum(in[0]);
    case Primitive::clamp:
        arity(3);
        if (!in[1].is_scalar() || !in[2].is_scalar())
            throw ShapeError("clamp: bounds must be scalars, got " + shape_str(in[1].shape()) + " and " +
                             shape_str(in[2].shape()));
        return clamp(in[0], in[1][0], in[2][0]);
    }
    throw Error("unknown primitive");
}

class Gradients {
public:
    Gradients(std::uint64_t tape_id, std::vector<std::optional<Tensor>> grads)
        : tape_id_(tape_id), grads_(std::move(grads)) {}

    // Gradient for a node id; empty if the node was not reached.
    const std::optional<Tensor>& of(std::size_t node) const {
        static const std::optional<Tensor> none;
        return node < grads_.size() ? grads_[node] : none;
    }

    // Gradient with respect to `t`, zeros if `t` does not influence the output.
    Tensor wrt(const Tensor& t) const {
        if (!t.tracked() || t.tape_id() != tape_id_)
            throw Error("gradient requested for a tensor that is not on this tape");
        const auto& g = of(t.node());
        return g ? *g : Tensor::zeros(t.shape());
    }

    bool reached(const Tensor& t) const { return t.tracked() && t.tape_id() == tape_id_ && of(t.node()).has_value(); }

private:
    std::uint64_t tape_id_;
    std::vector<std::optional<Tensor>> grads_;
};

// Vector-Jacobian product of `output` with `seed`.
inline Gradients backward(const Tape& tape, const Tensor& output, const Tensor& seed) {
    if (!tape.owns(output)) throw Error("backward: output is not recorded on this tape");
    if (seed.shape() != output.shape())
        throw ShapeError("backward: seed shape " + shape_str(seed.shape()) + " does not match output " +
                         shape_str(output.shape()));
    std::vector<std::optional<Tensor>> grads(output.node() + 1);
    grads[output.node()] = seed.detached();
    for (std::size_t i = output.node() + 1; i-- > 0;) {
        if (!grads[i]) continue;
        const TapeNode& n = tape.node(i);
        if (n.inputs.empty()) continue;
        std::vector<bool> needed(n.inputs.size());
        for (std::size_t j = 0; j < n.inputs.size(); ++j) needed[j] = n.inputs[j].has_value();
        auto local = n.backward(*grads[i], needed);
        for (std::size_t j = 0; j < n.inputs.size(); ++j) {
            if (!n.inputs[j] || !local[j]) continue;
            auto& slot = grads[*n.inputs[j]];
            if (!slot) {
                slot = std::move(local[j]);
            } else {
                auto dst = slot->mutable_data();
                auto src = local[j]->data();
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }
    return Gradients(tape.id(), std::move(grads));
}

inline Gradients backward(const Tape& tape, const Tensor& loss) {
    if (!loss.is_scalar()) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    return backward(tape, loss, Tensor::scalar(1.0));
}

using TensorFn = std::function<Tensor(const Tensor&)>;

// Forward applies `forward`; backward uses the vector-Jacobian product of
// `substitute` at the same input. An empty substitute is the identity.
struct CustomGradNode {
    std::string name;
    TensorFn forward;
    TensorFn substitute;
};

inline Tensor custom_grad(const CustomGradNode& node, const Tensor& x) {
    Tensor value = node.forward(x.detached());
    for (std::size_t i = 0; i < value.size(); ++i)
        if (!std::isfinite(value[i]))
            throw NonFiniteError("custom_grad '" + node.name + "': forward produced a non-finite value at index " +
                                 std::to_string(i));
    if (!x.tracked()) return value;
    return x.tape()->record(
        "custom:" + node.name, std::move(value), {&x},
        [x = x.detached(), sub = node.substitute](const Tensor& up, const std::vector<bool>&) {
            if (!sub) return std::vector<std::optional<Tensor>>{up.shape() == x.shape() ? up : Tensor(x.shape(), up.values())};
            Tape local;
            Tensor in = local.leaf(x);
            Tensor out = sub(in);
            if (!local.owns(out)) return std::vector<std::optional<Tensor>>{Tensor::zeros(x.shape())};
            return std::vector<std::optional<Tensor>>{backward(local, out, up).wrt(in)};
        });
}

// Central differences, one coordinate at a time.
inline Tensor finite_diff_partial(const std::function<double(const Tensor&)>& f, const Tensor& x, double h,
                                  std::span<const std::size_t> coords) {
    if (!(h > 0.0)) throw Error("finite_diff_grad: step size must be positive");
    Tensor g = Tensor::zeros(x.shape());
    Tensor probe = x.detached();
    for (std::size_t i : coords) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    std::vector<std::size_t> all(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return finite_diff_partial(f, x, h, all);
}

} // namespace maskbench
