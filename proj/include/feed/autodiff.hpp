#pragma once

#include "feed/tensor.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over a per-forward-pass tape.
namespace feed::ad {

using ParamKey = std::string;
using GradientMap = std::map<ParamKey, Tensor>;

// log inputs are clamped below at this value.
inline constexpr double kLogFloor = 1e-12;
// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

class Graph;

// Handle to a node; cheap to copy, valid while its Graph lives.
class Var {
public:
    Var() = default;

    Graph& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Receives the output gradient, input values and input gradient accumulators
// (nullptr for inputs that need no gradient) and accumulates into the latter.
using BackwardFn = std::function<void(const Tensor& out_grad, const Tensor& out,
                                      std::span<const Tensor* const> inputs, std::span<Tensor* const> input_grads)>;

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // Registers a trainable parameter. Binding the same key twice returns the
    // node created by the first binding.
    Var param(const ParamKey& key, const Tensor& value);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    std::vector<ParamKey> parameters() const;

    // Gradients of a scalar loss w.r.t. every registered parameter; parameters
    // the loss does not depend on receive zeros. Consumes the tape.
    GradientMap backward(Var loss);

    // Used by op implementations.
    Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn);
    void check_owned(Var v, const char* op) const;

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::map<ParamKey, std::size_t> params_;
    bool consumed_ = false;
};

enum class OpKind {
    matmul,
    add,
    sub,
    mul,
    scalar_mul,
    relu,
    sigmoid,
    softmax,
    log,
    exp,
    abs,
    mean,
    sum,
    l1_norm,
    concat,
    slice,
};

const char* op_name(OpKind kind) noexcept;

struct OpArgs {
    double scalar = 1.0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Generic entry point over the op kinds above.
Var forward(OpKind kind, std::span<const Var> inputs, const OpArgs& args = {});

Var matmul(Var a, Var b);
// b may match a's shape, be a row vector of a.cols() values, or a scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var softmax(Var a);
Var log(Var a);
Var exp(Var a);
Var abs(Var a);
Var clamp(Var a, double lo, double hi);
Var mean(Var a);
Var sum(Var a);
// L1 norm of every row (reduction over the last axis), shape [rows].
Var l1_norm(Var a);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

} // namespace feed::ad
