#include "feed/autodiff.hpp"

#include "feed/error.hpp"
#include "feed/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace feed::ad {

const Tensor& Var::value() const
{
    if (!graph_) throw GraphError("use of an unbound variable");
    return graph_->value(*this);
}

Var Graph::constant(Tensor value)
{
    if (!value.all_finite()) throw NumericError("non-finite constant");
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Graph::param(const ParamKey& key, const Tensor& value)
{
    if (consumed_) throw GraphError("graph already consumed");
    if (auto it = params_.find(key); it != params_.end()) return Var(this, it->second);
    if (!value.all_finite()) throw NumericError("non-finite parameter " + key);
    nodes_.push_back(Node{value, {}, {}, true});
    params_.emplace(key, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const
{
    check_owned(v, "value");
    return nodes_[v.id()].value;
}

bool Graph::requires_grad(Var v) const
{
    check_owned(v, "requires_grad");
    return nodes_[v.id()].requires_grad;
}

std::vector<ParamKey> Graph::parameters() const
{
    std::vector<ParamKey> keys;
    keys.reserve(params_.size());
    for (const auto& [k, _] : params_) keys.push_back(k);
    return keys;
}

void Graph::check_owned(Var v, const char* op) const
{
    if (!v.valid() || &v.graph() != this || v.id() >= nodes_.size()) {
        throw GraphError(std::string(op) + ": variable does not belong to this graph");
    }
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn)
{
    if (consumed_) throw GraphError("graph already consumed");
    if (!value.all_finite()) throw NumericError(std::string("non-finite output of ") + op);
    Node node{std::move(value), {}, {}, false};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        check_owned(in, op);
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

GradientMap Graph::backward(Var loss)
{
    if (consumed_) throw GraphError("graph already consumed");
    check_owned(loss, "backward");
    if (nodes_[loss.id()].value.numel() != 1) {
        throw GraphError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss.id()].value.shape()));
    }

    std::vector<Tensor> grads(loss.id() + 1);
    std::vector<bool> has_grad(loss.id() + 1, false);
    grads[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);
    has_grad[loss.id()] = true;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!has_grad[i] || !node.requires_grad || !node.backward) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            in_values.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (!has_grad[in]) {
                    grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
                    has_grad[in] = true;
                }
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(grads[i], node.value, in_values, in_grads);
    }

    GradientMap out;
    for (const auto& [key, id] : params_) {
        if (id <= loss.id() && has_grad[id]) out.emplace(key, std::move(grads[id]));
        else out.emplace(key, Tensor(nodes_[id].value.shape(), 0.0));
    }

    consumed_ = true;
    for (auto& node : nodes_) node.backward = nullptr;
    return out;
}

namespace {

Graph& common_graph(std::span<const Var> vars, const char* op)
{
    if (vars.empty() || !vars[0].valid()) throw GraphError(std::string(op) + ": missing input");
    Graph& g = vars[0].graph();
    for (const auto& v : vars) g.check_owned(v, op);
    return g;
}

enum class Broadcast { same, row, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.numel() == 1) return Broadcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols() && a.rank() >= 1) return Broadcast::row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

double bval(const Tensor& b, Broadcast kind, std::size_t i, std::size_t cols)
{
    switch (kind) {
    case Broadcast::same: return b[i];
    case Broadcast::row: return b[i % cols];
    default: return b[0];
    }
}

void accumulate_broadcast(Tensor& gb, Broadcast kind, std::size_t i, std::size_t cols, double v)
{
    switch (kind) {
    case Broadcast::same: gb[i] += v; break;
    case Broadcast::row: gb[i % cols] += v; break;
    default: gb[0] += v; break;
    }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, const char* op, Fwd fwd, Deriv deriv)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, op);
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
    return g.record(op, std::move(out), {a},
                    [deriv](const Tensor& go, const Tensor& y, std::span<const Tensor* const> ins,
                            std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        const Tensor& xv = *ins[0];
                        Tensor& gx = *gins[0];
                        for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += go[i] * deriv(xv[i], y[i]);
                    });
}

template <typename Fwd, typename Da, typename Db>
Var binary(Var a, Var b, const char* op, Fwd fwd, Da da, Db db)
{
    const Var in[] = {a, b};
    Graph& g = common_graph(in, op);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, op);
    const std::size_t cols = av.cols();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i], bval(bv, kind, i, cols));
    return g.record(op, std::move(out), {a, b},
                    [kind, cols, da, db](const Tensor& go, const Tensor&, std::span<const Tensor* const> ins,
                                         std::span<Tensor* const> gins) {
                        const Tensor& x = *ins[0];
                        const Tensor& y = *ins[1];
                        for (std::size_t i = 0; i < x.numel(); ++i) {
                            const double yv = bval(y, kind, i, cols);
                            if (gins[0]) (*gins[0])[i] += go[i] * da(x[i], yv);
                            if (gins[1]) accumulate_broadcast(*gins[1], kind, i, cols, go[i] * db(x[i], yv));
                        }
                    });
}

void require_rank2(const Tensor& t, const char* op)
{
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

} // namespace

Var matmul(Var a, Var b)
{
    const Var in[] = {a, b};
    Graph& g = common_graph(in, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    Tensor out(Shape{m, n});
    kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
    return g.record("matmul", std::move(out), {a, b},
                    [m, k, n](const Tensor& go, const Tensor&, std::span<const Tensor* const> ins,
                              std::span<Tensor* const> gins) {
                        if (gins[0]) {
                            // dA = dC * B^T
                            Tensor tmp(Shape{m, k});
                            kernels::matmul_nt(go.data(), ins[1]->data(), tmp.data(), m, n, k);
                            for (std::size_t i = 0; i < tmp.numel(); ++i) (*gins[0])[i] += tmp[i];
                        }
                        if (gins[1]) {
                            // dB = A^T * dC
                            Tensor tmp(Shape{k, n});
                            kernels::matmul_tn(ins[0]->data(), go.data(), tmp.data(), k, m, n);
                            for (std::size_t i = 0; i < tmp.numel(); ++i) (*gins[1])[i] += tmp[i];
                        }
                    });
}

Var add(Var a, Var b)
{
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b)
{
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b)
{
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var scale(Var a, double s)
{
    return unary(
        a, "scalar_mul", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s)
{
    return unary(
        a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(Var a)
{
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a)
{
    return unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a)
{
    return unary(
        a, "log", [](double x) { return std::log(std::max(x, kLogFloor)); },
        [](double x, double) { return x >= kLogFloor ? 1.0 / x : 0.0; });
}

Var exp(Var a)
{
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// Subgradient 0 at the kink.
Var abs(Var a)
{
    return unary(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(Var a, double lo, double hi)
{
    if (!(lo <= hi)) throw ShapeError("clamp: empty interval");
    return unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var softmax(Var a)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, "softmax");
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x[r * cols];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = std::exp(x[r * cols + c] - mx);
            z += out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
    }
    return g.record("softmax", std::move(out), {a},
                    [rows, cols](const Tensor& go, const Tensor& y, std::span<const Tensor* const>,
                                 std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) dot += go[r * cols + c] * y[r * cols + c];
                            for (std::size_t c = 0; c < cols; ++c) {
                                (*gins[0])[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - dot);
                            }
                        }
                    });
}

Var sum(Var a)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, "sum");
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return g.record("sum", Tensor::scalar(s), {a},
                    [](const Tensor& go, const Tensor&, std::span<const Tensor* const>, std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        for (auto& v : gins[0]->data()) v += go[0];
                    });
}

Var mean(Var a)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, "mean");
    const double n = static_cast<double>(a.value().numel());
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return g.record("mean", Tensor::scalar(s / n), {a},
                    [n](const Tensor& go, const Tensor&, std::span<const Tensor* const>, std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        for (auto& v : gins[0]->data()) v += go[0] / n;
                    });
}

Var l1_norm(Var a)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, "l1_norm");
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::fabs(x[r * cols + c]);
        out[r] = s;
    }
    return g.record("l1_norm", std::move(out), {a},
                    [cols](const Tensor& go, const Tensor&, std::span<const Tensor* const> ins,
                           std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        const Tensor& xv = *ins[0];
                        for (std::size_t i = 0; i < xv.numel(); ++i) {
                            const double sgn = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
                            (*gins[0])[i] += go[i / cols] * sgn;
                        }
                    });
}

Var concat(std::span<const Var> parts)
{
    Graph& g = common_graph(parts, "concat");
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Tensor& t = p.value();
        require_rank2(t, "concat");
        if (t.rows() != rows) throw ShapeError("concat: row counts differ");
        widths.push_back(t.cols());
        total += t.cols();
    }
    Tensor out(Shape{rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& t = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(t.data().begin() + r * widths[k], widths[k], out.data().begin() + r * total + off);
        }
        off += widths[k];
    }
    return g.record("concat", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                    [rows, total, widths](const Tensor& go, const Tensor&, std::span<const Tensor* const>,
                                          std::span<Tensor* const> gins) {
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (gins[k]) {
                                for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < widths[k]; ++c) {
                                        (*gins[k])[r * widths[k] + c] += go[r * total + off + c];
                                    }
                                }
                            }
                            off += widths[k];
                        }
                    });
}

Var concat(std::initializer_list<Var> parts)
{
    return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice(Var a, std::size_t begin, std::size_t end)
{
    const Var in[] = {a};
    Graph& g = common_graph(in, "slice");
    const Tensor& x = a.value();
    require_rank2(x, "slice");
    const std::size_t rows = x.rows(), cols = x.cols();
    if (begin >= end || end > cols) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out(Shape{rows, w});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * cols + begin + c];
    }
    return g.record("slice", std::move(out), {a},
                    [rows, cols, begin, w](const Tensor& go, const Tensor&, std::span<const Tensor* const>,
                                           std::span<Tensor* const> gins) {
                        if (!gins[0]) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < w; ++c) (*gins[0])[r * cols + begin + c] += go[r * w + c];
                        }
                    });
}

const char* op_name(OpKind kind) noexcept
{
    switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::abs: return "abs";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::l1_norm: return "l1_norm";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    }
    return "unknown";
}

Var forward(OpKind kind, std::span<const Var> inputs, const OpArgs& args)
{
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(inputs.size()));
        }
    };
    switch (kind) {
    case OpKind::matmul: arity(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: arity(2); return add(inputs[0], inputs[1]);
    case OpKind::sub: arity(2); return sub(inputs[0], inputs[1]);
    case OpKind::mul: arity(2); return mul(inputs[0], inputs[1]);
    case OpKind::scalar_mul: arity(1); return scale(inputs[0], args.scalar);
    case OpKind::relu: arity(1); return relu(inputs[0]);
    case OpKind::sigmoid: arity(1); return sigmoid(inputs[0]);
    case OpKind::softmax: arity(1); return softmax(inputs[0]);
    case OpKind::log: arity(1); return log(inputs[0]);
    case OpKind::exp: arity(1); return exp(inputs[0]);
    case OpKind::abs: arity(1); return abs(inputs[0]);
    case OpKind::mean: arity(1); return mean(inputs[0]);
    case OpKind::sum: arity(1); return sum(inputs[0]);
    case OpKind::l1_norm: arity(1); return l1_norm(inputs[0]);
    case OpKind::concat: return concat(inputs);
    case OpKind::slice: arity(1); return slice(inputs[0], args.begin, args.end);
    }
    throw ShapeError("unknown op kind");
}

} // namespace feed::ad
