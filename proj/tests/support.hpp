#pragma once

// Oracles and generators shared by the unit tests and the acceptance runner.

#include "feed/autodiff.hpp"
#include "feed/nn.hpp"
#include "feed/rng.hpp"
#include "feed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace feed::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Uniform in [lo, hi] with |v| >= gap, to keep finite differences off kinks at 0.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double gap = 0.05, double lo = -2.0, double hi = 2.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        do {
            v = u(rng);
        } while (std::abs(v) < gap);
    }
    return t;
}

// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// turning round-off into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-3)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using LossBuilder = std::function<ad::Var(ad::Graph&)>;

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Central differences over every entry of every store; `loss` must bind the
// stores' current values as trainable parameters.
inline GradCheck gradcheck_stores(const std::vector<ParamStore*>& stores, const LossBuilder& loss, double h = 1e-5)
{
    ad::GradientMap grads;
    {
        ad::Graph g;
        grads = g.backward(loss(g));
    }
    auto eval = [&] {
        ad::Graph g;
        return loss(g).value().item();
    };
    GradCheck out;
    for (auto* store : stores) {
        for (auto& [local, t] : *store) {
            const auto key = store->key(local);
            const auto it = grads.find(key);
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const double orig = t[i];
                t[i] = orig + h;
                const double fp = eval();
                t[i] = orig - h;
                const double fm = eval();
                t[i] = orig;
                const double numeric = (fp - fm) / (2 * h);
                const double analytic = it == grads.end() ? 0.0 : it->second[i];
                out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, numeric));
                ++out.checked;
            }
        }
    }
    return out;
}

struct OpCase {
    const char* name;
    ParamStore store;
    std::function<ad::Var(ad::Graph&, std::vector<ad::Var>)> op;
};

// loss = sum(op(params) * R) for a fixed random R, so every output entry
// contributes a distinct weight.
inline double op_gradcheck(ParamStore& store, const std::function<ad::Var(ad::Graph&, std::vector<ad::Var>)>& op,
                           std::uint64_t seed)
{
    Tensor weights;
    bool have_weights = false;
    Rng rng(seed);
    auto bind = [&](ad::Graph& g) {
        std::vector<ad::Var> vars;
        for (auto& [local, t] : store) vars.push_back(g.param(store.key(local), t));
        return vars;
    };
    auto loss = [&](ad::Graph& g) {
        auto out = op(g, bind(g));
        if (!have_weights) {
            weights = testing::random_tensor(out.shape().empty() ? Shape{} : out.shape(), rng);
            have_weights = true;
        }
        return ad::sum(ad::mul(out, g.constant(weights)));
    };
    return testing::gradcheck_stores({&store}, loss).max_rel_error;
}

inline ParamStore store_of(std::initializer_list<std::pair<const char*, Tensor>> tensors)
{
    ParamStore s("t");
    for (const auto& [k, v] : tensors) s.set(k, v);
    return s;
}

// One case per differentiable op. Inputs stay off the kinks of relu, abs,
// l1_norm and clamp.
inline std::vector<OpCase> differentiable_op_cases(Rng& rng)
{
    using V = std::vector<ad::Var>;
    std::vector<OpCase> cases;
    auto r = [&](Shape s) { return testing::random_tensor(std::move(s), rng); };
    auto rz = [&](Shape s) { return testing::random_away_from_zero(std::move(s), rng); };
    auto rp = [&](Shape s) { return testing::random_tensor(std::move(s), rng, 0.1, 2.0); };

    cases.push_back({"matmul", store_of({{"a", r({3, 4})}, {"b", r({4, 2})}}), [](ad::Graph&, V v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"add", store_of({{"a", r({3, 4})}, {"b", r({3, 4})}}), [](ad::Graph&, V v) { return v[0] + v[1]; }});
    cases.push_back({"add_row", store_of({{"a", r({3, 4})}, {"b", r({4})}}), [](ad::Graph&, V v) { return v[0] + v[1]; }});
    cases.push_back({"add_scalar_tensor", store_of({{"a", r({3, 4})}, {"b", r({1})}}), [](ad::Graph&, V v) { return v[0] + v[1]; }});
    cases.push_back({"sub", store_of({{"a", r({3, 4})}, {"b", r({3, 4})}}), [](ad::Graph&, V v) { return v[0] - v[1]; }});
    cases.push_back({"sub_row", store_of({{"a", r({2, 3})}, {"b", r({3})}}), [](ad::Graph&, V v) { return v[0] - v[1]; }});
    cases.push_back({"mul", store_of({{"a", r({3, 4})}, {"b", r({3, 4})}}), [](ad::Graph&, V v) { return v[0] * v[1]; }});
    cases.push_back({"mul_row", store_of({{"a", r({3, 4})}, {"b", r({4})}}), [](ad::Graph&, V v) { return v[0] * v[1]; }});
    cases.push_back({"scale", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return -1.7 * v[0]; }});
    cases.push_back({"add_scalar", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::add_scalar(v[0], 0.3); }});
    cases.push_back({"relu", store_of({{"a", rz({3, 4})}}), [](ad::Graph&, V v) { return ad::relu(v[0]); }});
    cases.push_back({"sigmoid", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::sigmoid(v[0]); }});
    cases.push_back({"softmax", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::softmax(v[0]); }});
    cases.push_back({"softmax_vector", store_of({{"a", r({5})}}), [](ad::Graph&, V v) { return ad::softmax(v[0]); }});
    cases.push_back({"log", store_of({{"a", rp({3, 4})}}), [](ad::Graph&, V v) { return ad::log(v[0]); }});
    cases.push_back({"exp", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::exp(v[0]); }});
    cases.push_back({"abs", store_of({{"a", rz({3, 4})}}), [](ad::Graph&, V v) { return ad::abs(v[0]); }});
    auto clamp_in = rz({3, 4});
    for (auto& v : clamp_in.data()) {
        if (std::abs(std::abs(v) - 1.0) < 0.05) v *= 0.5;
    }
    cases.push_back({"clamp", store_of({{"a", clamp_in}}), [](ad::Graph&, V v) { return ad::clamp(v[0], -1.0, 1.0); }});
    cases.push_back({"mean", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::mean(v[0]); }});
    cases.push_back({"sum", store_of({{"a", r({3, 4})}}), [](ad::Graph&, V v) { return ad::sum(v[0]); }});
    cases.push_back({"l1_norm", store_of({{"a", rz({3, 4})}}), [](ad::Graph&, V v) { return ad::l1_norm(v[0]); }});
    cases.push_back({"concat", store_of({{"a", r({3, 2})}, {"b", r({3, 3})}}), [](ad::Graph&, V v) { return ad::concat({v[0], v[1]}); }});
    cases.push_back({"slice", store_of({{"a", r({3, 5})}}), [](ad::Graph&, V v) { return ad::slice(v[0], 1, 4); }});
    return cases;
}

// Group-fairness gaps by direct enumeration, written without the confusion
// kernel. Absent when a conditioning cell is empty.
struct BruteMetrics {
    std::optional<double> dp, eopp, eo;
    double accuracy = 0;
};

inline std::optional<double> brute_rate(const std::vector<int>& pred, const std::vector<int>& y,
                                        const std::vector<int>& z, int zv, std::optional<int> yv)
{
    long num = 0, den = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (z[i] != zv) continue;
        if (yv && y[i] != *yv) continue;
        ++den;
        if (pred[i] == 1) ++num;
    }
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline BruteMetrics brute_metrics(const std::vector<int>& pred, const std::vector<int>& y, const std::vector<int>& z)
{
    BruteMetrics m;
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
    m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    const auto pn = brute_rate(pred, y, z, -1, std::nullopt);
    const auto pp = brute_rate(pred, y, z, +1, std::nullopt);
    if (pn && pp) m.dp = std::abs(*pn - *pp);
    const auto tn = brute_rate(pred, y, z, -1, 1);
    const auto tp = brute_rate(pred, y, z, +1, 1);
    if (tn && tp) m.eopp = std::abs(*tn - *tp);
    const auto fn = brute_rate(pred, y, z, -1, 0);
    const auto fp = brute_rate(pred, y, z, +1, 0);
    if (tn && tp && fn && fp) m.eo = 0.5 * (std::abs(*tn - *tp) + std::abs(*fn - *fp));
    return m;
}

struct PredictionSet {
    std::vector<int> pred, y, z;
};

inline PredictionSet random_prediction_set(Rng& rng, std::size_t n)
{
    std::bernoulli_distribution coin(0.5);
    PredictionSet s;
    for (std::size_t i = 0; i < n; ++i) {
        s.pred.push_back(coin(rng));
        s.y.push_back(coin(rng));
        s.z.push_back(coin(rng) ? 1 : -1);
    }
    return s;
}

} // namespace feed::testing
