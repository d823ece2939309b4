#include "feed/optim.hpp"

#include "feed/error.hpp"

#include <cmath>

namespace feed {

OptimizerState OptimizerState::sgd(double lr)
{
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr)
{
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    return s;
}

void optimizer_step(OptimizerState& state, std::span<ParamStore* const> stores, const ad::GradientMap& grads)
{
    if (!std::isfinite(state.lr) || state.lr < 0.0) {
        throw OptimizerError("learning rate must be finite and non-negative, got " + std::to_string(state.lr));
    }
    // Validate before touching anything so a failed step leaves no partial update.
    for (const ParamStore* store : stores) {
        for (const auto& [local, p] : *store) {
            auto it = grads.find(store->key(local));
            if (it == grads.end()) throw OptimizerError("missing gradient for " + store->key(local));
            if (it->second.shape() != p.shape()) {
                throw OptimizerError("gradient shape " + shape_str(it->second.shape()) + " does not match " +
                                     store->key(local) + " " + shape_str(p.shape()));
            }
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    for (ParamStore* store : stores) {
        for (auto& [local, p] : *store) {
            const auto key = store->key(local);
            const Tensor& g = grads.at(key);
            if (state.kind == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= state.lr * g[i];
                continue;
            }
            auto [mit, _m] = state.first_moment.try_emplace(key, p.shape(), 0.0);
            auto [vit, _v] = state.second_moment.try_emplace(key, p.shape(), 0.0);
            Tensor& m = mit->second;
            Tensor& v = vit->second;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
            }
        }
    }
}

void optimizer_step(OptimizerState& state, ParamStore& store, const ad::GradientMap& grads)
{
    ParamStore* stores[] = {&store};
    optimizer_step(state, stores, grads);
}

ad::GradientMap scaled(const ad::GradientMap& grads, double factor)
{
    ad::GradientMap out;
    for (const auto& [k, g] : grads) {
        Tensor t = g;
        for (auto& v : t.data()) v *= factor;
        out.emplace(k, std::move(t));
    }
    return out;
}

} // namespace feed
