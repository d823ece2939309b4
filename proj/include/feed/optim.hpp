#pragma once

#include "feed/autodiff.hpp"
#include "feed/nn.hpp"

#include <map>
#include <span>

namespace feed {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::map<ad::ParamKey, Tensor> first_moment;
    std::map<ad::ParamKey, Tensor> second_moment;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr);
};

// One update of every parameter in `stores`. A learning rate of 0 leaves the
// parameters untouched; negative or non-finite rates are rejected.
void optimizer_step(OptimizerState& state, std::span<ParamStore* const> stores, const ad::GradientMap& grads);
void optimizer_step(OptimizerState& state, ParamStore& store, const ad::GradientMap& grads);

// grads scaled by `factor` (e.g. -1 to turn ascent into descent).
ad::GradientMap scaled(const ad::GradientMap& grads, double factor);

} // namespace feed
