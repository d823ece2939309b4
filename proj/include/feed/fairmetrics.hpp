#pragma once

#include "feed/data.hpp"
#include "feed/kernels.hpp"
#include "feed/nn.hpp"

#include <optional>
#include <span>
#include <string>

// Group-fairness metrics by exact counting. Group labels are z in {-1, +1},
// hard predictions and class labels in {0, 1}.
namespace feed::fair {

double delta_dp(std::span<const int> preds, std::span<const int> z);
double delta_eopp(std::span<const int> preds, std::span<const int> y, std::span<const int> z);
double delta_eo(std::span<const int> preds, std::span<const int> y, std::span<const int> z);
double accuracy(std::span<const int> preds, std::span<const int> y);

// A metric that could not be computed carries the reason instead.
struct MetricValue {
    std::optional<double> value;
    std::string reason;

    bool present() const noexcept { return value.has_value(); }
};

struct FairReport {
    std::string domain;
    std::size_t size = 0;
    double accuracy = 0;
    MetricValue delta_dp, delta_eopp, delta_eo;
    kernels::ConfusionCounts counts{};
    // Examples per sensitive group, [z = -1, z = +1].
    std::array<std::size_t, 2> group_counts{};
};

// P(y=1|x) >= threshold predicts 1.
std::vector<int> hard_predictions(const Tensor& probs, double threshold = 0.5);

FairReport evaluate_predictions(std::span<const int> preds, std::span<const int> y, std::span<const int> z,
                                std::string domain);
FairReport evaluate_model(const Mlp& theta, const data::DomainDataset& dataset, double threshold = 0.5);
FairReport evaluate_model(const Mlp& theta, std::span<const data::Example> examples, std::string domain,
                          double threshold = 0.5);

} // namespace feed::fair
