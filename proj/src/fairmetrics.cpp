#include "feed/fairmetrics.hpp"

#include "feed/error.hpp"
#include "feed/meta.hpp"

#include <cmath>
#include <vector>

namespace feed::fair {

using kernels::confusion_index;
using kernels::ConfusionCounts;

namespace {

const char* group_name(int g)
{
    return g == 0 ? "z=-1" : "z=+1";
}

void check_inputs(std::span<const int> preds, std::span<const int> y, std::span<const int> z)
{
    if (preds.size() != z.size() || (!y.empty() && y.size() != z.size())) {
        throw MetricError("prediction, label and group sequences differ in length");
    }
    for (int p : preds) {
        if (p != 0 && p != 1) throw MetricError("predictions must be 0 or 1");
    }
    for (int v : y) {
        if (v != 0 && v != 1) throw MetricError("labels must be 0 or 1");
    }
    for (int v : z) {
        if (v != -1 && v != 1) throw MetricError("groups must be -1 or +1");
    }
}

ConfusionCounts count(std::span<const int> preds, std::span<const int> y, std::span<const int> z)
{
    std::vector<int> group(z.size());
    std::vector<int> label(z.size(), 0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        group[i] = z[i] > 0 ? 1 : 0;
        if (!y.empty()) label[i] = y[i];
    }
    return kernels::confusion(group, label, preds);
}

// P(y_hat = 1 | group, label), or nullopt when that cell is empty.
std::optional<double> rate(const ConfusionCounts& c, int group, int label)
{
    const auto pos = c[confusion_index(group, label, 1)];
    const auto total = pos + c[confusion_index(group, label, 0)];
    if (total == 0) return std::nullopt;
    return static_cast<double>(pos) / static_cast<double>(total);
}

double tpr_gap(const ConfusionCounts& c)
{
    const auto r0 = rate(c, 0, 1), r1 = rate(c, 1, 1);
    if (!r0) throw MetricError(std::string("group ") + group_name(0) + " has no examples with y=1");
    if (!r1) throw MetricError(std::string("group ") + group_name(1) + " has no examples with y=1");
    return std::fabs(*r0 - *r1);
}

double fpr_gap(const ConfusionCounts& c)
{
    const auto r0 = rate(c, 0, 0), r1 = rate(c, 1, 0);
    if (!r0) throw MetricError(std::string("group ") + group_name(0) + " has no examples with y=0");
    if (!r1) throw MetricError(std::string("group ") + group_name(1) + " has no examples with y=0");
    return std::fabs(*r0 - *r1);
}

} // namespace

double delta_dp(std::span<const int> preds, std::span<const int> z)
{
    check_inputs(preds, {}, z);
    const auto c = count(preds, {}, z);
    double rates[2];
    for (int g = 0; g < 2; ++g) {
        const auto pos = c[confusion_index(g, 0, 1)];
        const auto total = pos + c[confusion_index(g, 0, 0)];
        if (total == 0) throw MetricError(std::string("group ") + group_name(g) + " is empty");
        rates[g] = static_cast<double>(pos) / static_cast<double>(total);
    }
    return std::fabs(rates[0] - rates[1]);
}

double delta_eopp(std::span<const int> preds, std::span<const int> y, std::span<const int> z)
{
    check_inputs(preds, y, z);
    return tpr_gap(count(preds, y, z));
}

double delta_eo(std::span<const int> preds, std::span<const int> y, std::span<const int> z)
{
    check_inputs(preds, y, z);
    const auto c = count(preds, y, z);
    return 0.5 * (tpr_gap(c) + fpr_gap(c));
}

double accuracy(std::span<const int> preds, std::span<const int> y)
{
    if (preds.size() != y.size()) throw MetricError("prediction and label sequences differ in length");
    if (preds.empty()) throw MetricError("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hits += preds[i] == y[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

std::vector<int> hard_predictions(const Tensor& probs, double threshold)
{
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs.at(i, 1) >= threshold ? 1 : 0;
    return out;
}

FairReport evaluate_predictions(std::span<const int> preds, std::span<const int> y, std::span<const int> z,
                                std::string domain)
{
    if (preds.empty()) throw MetricError("cannot evaluate an empty dataset");
    check_inputs(preds, y, z);
    FairReport r;
    r.domain = std::move(domain);
    r.size = preds.size();
    r.accuracy = accuracy(preds, y);
    r.counts = count(preds, y, z);
    for (int v : z) ++r.group_counts[v > 0 ? 1 : 0];

    auto attempt = [](MetricValue& out, auto&& fn) {
        try {
            out.value = fn();
        } catch (const MetricError& e) {
            out.reason = e.what();
        }
    };
    attempt(r.delta_dp, [&] { return delta_dp(preds, z); });
    attempt(r.delta_eopp, [&] { return delta_eopp(preds, y, z); });
    attempt(r.delta_eo, [&] { return delta_eo(preds, y, z); });
    return r;
}

FairReport evaluate_model(const Mlp& theta, std::span<const data::Example> examples, std::string domain,
                          double threshold)
{
    if (examples.empty()) throw DataError("cannot evaluate an empty dataset");
    const auto batch = data::make_batch(examples);
    const auto preds = hard_predictions(meta::classify(theta, batch.x), threshold);
    return evaluate_predictions(preds, batch.y, batch.z, std::move(domain));
}

FairReport evaluate_model(const Mlp& theta, const data::DomainDataset& dataset, double threshold)
{
    return evaluate_model(theta, dataset.examples, dataset.name, threshold);
}

} // namespace feed::fair
