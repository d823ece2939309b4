#include "feed/transform.hpp"

#include "feed/error.hpp"

namespace feed::transform {

using ad::Graph;
using ad::Var;

std::vector<data::Example> augment_batch(const disentangle::DisentangleModel& model,
                                         std::span<const data::Example> batch, Rng& rng)
{
    if (batch.empty()) return {};
    const auto& dims = model.dims;
    for (const auto& ex : batch) {
        if (ex.x.size() != dims.d) {
            throw ShapeError("transform: example has " + std::to_string(ex.x.size()) + " features, model expects " +
                             std::to_string(dims.d));
        }
    }
    const std::size_t n = batch.size();
    Tensor a_new(Shape{n, dims.d_a});
    Tensor s_new(Shape{n, dims.d_s});
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = sample_normal(rng, dims.d_a);
        const auto s = sample_normal(rng, dims.d_s);
        std::copy(a.begin(), a.end(), a_new.data().begin() + i * dims.d_a);
        std::copy(s.begin(), s.end(), s_new.data().begin() + i * dims.d_s);
    }

    const data::Batch b = data::make_batch(batch);
    Graph g;
    const Var x = g.constant(b.x);
    const Var c = model.enc_c.forward(g, model.enc_m.forward(g, x, Binding::frozen), Binding::frozen);
    const Var av = g.constant(a_new);
    const Var m = model.dec_inner.forward(g, ad::concat({c, av}), Binding::frozen);
    const Var x_new = model.dec_outer.forward(g, ad::concat({m, g.constant(s_new)}), Binding::frozen);
    const Var z_probs = model.sensitive.forward(g, av, Binding::frozen);

    const Tensor& xv = x_new.value();
    const Tensor& pz = z_probs.value();
    std::vector<data::Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        data::Example ex;
        const auto row = xv.row(i);
        ex.x.assign(row.begin(), row.end());
        ex.z = disentangle::sensitive_from_probabilities(pz.at(i, 0), pz.at(i, 1)).z;
        ex.y = batch[i].y;
        ex.domain = batch[i].domain;
        ex.id = batch[i].id;
        out.push_back(std::move(ex));
    }
    return out;
}

data::Example transform_example(const disentangle::DisentangleModel& model, const data::Example& example, Rng& rng)
{
    return augment_batch(model, std::span<const data::Example>(&example, 1), rng).front();
}

std::vector<AugmentedPair> augment_pairs(const disentangle::DisentangleModel& model,
                                         std::span<const data::Example> batch, Rng& rng)
{
    auto aug = augment_batch(model, batch, rng);
    std::vector<AugmentedPair> out;
    out.reserve(aug.size());
    for (std::size_t i = 0; i < aug.size(); ++i) out.push_back({batch[i], std::move(aug[i])});
    return out;
}

} // namespace feed::transform
