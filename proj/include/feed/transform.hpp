#pragma once

#include "feed/data.hpp"
#include "feed/disentangle.hpp"
#include "feed/rng.hpp"

#include <span>
#include <vector>

// Synthetic-domain counterparts: keep an example's content factor, resample
// its style and sensitive factors from the prior and decode.
namespace feed::transform {

struct AugmentedPair {
    data::Example original;
    data::Example augmented;
};

// c = Ec(Em(x)); a' ~ N(0, I); s' ~ N(0, I); x' = Go(Gi(c, a'), s'); z' = h(a').
// The label is copied. Draws a' then s' from rng.
data::Example transform_example(const disentangle::DisentangleModel& model, const data::Example& example, Rng& rng);

// Element i is transform_example of element i, consuming rng in the same order
// as successive single-example calls.
std::vector<data::Example> augment_batch(const disentangle::DisentangleModel& model,
                                         std::span<const data::Example> batch, Rng& rng);

std::vector<AugmentedPair> augment_pairs(const disentangle::DisentangleModel& model,
                                         std::span<const data::Example> batch, Rng& rng);

} // namespace feed::transform
