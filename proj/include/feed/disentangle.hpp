#pragma once

#include "feed/autodiff.hpp"
#include "feed/data.hpp"
#include "feed/nn.hpp"
#include "feed/rng.hpp"

#include <array>
#include <span>
#include <vector>

// Stage 1: two-level encoder/decoder that factors an example into semantic
// (m), content (c), style (s) and sensitive (a) latents.
//
//   m = Em(x)   s = Es(x)   c = Ec(m)   a = Ea(m)
//   Gi(c, a) -> m           Go(m, s) -> x
//   h(a) -> P(z)            Di(m), Do(x) -> P(real)
namespace feed::disentangle {

struct Dims {
    std::size_t d = 20;
    std::size_t d_m = 12;
    std::size_t d_c = 8;
    std::size_t d_s = 4;
    std::size_t d_a = 4;

    void validate() const;
};

struct Architecture {
    std::size_t encoder_hidden = 64;
    std::size_t encoder_layers = 2;
    std::size_t decoder_hidden = 64;
    std::size_t decoder_layers = 2;
    std::size_t classifier_hidden = 16;
    std::size_t discriminator_hidden = 64;
};

struct DisentangleModel {
    Dims dims;
    Mlp enc_m, enc_s, enc_c, enc_a;
    Mlp dec_inner, dec_outer;
    Mlp sensitive;
    Mlp disc_inner, disc_outer;

    static DisentangleModel create(const Dims& dims, const Architecture& arch, std::uint64_t seed);
    // Rebuild from the nine stores (in store_names() order), checking dims.
    static DisentangleModel from_stores(std::vector<ParamStore> stores);

    static const std::array<const char*, 9>& store_names();
    std::vector<const ParamStore*> stores() const;
    // Encoders, decoders and the sensitive classifier.
    std::vector<ParamStore*> generator_stores();
    std::vector<ParamStore*> discriminator_stores();
};

struct LatentBundle {
    std::vector<double> m, c, s, a;
};

struct LatentBatch {
    Tensor m, c, s, a;
};

LatentBundle encode(const DisentangleModel& model, std::span<const double> x);
LatentBatch encode(const DisentangleModel& model, const Tensor& x);

// Prior draws N(0, I); one fresh set per loss term.
struct PriorSamples {
    Tensor a_c;            // Lc
    Tensor a_a;            // La
    Tensor s_in;           // Ls_in
    Tensor a_sout, s_sout; // Ls_out
    Tensor s_mf;           // Lm_f
    Tensor gan1_s, gan1_a; // x-GAN, s and a from the prior
    Tensor gan2_a;         // x-GAN, s from data, a from the prior
    Tensor gan3_s;         // x-GAN, s from the prior, a from data
    Tensor ganm_a;         // m-GAN
};

PriorSamples draw_priors(const Dims& dims, std::size_t batch, Rng& rng);

struct ReconLosses {
    double x = 0, md = 0, c = 0, a = 0, s_in = 0, s_out = 0, mf = 0;

    double total() const noexcept { return x + md + c + a + s_in + s_out + mf; }
    std::array<double, 7> terms() const noexcept { return {x, md, c, a, s_in, s_out, mf}; }
};

enum class GanObjective {
    literal,        // E,G minimize log(1 - D(fake))
    nonsaturating,  // E,G minimize -log D(fake)
};

struct AdversarialLosses {
    double d_objective = 0; // maximized by the discriminators
    double g_objective = 0; // minimized by encoders/decoders
};

ReconLosses reconstruction_losses(const DisentangleModel& model, const data::Batch& batch, Rng& rng);
ReconLosses reconstruction_losses(const DisentangleModel& model, const data::Batch& batch, const PriorSamples& priors);
double sensitive_loss(const DisentangleModel& model, const data::Batch& batch);
AdversarialLosses adversarial_losses(const DisentangleModel& model, const data::Batch& batch, Rng& rng,
                                     GanObjective objective = GanObjective::literal);
AdversarialLosses adversarial_losses(const DisentangleModel& model, const data::Batch& batch,
                                     const PriorSamples& priors, GanObjective objective = GanObjective::literal);

// Graph-level terms, shared by the evaluators above and the training loop.
struct Stage1Terms {
    ad::Var x, md, c, a, s_in, s_out, mf;
    ad::Var recon;
    ad::Var sensitive;
    ad::Var d_objective;
    ad::Var g_objective;
};

struct TermSelection {
    bool recon = true;
    bool sensitive = true;
    bool adversarial = true;
};

Stage1Terms build_terms(ad::Graph& g, const DisentangleModel& model, const data::Batch& batch,
                        const PriorSamples& priors, Binding generators, Binding discriminators,
                        GanObjective objective, TermSelection select = {});

struct Stage1Hyper {
    double beta_z = 1.0;
    double beta_g = 0.1;
    double lr_generators = 1e-3;
    double lr_discriminators = 1e-3;
    long steps = 500;
    std::size_t batch_size = 64;
    std::size_t monitor_size = 256;
    std::uint64_t seed = 0;
    GanObjective objective = GanObjective::literal;

    void validate() const;
};

struct Stage1Record {
    long step = 0;
    // Losses on the step's training batch, before the update.
    ReconLosses recon;
    double sensitive = 0;
    double d_objective = 0;
    double g_objective = 0;
    // Losses on a fixed monitor batch with fixed prior draws, after the update.
    ReconLosses monitor_recon;
    double monitor_sensitive = 0;
};

struct Stage1Result {
    DisentangleModel model;
    std::vector<Stage1Record> history;
    // Monitor losses of the untrained model.
    ReconLosses initial_monitor_recon;
    double initial_monitor_sensitive = 0;
};

Stage1Result train_disentangler(DisentangleModel model, std::span<const data::DomainDataset> train,
                                const Stage1Hyper& hp);

struct SensitivePrediction {
    int z = 1;
    double probability = 0.5; // probability of the predicted class
};

// Class 0 <-> z = -1, class 1 <-> z = +1; an exact tie maps to +1.
SensitivePrediction sensitive_from_probabilities(double p_negative, double p_positive);
SensitivePrediction predict_sensitive(const DisentangleModel& model, std::span<const double> a);
// Fraction of examples whose z is recovered by h(Ea(Em(x))).
double sensitive_accuracy(const DisentangleModel& model, const data::Batch& batch);

} // namespace feed::disentangle
