#pragma once

#include "feed/autodiff.hpp"
#include "feed/data.hpp"
#include "feed/disentangle.hpp"
#include "feed/nn.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

// Stage 2: fairness-aware meta-learning of a classifier initialization with
// primal-dual handling of the invariance and fairness constraints.
namespace feed::meta {

inline constexpr const char* kClassifierStore = "f";

// 4 fully-connected layers with a 2-way softmax head.
Mlp make_classifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

// Rows of [P(y=0), P(y=1)].
Tensor classify(const Mlp& theta, const Tensor& x);
std::array<double, 2> classify(const Mlp& theta, std::span<const double> x);

enum class FairVariant {
    signed_gap, // inner absolute value dropped
    literal,    // both absolute values as printed
};

struct LossDiagnostics {
    std::size_t single_group_batches = 0;
};

// ((z+1)/2 - p1) f / (p1 (1 - p1)), absolute value for the literal variant.
double fair_g(double p1, int z, double f_value, FairVariant variant);

struct DualState {
    double lambda1 = 0.0; // invariance
    double lambda2 = 0.0; // fairness
    double gamma1 = 0.05;
    double gamma2 = 0.05;
    double eta_d = 1e-2;

    void validate() const;
};

// lambda <- max(lambda + eta_d (L - gamma), 0) for both constraints.
DualState dual_update(const DualState& duals, double l_inv, double l_fair);

struct StageTwoLosses {
    ad::Var cls, inv, fair, total;
};

// Graph-level losses. batch_aug may alias batch.
StageTwoLosses build_losses(ad::Graph& g, const Mlp& theta, Binding binding, const data::Batch& batch,
                            const data::Batch& batch_aug, const DualState& duals, FairVariant variant,
                            LossDiagnostics* diag = nullptr);

ad::Var cls_term(ad::Graph& g, ad::Var probs, const std::vector<int>& y);
ad::Var inv_term(ad::Graph& g, ad::Var probs, ad::Var probs_aug);
ad::Var fair_term(ad::Graph& g, ad::Var probs, const std::vector<int>& z, FairVariant variant,
                  LossDiagnostics* diag);

double loss_cls(const Mlp& theta, const data::Batch& batch);
double loss_inv(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug);
double loss_fair(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug, FairVariant variant,
                 LossDiagnostics* diag = nullptr);
double loss_total(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug, const DualState& duals,
                  FairVariant variant, LossDiagnostics* diag = nullptr);

struct MetaHyper {
    double alpha = 1e-3;     // inner-loop Adam learning rate
    double eta_p = 1e-2;     // meta (outer) gradient-descent rate
    std::size_t inner_steps = 5;
    std::size_t tasks_per_batch = 4;
    long iterations = 200;
    std::size_t n_sup = 32;
    std::size_t n_qry = 32;
    std::size_t downstream_steps = 5;
    FairVariant variant = FairVariant::signed_gap;
    data::SamplingMode sampling = data::SamplingMode::pooled;
    std::uint64_t seed = 0;
    // Keep a copy of theta every this many iterations (0 = never).
    long snapshot_every = 0;

    void validate() const;
};

// Which parts of the procedure run; the defaults are the full method.
struct MetaOptions {
    bool inner_loop = true;
    bool augment = true;
};

enum class AblationKind { no_inner_loop, no_augment };

struct InnerResult {
    Mlp adapted;
    DualState duals;
};

// Adam steps on the total loss over (support, T(support)); the task duals start
// from `duals` and are updated once afterwards from the support losses.
// model == nullptr means no augmentation: the support set stands in for its
// own augmented copy.
InnerResult inner_adapt(const Mlp& theta, std::span<const data::Example> support, const DualState& duals,
                        const disentangle::DisentangleModel* model, const MetaHyper& hp, std::size_t steps, Rng& rng);

struct MetaRecord {
    long step = 0;
    // Query losses at the adapted parameters, averaged over tasks.
    double cls = 0, inv = 0, fair = 0, total = 0;
    double lambda1 = 0, lambda2 = 0; // meta duals after this iteration
    double inner_shift = 0;          // max |theta' - theta| over tasks
    std::size_t single_group_batches = 0;
};

struct Snapshot {
    long iteration = 0; // number of completed updates
    Mlp theta;
    DualState duals;
};

struct MetaResult {
    Mlp theta;
    DualState duals;
    std::vector<MetaRecord> history;
    std::vector<Snapshot> snapshots;
};

std::uint64_t task_seed(std::uint64_t seed, long iteration);

MetaResult meta_train(const Mlp& theta_init, std::span<const data::DomainDataset> pool,
                      const disentangle::DisentangleModel& model, const MetaHyper& hp, const DualState& duals,
                      const MetaOptions& options = {});

MetaResult run_ablation(AblationKind kind, const Mlp& theta_init, std::span<const data::DomainDataset> pool,
                        const disentangle::DisentangleModel& model, const MetaHyper& hp, const DualState& duals);

// Fine-tunes the meta-learned initialization on a few labelled examples of an
// unseen domain with the inner-loop machinery. model == nullptr disables
// augmentation.
Mlp adapt_downstream(const Mlp& theta_star, std::span<const data::Example> fewshot,
                     const disentangle::DisentangleModel* model, const MetaHyper& hp, const DualState& duals);

struct ErmHyper {
    long steps = 1000;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    FairVariant variant = FairVariant::signed_gap;
    std::uint64_t seed = 0;
    long snapshot_every = 0;

    void validate() const;
};

struct ErmRecord {
    long step = 0;
    double cls = 0;
    double fair = 0;
    double lambda2 = 0;
};

struct ErmResult {
    Mlp theta;
    DualState duals;
    std::vector<ErmRecord> history;
    std::vector<Snapshot> snapshots;
};

// Minibatch Adam on the pooled data: cross-entropy, plus lambda2 * fairness on
// (batch, batch) with dual ascent on lambda2 when fairness_constrained.
ErmResult train_erm(const Mlp& theta_init, std::span<const data::DomainDataset> pool, const ErmHyper& hp,
                    bool fairness_constrained, const DualState& duals);

} // namespace feed::meta
