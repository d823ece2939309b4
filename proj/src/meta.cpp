#include "feed/meta.hpp"

#include "feed/error.hpp"
#include "feed/optim.hpp"
#include "feed/transform.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

namespace feed::meta {

using ad::Graph;
using ad::Var;

Mlp make_classifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0x636c6173ULL));
    return Mlp(kClassifierStore, {input_dim, hidden, hidden, hidden, 2}, Activation::softmax, rng);
}

Tensor classify(const Mlp& theta, const Tensor& x)
{
    if (x.rank() != 2 || x.cols() != theta.in_dim()) {
        throw ShapeError("classify: expected rows of " + std::to_string(theta.in_dim()) + " features, got " +
                         shape_str(x.shape()));
    }
    return theta.predict(x);
}

std::array<double, 2> classify(const Mlp& theta, std::span<const double> x)
{
    if (x.size() != theta.in_dim()) {
        throw ShapeError("classify: expected " + std::to_string(theta.in_dim()) + " features, got " +
                         std::to_string(x.size()));
    }
    const Tensor p = theta.predict(Tensor(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end())));
    return {p[0], p[1]};
}

double fair_g(double p1, int z, double f_value, FairVariant variant)
{
    if (!(p1 > 0.0 && p1 < 1.0)) throw MetricError("fair_g: group proportion p1 must lie in (0, 1)");
    const double g = (((z + 1) / 2.0) - p1) * f_value / (p1 * (1.0 - p1));
    return variant == FairVariant::literal ? std::fabs(g) : g;
}

void DualState::validate() const
{
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("dual variables must be non-negative");
    if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw ConfigError("dual slack constants must be positive");
    if (!(eta_d > 0.0)) throw ConfigError("dual learning rate must be positive");
}

DualState dual_update(const DualState& duals, double l_inv, double l_fair)
{
    DualState out = duals;
    out.lambda1 = std::max(duals.lambda1 + duals.eta_d * (l_inv - duals.gamma1), 0.0);
    out.lambda2 = std::max(duals.lambda2 + duals.eta_d * (l_fair - duals.gamma2), 0.0);
    return out;
}

namespace {

Var clamp_prob(Var p)
{
    return ad::clamp(p, ad::kProbEps, 1.0 - ad::kProbEps);
}

void check_batch(const Mlp& theta, const data::Batch& batch)
{
    if (batch.size() == 0) throw DataError("empty batch");
    if (batch.x.cols() != theta.in_dim()) {
        throw ShapeError("batch has " + std::to_string(batch.x.cols()) + " features, classifier expects " +
                         std::to_string(theta.in_dim()));
    }
}

// Mean of the masked entries of column vector v, written as
// ref + mean(v - ref) with ref the first member so that a constant group
// yields its value exactly.
Var group_mean(Graph& g, Var v, const std::vector<int>& z, int group)
{
    const std::size_t n = z.size();
    std::size_t first = n, count = 0;
    Tensor pick(Shape{1, n}, 0.0);
    Tensor mask(Shape{n, 1}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (z[i] != group) continue;
        if (first == n) first = i;
        mask[i] = 1.0;
        ++count;
    }
    pick[first] = 1.0;
    const Var ref = ad::matmul(g.constant(std::move(pick)), v);
    const Var centred = ad::mul(g.constant(std::move(mask)), ad::sub(v, ref));
    return ad::add(ref, ad::scale(ad::sum(centred), 1.0 / static_cast<double>(count)));
}

} // namespace

Var cls_term(Graph& g, Var probs, const std::vector<int>& y)
{
    Tensor onehot(Shape{y.size(), 2}, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) onehot.at(i, y[i] == 1 ? 1 : 0) = 1.0;
    const Var picked = ad::sum(ad::mul(g.constant(std::move(onehot)), ad::log(clamp_prob(probs))));
    return ad::scale(picked, -1.0 / static_cast<double>(y.size()));
}

Var inv_term(Graph&, Var probs, Var probs_aug)
{
    if (probs.shape() != probs_aug.shape()) throw ShapeError("invariance loss: batch and augmented batch differ in size");
    const Var p = clamp_prob(probs);
    const Var q = clamp_prob(probs_aug);
    const Var kl = ad::sum(ad::mul(p, ad::sub(ad::log(p), ad::log(q))));
    return ad::scale(kl, 1.0 / static_cast<double>(probs.value().rows()));
}

Var fair_term(Graph& g, Var probs, const std::vector<int>& z, FairVariant variant, LossDiagnostics* diag)
{
    const std::size_t n = z.size();
    const auto positives = static_cast<std::size_t>(std::count(z.begin(), z.end(), 1));
    if (positives == 0 || positives == n) {
        if (diag) ++diag->single_group_batches;
        return g.constant(Tensor::scalar(0.0));
    }
    const Var f = ad::slice(probs, 1, 2); // P(y_hat = 1)
    if (variant == FairVariant::signed_gap) {
        // The batch mean of the signed g equals the gap between the group means of f.
        return ad::abs(ad::sub(group_mean(g, f, z, 1), group_mean(g, f, z, -1)));
    }
    const double p1 = static_cast<double>(positives) / static_cast<double>(n);
    Tensor coef(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) coef[i] = (((z[i] + 1) / 2.0) - p1) / (p1 * (1.0 - p1));
    return ad::abs(ad::mean(ad::abs(ad::mul(g.constant(std::move(coef)), f))));
}

StageTwoLosses build_losses(Graph& g, const Mlp& theta, Binding binding, const data::Batch& batch,
                            const data::Batch& batch_aug, const DualState& duals, FairVariant variant,
                            LossDiagnostics* diag)
{
    check_batch(theta, batch);
    check_batch(theta, batch_aug);
    if (batch.size() != batch_aug.size()) throw ShapeError("batch and augmented batch differ in size");
    const Var probs = theta.forward(g, g.constant(batch.x), binding);
    const Var probs_aug = theta.forward(g, g.constant(batch_aug.x), binding);
    StageTwoLosses l;
    l.cls = cls_term(g, probs, batch.y);
    l.inv = inv_term(g, probs, probs_aug);
    l.fair = ad::add(fair_term(g, probs, batch.z, variant, diag), fair_term(g, probs_aug, batch_aug.z, variant, diag));
    l.total = ad::add(l.cls, ad::add(ad::scale(l.inv, duals.lambda1), ad::scale(l.fair, duals.lambda2)));
    return l;
}

double loss_cls(const Mlp& theta, const data::Batch& batch)
{
    check_batch(theta, batch);
    Graph g;
    return cls_term(g, theta.forward(g, g.constant(batch.x), Binding::frozen), batch.y).value().item();
}

double loss_inv(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug)
{
    check_batch(theta, batch);
    check_batch(theta, batch_aug);
    if (batch.size() != batch_aug.size()) throw ShapeError("batch and augmented batch differ in size");
    Graph g;
    const Var p = theta.forward(g, g.constant(batch.x), Binding::frozen);
    const Var q = theta.forward(g, g.constant(batch_aug.x), Binding::frozen);
    return inv_term(g, p, q).value().item();
}

double loss_fair(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug, FairVariant variant,
                 LossDiagnostics* diag)
{
    check_batch(theta, batch);
    check_batch(theta, batch_aug);
    Graph g;
    const Var p = theta.forward(g, g.constant(batch.x), Binding::frozen);
    const Var q = theta.forward(g, g.constant(batch_aug.x), Binding::frozen);
    return fair_term(g, p, batch.z, variant, diag).value().item() +
           fair_term(g, q, batch_aug.z, variant, diag).value().item();
}

double loss_total(const Mlp& theta, const data::Batch& batch, const data::Batch& batch_aug, const DualState& duals,
                  FairVariant variant, LossDiagnostics* diag)
{
    Graph g;
    return build_losses(g, theta, Binding::frozen, batch, batch_aug, duals, variant, diag).total.value().item();
}

void MetaHyper::validate() const
{
    if (!(alpha >= 0.0) || !(eta_p >= 0.0)) throw ConfigError("meta learning rates must be non-negative");
    if (inner_steps == 0) throw ConfigError("meta.inner_steps must be at least 1");
    if (tasks_per_batch == 0) throw ConfigError("meta.tasks_per_batch must be positive");
    if (iterations < 0) throw ConfigError("meta.iterations must be non-negative");
    if (n_sup == 0 || n_qry == 0) throw ConfigError("meta.n_sup and meta.n_qry must be positive");
    if (snapshot_every < 0) throw ConfigError("meta.snapshot_every must be non-negative");
}

void ErmHyper::validate() const
{
    if (steps < 0) throw ConfigError("erm.steps must be non-negative");
    if (batch_size == 0) throw ConfigError("erm.batch_size must be positive");
    if (!(lr >= 0.0)) throw ConfigError("erm.lr must be non-negative");
    if (snapshot_every < 0) throw ConfigError("erm.snapshot_every must be non-negative");
}

namespace {

double max_abs_diff(const Mlp& a, const Mlp& b)
{
    double d = 0.0;
    for (const auto& [name, t] : a.params()) {
        const Tensor& u = b.params().get(name);
        for (std::size_t i = 0; i < t.numel(); ++i) d = std::max(d, std::fabs(t[i] - u[i]));
    }
    return d;
}

std::vector<data::Example> augment_or_copy(const disentangle::DisentangleModel* model,
                                           std::span<const data::Example> batch, Rng& rng)
{
    if (model) return transform::augment_batch(*model, batch, rng);
    return {batch.begin(), batch.end()};
}

} // namespace

InnerResult inner_adapt(const Mlp& theta, std::span<const data::Example> support, const DualState& duals,
                        const disentangle::DisentangleModel* model, const MetaHyper& hp, std::size_t steps, Rng& rng)
{
    if (support.empty()) throw DataError("empty support set");
    InnerResult r{theta, duals};
    const data::Batch sup = data::make_batch(support);
    const auto aug_examples = augment_or_copy(model, support, rng);
    const data::Batch aug = data::make_batch(aug_examples);

    OptimizerState opt = OptimizerState::adam(hp.alpha);
    for (std::size_t k = 0; k < steps; ++k) {
        Graph g;
        const auto l = build_losses(g, r.adapted, Binding::trainable, sup, aug, r.duals, hp.variant);
        const auto grads = g.backward(l.total);
        optimizer_step(opt, r.adapted.params(), grads);
    }
    LossDiagnostics diag;
    Graph g;
    const auto l = build_losses(g, r.adapted, Binding::frozen, sup, aug, r.duals, hp.variant, &diag);
    r.duals = dual_update(r.duals, l.inv.value().item(), l.fair.value().item());
    return r;
}

std::uint64_t task_seed(std::uint64_t seed, long iteration)
{
    return derive_seed(seed, 0x7461736bULL, static_cast<std::uint64_t>(iteration));
}

namespace {

struct TaskOutcome {
    ad::GradientMap grads;
    data::Batch query;
    data::Batch query_aug;
    double cls = 0, inv = 0, fair = 0, total = 0;
    double shift = 0;
    std::size_t single_group = 0;
};

} // namespace

MetaResult meta_train(const Mlp& theta_init, std::span<const data::DomainDataset> pool,
                      const disentangle::DisentangleModel& model, const MetaHyper& hp, const DualState& duals,
                      const MetaOptions& options)
{
    hp.validate();
    duals.validate();
    if (pool.empty()) throw DataError("meta-training pool is empty");

    MetaResult res{theta_init, duals, {}, {}};
    OptimizerState outer = OptimizerState::sgd(hp.eta_p);
    const disentangle::DisentangleModel* aug_model = options.augment ? &model : nullptr;

    for (long it = 0; it < hp.iterations; ++it) {
        const auto tasks = data::sample_tasks(pool, hp.tasks_per_batch, hp.n_sup, hp.n_qry, hp.sampling,
                                              task_seed(hp.seed, it));
        std::vector<TaskOutcome> outcomes(tasks.size());
        std::vector<std::exception_ptr> failures(tasks.size());
        const Mlp& theta = res.theta;
        const DualState meta_duals = res.duals;

        const auto n_tasks = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t t = 0; t < n_tasks; ++t) {
            try {
                const auto& task = tasks[t];
                Rng sup_rng(derive_seed(hp.seed, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(t), 1));
                Rng qry_rng(derive_seed(hp.seed, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(t), 2));
                TaskOutcome& out = outcomes[t];

                Mlp adapted = theta;
                if (options.inner_loop) {
                    adapted = inner_adapt(theta, task.support, meta_duals, aug_model, hp, hp.inner_steps, sup_rng)
                                  .adapted;
                }
                out.shift = max_abs_diff(adapted, theta);

                out.query = data::make_batch(task.query);
                const auto qaug = augment_or_copy(aug_model, task.query, qry_rng);
                out.query_aug = data::make_batch(qaug);

                LossDiagnostics diag;
                Graph g;
                const auto l = build_losses(g, adapted, Binding::trainable, out.query, out.query_aug, meta_duals,
                                            hp.variant, &diag);
                out.cls = l.cls.value().item();
                out.inv = l.inv.value().item();
                out.fair = l.fair.value().item();
                out.total = l.total.value().item();
                out.single_group = diag.single_group_batches;
                // First-order: the gradient at theta' is applied to theta.
                out.grads = g.backward(l.total);
            } catch (...) {
                failures[t] = std::current_exception();
            }
        }
        for (const auto& f : failures) {
            if (!f) continue;
            try {
                std::rethrow_exception(f);
            } catch (const NumericError& e) {
                throw DivergenceError(std::string("meta-training diverged: ") + e.what(), it - 1);
            }
        }

        ad::GradientMap total = outcomes.front().grads;
        for (std::size_t t = 1; t < outcomes.size(); ++t) {
            for (auto& [key, g] : total) {
                const Tensor& other = outcomes[t].grads.at(key);
                for (std::size_t i = 0; i < g.numel(); ++i) g[i] += other[i];
            }
        }
        optimizer_step(outer, res.theta.params(), total);

        MetaRecord rec;
        rec.step = it;
        double inv_after = 0.0, fair_after = 0.0;
        try {
            for (const auto& out : outcomes) {
                rec.cls += out.cls;
                rec.inv += out.inv;
                rec.fair += out.fair;
                rec.total += out.total;
                rec.inner_shift = std::max(rec.inner_shift, out.shift);
                rec.single_group_batches += out.single_group;
                inv_after += loss_inv(res.theta, out.query, out.query_aug);
                fair_after += loss_fair(res.theta, out.query, out.query_aug, hp.variant);
            }
        } catch (const NumericError& e) {
            throw DivergenceError(std::string("meta-training diverged: ") + e.what(), it - 1);
        }
        const double k = static_cast<double>(outcomes.size());
        rec.cls /= k;
        rec.inv /= k;
        rec.fair /= k;
        rec.total /= k;
        res.duals = dual_update(res.duals, inv_after / k, fair_after / k);
        rec.lambda1 = res.duals.lambda1;
        rec.lambda2 = res.duals.lambda2;
        res.history.push_back(rec);

        if (hp.snapshot_every > 0 && (it + 1) % hp.snapshot_every == 0) {
            res.snapshots.push_back({it + 1, res.theta, res.duals});
        }
    }
    return res;
}

MetaResult run_ablation(AblationKind kind, const Mlp& theta_init, std::span<const data::DomainDataset> pool,
                        const disentangle::DisentangleModel& model, const MetaHyper& hp, const DualState& duals)
{
    MetaOptions opt;
    if (kind == AblationKind::no_inner_loop) opt.inner_loop = false;
    else opt.augment = false;
    return meta_train(theta_init, pool, model, hp, duals, opt);
}

Mlp adapt_downstream(const Mlp& theta_star, std::span<const data::Example> fewshot,
                     const disentangle::DisentangleModel* model, const MetaHyper& hp, const DualState& duals)
{
    if (fewshot.empty()) throw DataError("few-shot adaptation set is empty");
    Rng rng(derive_seed(hp.seed, 0x646f776eULL));
    return inner_adapt(theta_star, fewshot, duals, model, hp, hp.downstream_steps, rng).adapted;
}

ErmResult train_erm(const Mlp& theta_init, std::span<const data::DomainDataset> pool, const ErmHyper& hp,
                    bool fairness_constrained, const DualState& duals)
{
    hp.validate();
    duals.validate();
    const auto examples = data::pooled_examples(pool);
    if (examples.empty()) throw DataError("ERM training pool is empty");

    ErmResult res{theta_init, duals, {}, {}};
    OptimizerState opt = OptimizerState::adam(hp.lr);
    Rng rng(derive_seed(hp.seed, 0x65726dULL));
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t bs = std::min(hp.batch_size, examples.size());

    for (long step = 0; step < hp.steps; ++step) {
        for (std::size_t i = 0; i < bs; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        std::vector<data::Example> chosen;
        chosen.reserve(bs);
        for (std::size_t i = 0; i < bs; ++i) chosen.push_back(examples[idx[i]]);
        const data::Batch batch = data::make_batch(chosen);

        ErmRecord rec;
        rec.step = step;
        try {
            Graph g;
            const Var probs = res.theta.forward(g, g.constant(batch.x), Binding::trainable);
            const Var cls = cls_term(g, probs, batch.y);
            Var loss = cls;
            rec.cls = cls.value().item();
            if (fairness_constrained) {
                // Fairness on (batch, batch): the single-batch term counted twice.
                const Var term = fair_term(g, probs, batch.z, hp.variant, nullptr);
                const Var fair = ad::add(term, term);
                rec.fair = fair.value().item();
                loss = ad::add(cls, ad::scale(fair, res.duals.lambda2));
            }
            const auto grads = g.backward(loss);
            optimizer_step(opt, res.theta.params(), grads);
        } catch (const NumericError& e) {
            throw DivergenceError(std::string("ERM training diverged: ") + e.what(), step - 1);
        }
        if (fairness_constrained) {
            res.duals.lambda2 = std::max(res.duals.lambda2 + res.duals.eta_d * (rec.fair - res.duals.gamma2), 0.0);
        }
        rec.lambda2 = res.duals.lambda2;
        res.history.push_back(rec);
        if (hp.snapshot_every > 0 && (step + 1) % hp.snapshot_every == 0) {
            res.snapshots.push_back({step + 1, res.theta, res.duals});
        }
    }
    return res;
}

} // namespace feed::meta
