#include "feed/disentangle.hpp"

#include "feed/error.hpp"
#include "feed/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace feed::disentangle {

using ad::Graph;
using ad::Var;

void Dims::validate() const
{
    if (d == 0 || d_m == 0 || d_c == 0 || d_s == 0 || d_a == 0) throw ShapeError("latent dimensions must be positive");
}

namespace {

std::vector<std::size_t> widths(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out)
{
    std::vector<std::size_t> w{in};
    for (std::size_t i = 0; i < layers; ++i) w.push_back(hidden);
    w.push_back(out);
    return w;
}

} // namespace

const std::array<const char*, 9>& DisentangleModel::store_names()
{
    static const std::array<const char*, 9> names = {"Em", "Es", "Ec", "Ea", "Gi", "Go", "h", "Di", "Do"};
    return names;
}

DisentangleModel DisentangleModel::create(const Dims& dims, const Architecture& arch, std::uint64_t seed)
{
    dims.validate();
    Rng rng(derive_seed(seed, 0x535441474531ULL));
    const auto& n = store_names();
    DisentangleModel m;
    m.dims = dims;
    m.enc_m = Mlp(n[0], widths(dims.d, arch.encoder_hidden, arch.encoder_layers, dims.d_m), Activation::none, rng);
    m.enc_s = Mlp(n[1], widths(dims.d, arch.encoder_hidden, arch.encoder_layers, dims.d_s), Activation::none, rng);
    m.enc_c = Mlp(n[2], widths(dims.d_m, arch.encoder_hidden, arch.encoder_layers, dims.d_c), Activation::none, rng);
    m.enc_a = Mlp(n[3], widths(dims.d_m, arch.encoder_hidden, arch.encoder_layers, dims.d_a), Activation::none, rng);
    m.dec_inner =
        Mlp(n[4], widths(dims.d_c + dims.d_a, arch.decoder_hidden, arch.decoder_layers, dims.d_m), Activation::none, rng);
    m.dec_outer =
        Mlp(n[5], widths(dims.d_m + dims.d_s, arch.decoder_hidden, arch.decoder_layers, dims.d), Activation::none, rng);
    m.sensitive = Mlp(n[6], {dims.d_a, arch.classifier_hidden, 2}, Activation::softmax, rng);
    m.disc_inner = Mlp(n[7], {dims.d_m, arch.discriminator_hidden, 1}, Activation::sigmoid, rng);
    m.disc_outer = Mlp(n[8], {dims.d, arch.discriminator_hidden, 1}, Activation::sigmoid, rng);
    return m;
}

DisentangleModel DisentangleModel::from_stores(std::vector<ParamStore> stores)
{
    const auto& n = store_names();
    if (stores.size() != n.size()) throw ShapeError("a stage-1 model has nine parameter stores");
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (stores[i].name() != n[i]) throw ShapeError("expected store " + std::string(n[i]) + ", got " + stores[i].name());
    }
    DisentangleModel m;
    m.enc_m = Mlp::from_params(std::move(stores[0]), Activation::none);
    m.enc_s = Mlp::from_params(std::move(stores[1]), Activation::none);
    m.enc_c = Mlp::from_params(std::move(stores[2]), Activation::none);
    m.enc_a = Mlp::from_params(std::move(stores[3]), Activation::none);
    m.dec_inner = Mlp::from_params(std::move(stores[4]), Activation::none);
    m.dec_outer = Mlp::from_params(std::move(stores[5]), Activation::none);
    m.sensitive = Mlp::from_params(std::move(stores[6]), Activation::softmax);
    m.disc_inner = Mlp::from_params(std::move(stores[7]), Activation::sigmoid);
    m.disc_outer = Mlp::from_params(std::move(stores[8]), Activation::sigmoid);
    m.dims = Dims{m.enc_m.in_dim(), m.enc_m.out_dim(), m.enc_c.out_dim(), m.enc_s.out_dim(), m.enc_a.out_dim()};

    const Dims& d = m.dims;
    const bool ok = m.enc_s.in_dim() == d.d && m.enc_c.in_dim() == d.d_m && m.enc_a.in_dim() == d.d_m &&
                    m.dec_inner.in_dim() == d.d_c + d.d_a && m.dec_inner.out_dim() == d.d_m &&
                    m.dec_outer.in_dim() == d.d_m + d.d_s && m.dec_outer.out_dim() == d.d &&
                    m.sensitive.in_dim() == d.d_a && m.sensitive.out_dim() == 2 && m.disc_inner.in_dim() == d.d_m &&
                    m.disc_inner.out_dim() == 1 && m.disc_outer.in_dim() == d.d && m.disc_outer.out_dim() == 1;
    if (!ok) throw ShapeError("stage-1 parameter stores have inconsistent dimensions");
    return m;
}

std::vector<const ParamStore*> DisentangleModel::stores() const
{
    return {&enc_m.params(),     &enc_s.params(),     &enc_c.params(),
            &enc_a.params(),     &dec_inner.params(), &dec_outer.params(),
            &sensitive.params(), &disc_inner.params(), &disc_outer.params()};
}

std::vector<ParamStore*> DisentangleModel::generator_stores()
{
    return {&enc_m.params(),     &enc_s.params(),     &enc_c.params(), &enc_a.params(),
            &dec_inner.params(), &dec_outer.params(), &sensitive.params()};
}

std::vector<ParamStore*> DisentangleModel::discriminator_stores()
{
    return {&disc_inner.params(), &disc_outer.params()};
}

LatentBatch encode(const DisentangleModel& model, const Tensor& x)
{
    if (x.rank() != 2 || x.cols() != model.dims.d) {
        throw ShapeError("encode: expected rows of " + std::to_string(model.dims.d) + " features, got " +
                         shape_str(x.shape()));
    }
    Graph g;
    const Var xv = g.constant(x);
    const Var m = model.enc_m.forward(g, xv, Binding::frozen);
    const Var s = model.enc_s.forward(g, xv, Binding::frozen);
    const Var c = model.enc_c.forward(g, m, Binding::frozen);
    const Var a = model.enc_a.forward(g, m, Binding::frozen);
    return {m.value(), c.value(), s.value(), a.value()};
}

LatentBundle encode(const DisentangleModel& model, std::span<const double> x)
{
    if (x.size() != model.dims.d) {
        throw ShapeError("encode: expected " + std::to_string(model.dims.d) + " features, got " +
                         std::to_string(x.size()));
    }
    const auto lb = encode(model, Tensor(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end())));
    return {lb.m.values(), lb.c.values(), lb.s.values(), lb.a.values()};
}

PriorSamples draw_priors(const Dims& dims, std::size_t batch, Rng& rng)
{
    auto draw = [&](std::size_t width) { return Tensor(Shape{batch, width}, sample_normal(rng, batch * width)); };
    PriorSamples p;
    p.a_c = draw(dims.d_a);
    p.a_a = draw(dims.d_a);
    p.s_in = draw(dims.d_s);
    p.a_sout = draw(dims.d_a);
    p.s_sout = draw(dims.d_s);
    p.s_mf = draw(dims.d_s);
    p.gan1_s = draw(dims.d_s);
    p.gan1_a = draw(dims.d_a);
    p.gan2_a = draw(dims.d_a);
    p.gan3_s = draw(dims.d_s);
    p.ganm_a = draw(dims.d_a);
    return p;
}

namespace {

// Batch mean of per-example L1 distances.
Var mean_l1(Var pred, Var target)
{
    return ad::mean(ad::l1_norm(ad::sub(pred, target)));
}

Var clamp_prob(Var p)
{
    return ad::clamp(p, ad::kProbEps, 1.0 - ad::kProbEps);
}

Var mean_log(Var p)
{
    return ad::mean(ad::log(clamp_prob(p)));
}

Var mean_log_one_minus(Var p)
{
    return ad::mean(ad::log(ad::add_scalar(ad::scale(clamp_prob(p), -1.0), 1.0)));
}

void check_batch(const DisentangleModel& model, const data::Batch& batch)
{
    if (batch.size() == 0) throw DataError("empty batch");
    if (batch.x.cols() != model.dims.d) {
        throw ShapeError("batch has " + std::to_string(batch.x.cols()) + " features, model expects " +
                         std::to_string(model.dims.d));
    }
}

Var sensitive_ce(Graph& g, Var probs, const std::vector<int>& z)
{
    Tensor onehot(Shape{z.size(), 2}, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) onehot.at(i, z[i] > 0 ? 1 : 0) = 1.0;
    const Var picked = ad::sum(ad::mul(g.constant(std::move(onehot)), ad::log(clamp_prob(probs))));
    return ad::scale(picked, -1.0 / static_cast<double>(z.size()));
}

} // namespace

Stage1Terms build_terms(Graph& g, const DisentangleModel& model, const data::Batch& batch, const PriorSamples& priors,
                        Binding gen, Binding disc, GanObjective objective, TermSelection select)
{
    check_batch(model, batch);
    Stage1Terms t;
    const Var x = g.constant(batch.x);
    const Var m = model.enc_m.forward(g, x, gen);
    const Var s = model.enc_s.forward(g, x, gen);
    const Var c = model.enc_c.forward(g, m, gen);
    const Var a = model.enc_a.forward(g, m, gen);
    const Var m_hat = model.dec_inner.forward(g, ad::concat({c, a}), gen);

    auto Gi = [&](Var cv, Var av) { return model.dec_inner.forward(g, ad::concat({cv, av}), gen); };
    auto Go = [&](Var mv, Var sv) { return model.dec_outer.forward(g, ad::concat({mv, sv}), gen); };

    if (select.recon) {
        t.x = mean_l1(Go(m_hat, s), x);
        t.md = mean_l1(m_hat, m);

        const Var a_c = g.constant(priors.a_c);
        t.c = mean_l1(model.enc_c.forward(g, Gi(c, a_c), gen), c);
        const Var a_a = g.constant(priors.a_a);
        t.a = mean_l1(model.enc_a.forward(g, Gi(c, a_a), gen), a_a);

        const Var s_in = g.constant(priors.s_in);
        t.s_in = mean_l1(model.enc_s.forward(g, Go(m, s_in), gen), s_in);
        const Var a_so = g.constant(priors.a_sout);
        const Var s_so = g.constant(priors.s_sout);
        t.s_out = mean_l1(model.enc_s.forward(g, Go(Gi(c, a_so), s_so), gen), s_so);
        const Var s_mf = g.constant(priors.s_mf);
        t.mf = mean_l1(model.enc_m.forward(g, Go(m, s_mf), gen), m);

        t.recon = ad::add(ad::add(ad::add(t.x, t.md), ad::add(t.c, t.a)), ad::add(ad::add(t.s_in, t.s_out), t.mf));
    }

    if (select.sensitive) {
        t.sensitive = sensitive_ce(g, model.sensitive.forward(g, a, gen), batch.z);
    }

    if (select.adversarial) {
        auto Do = [&](Var v) { return model.disc_outer.forward(g, v, disc); };
        auto Di = [&](Var v) { return model.disc_inner.forward(g, v, disc); };

        const Var fake1 = Go(Gi(c, g.constant(priors.gan1_a)), g.constant(priors.gan1_s));
        const Var fake2 = Go(Gi(c, g.constant(priors.gan2_a)), s);
        const Var fake3 = Go(m_hat, g.constant(priors.gan3_s));
        const Var fake_m = Gi(c, g.constant(priors.ganm_a));

        const Var d_fake1 = Do(fake1), d_fake2 = Do(fake2), d_fake3 = Do(fake3);
        const Var d_fake_m = Di(fake_m);
        const Var real_x = mean_log(Do(x));
        const Var real_m = mean_log(Di(m));

        const Var f1 = mean_log_one_minus(d_fake1);
        const Var f2 = mean_log_one_minus(d_fake2);
        const Var f3 = mean_log_one_minus(d_fake3);
        const Var fm = mean_log_one_minus(d_fake_m);

        // The real-data term appears once per x-GAN variant.
        const Var lx = ad::add(ad::add(ad::add(f1, f2), f3), ad::scale(real_x, 3.0));
        const Var lm = ad::add(fm, real_m);
        t.d_objective = ad::add(lx, lm);

        if (objective == GanObjective::literal) {
            t.g_objective = ad::add(ad::add(f1, f2), ad::add(f3, fm));
        } else {
            const Var ns = ad::add(ad::add(mean_log(d_fake1), mean_log(d_fake2)), ad::add(mean_log(d_fake3), mean_log(d_fake_m)));
            t.g_objective = ad::scale(ns, -1.0);
        }
    }
    return t;
}

namespace {

ReconLosses recon_values(const Stage1Terms& t)
{
    return {t.x.value().item(),    t.md.value().item(),    t.c.value().item(), t.a.value().item(),
            t.s_in.value().item(), t.s_out.value().item(), t.mf.value().item()};
}

} // namespace

ReconLosses reconstruction_losses(const DisentangleModel& model, const data::Batch& batch, const PriorSamples& priors)
{
    Graph g;
    const auto t = build_terms(g, model, batch, priors, Binding::frozen, Binding::frozen, GanObjective::literal,
                               {true, false, false});
    return recon_values(t);
}

ReconLosses reconstruction_losses(const DisentangleModel& model, const data::Batch& batch, Rng& rng)
{
    check_batch(model, batch);
    return reconstruction_losses(model, batch, draw_priors(model.dims, batch.size(), rng));
}

double sensitive_loss(const DisentangleModel& model, const data::Batch& batch)
{
    check_batch(model, batch);
    Graph g;
    const Var x = g.constant(batch.x);
    const Var a = model.enc_a.forward(g, model.enc_m.forward(g, x, Binding::frozen), Binding::frozen);
    return sensitive_ce(g, model.sensitive.forward(g, a, Binding::frozen), batch.z).value().item();
}

AdversarialLosses adversarial_losses(const DisentangleModel& model, const data::Batch& batch,
                                     const PriorSamples& priors, GanObjective objective)
{
    Graph g;
    const auto t =
        build_terms(g, model, batch, priors, Binding::frozen, Binding::frozen, objective, {false, false, true});
    return {t.d_objective.value().item(), t.g_objective.value().item()};
}

AdversarialLosses adversarial_losses(const DisentangleModel& model, const data::Batch& batch, Rng& rng,
                                     GanObjective objective)
{
    check_batch(model, batch);
    return adversarial_losses(model, batch, draw_priors(model.dims, batch.size(), rng), objective);
}

void Stage1Hyper::validate() const
{
    if (!(beta_z >= 0.0) || !(beta_g >= 0.0)) throw ConfigError("stage1 loss weights must be non-negative");
    if (!(lr_generators >= 0.0) || !(lr_discriminators >= 0.0)) {
        throw ConfigError("stage1 learning rates must be non-negative");
    }
    if (steps < 0) throw ConfigError("stage1 steps must be non-negative");
    if (batch_size == 0) throw ConfigError("stage1 batch size must be positive");
    if (monitor_size == 0) throw ConfigError("stage1 monitor size must be positive");
}

Stage1Result train_disentangler(DisentangleModel model, std::span<const data::DomainDataset> train,
                                const Stage1Hyper& hp)
{
    hp.validate();
    const auto pool = data::pooled_examples(train);
    if (pool.empty()) throw DataError("stage-1 training pool is empty");

    Rng rng(derive_seed(hp.seed, 0x7472616e31ULL));
    const std::size_t batch_size = std::min(hp.batch_size, pool.size());

    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto draw_batch = [&](std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        std::vector<data::Example> ex;
        ex.reserve(n);
        for (std::size_t i = 0; i < n; ++i) ex.push_back(pool[idx[i]]);
        return data::make_batch(ex);
    };

    const data::Batch monitor = draw_batch(std::min(hp.monitor_size, pool.size()));
    const PriorSamples monitor_priors = draw_priors(model.dims, monitor.size(), rng);

    Stage1Result result;
    result.initial_monitor_recon = reconstruction_losses(model, monitor, monitor_priors);
    result.initial_monitor_sensitive = sensitive_loss(model, monitor);

    OptimizerState opt_gen = OptimizerState::adam(hp.lr_generators);
    OptimizerState opt_disc = OptimizerState::adam(hp.lr_discriminators);

    for (long step = 0; step < hp.steps; ++step) {
        Stage1Record rec;
        rec.step = step;
        try {
            const data::Batch batch = draw_batch(batch_size);

            // Discriminator ascent with encoders/decoders frozen.
            {
                const PriorSamples priors = draw_priors(model.dims, batch.size(), rng);
                Graph g;
                const auto t = build_terms(g, model, batch, priors, Binding::frozen, Binding::trainable, hp.objective,
                                           {false, false, true});
                rec.d_objective = t.d_objective.value().item();
                const auto grads = g.backward(t.d_objective);
                const auto stores = model.discriminator_stores();
                optimizer_step(opt_disc, stores, scaled(grads, -1.0));
            }

            // Encoder/decoder/classifier descent with discriminators frozen.
            {
                const PriorSamples priors = draw_priors(model.dims, batch.size(), rng);
                Graph g;
                const auto t =
                    build_terms(g, model, batch, priors, Binding::trainable, Binding::frozen, hp.objective, {});
                rec.recon = recon_values(t);
                rec.sensitive = t.sensitive.value().item();
                rec.g_objective = t.g_objective.value().item();
                const Var loss =
                    ad::add(ad::add(t.recon, ad::scale(t.sensitive, hp.beta_z)), ad::scale(t.g_objective, hp.beta_g));
                const auto grads = g.backward(loss);
                const auto stores = model.generator_stores();
                optimizer_step(opt_gen, stores, grads);
            }

            rec.monitor_recon = reconstruction_losses(model, monitor, monitor_priors);
            rec.monitor_sensitive = sensitive_loss(model, monitor);
        } catch (const NumericError& e) {
            throw DivergenceError(std::string("stage-1 training diverged: ") + e.what(), step - 1);
        }
        result.history.push_back(rec);
    }
    result.model = std::move(model);
    return result;
}

SensitivePrediction sensitive_from_probabilities(double p_negative, double p_positive)
{
    if (p_positive >= p_negative) return {1, p_positive};
    return {-1, p_negative};
}

SensitivePrediction predict_sensitive(const DisentangleModel& model, std::span<const double> a)
{
    if (a.size() != model.dims.d_a) {
        throw ShapeError("predict_sensitive: expected " + std::to_string(model.dims.d_a) + " values, got " +
                         std::to_string(a.size()));
    }
    const Tensor p = model.sensitive.predict(Tensor(Shape{1, a.size()}, std::vector<double>(a.begin(), a.end())));
    return sensitive_from_probabilities(p[0], p[1]);
}

double sensitive_accuracy(const DisentangleModel& model, const data::Batch& batch)
{
    check_batch(model, batch);
    const auto latents = encode(model, batch.x);
    const Tensor p = model.sensitive.predict(latents.a);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (sensitive_from_probabilities(p.at(i, 0), p.at(i, 1)).z == batch.z[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch.size());
}

} // namespace feed::disentangle
