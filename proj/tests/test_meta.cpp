#include "feed/error.hpp"
#include "feed/meta.hpp"
#include "feed/optim.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace feed;
using namespace feed::meta;

namespace {

std::vector<data::Example> random_examples(std::size_t n, std::size_t d, std::uint64_t seed)
{
    Rng rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<data::Example> ex;
    for (std::size_t i = 0; i < n; ++i) {
        ex.push_back({sample_normal(rng, d), (i % 2) ? 1 : -1, static_cast<int>(coin(rng)), 0, i});
    }
    return ex;
}

data::Batch random_batch(std::size_t n, std::size_t d, std::uint64_t seed)
{
    return data::make_batch(random_examples(n, d, seed));
}

void set_output_bias(Mlp& theta, double b0, double b1)
{
    const auto last = theta.layers() - 1;
    for (auto& v : theta.params().get(Mlp::weight_name(last)).data()) v = 0.0;
    auto& b = theta.params().get(Mlp::bias_name(last));
    b[0] = b0;
    b[1] = b1;
}

std::vector<data::DomainDataset> small_pool(std::uint64_t seed, std::size_t count = 120)
{
    return data::generate_synthetic(data::SynthSpec{}, count, seed);
}

DualState frozen_duals()
{
    DualState d;
    d.gamma1 = 1e9;
    d.gamma2 = 1e9;
    return d;
}

} // namespace

TEST_CASE("classify returns normalized, deterministic probabilities")
{
    auto theta = make_classifier(20, 16, 1);
    Rng rng(2);
    const Tensor x(Shape{10, 20}, sample_normal(rng, 200));
    const auto p = classify(theta, x);
    for (std::size_t r = 0; r < 10; ++r) CHECK(std::abs(p.at(r, 0) + p.at(r, 1) - 1.0) <= 1e-9);
    CHECK(classify(theta, x) == p);
    CHECK(theta.layers() == 4);
    set_output_bias(theta, 0, 0);
    const auto u = classify(theta, x.row(3));
    CHECK(u[0] == 0.5);
    CHECK(u[1] == 0.5);
    CHECK_THROWS_AS(classify(theta, std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("classification loss examples")
{
    auto theta = make_classifier(6, 8, 3);
    const auto batch = random_batch(12, 6, 4);
    set_output_bias(theta, 0, 0);
    CHECK(loss_cls(theta, batch) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    auto ones = batch;
    for (auto& y : ones.y) y = 1;
    set_output_bias(theta, -50, 50);
    CHECK(loss_cls(theta, ones) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));

    const auto fresh = make_classifier(6, 8, 5);
    const auto p = classify(fresh, batch.x);
    double ce = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) ce -= std::log(std::clamp(p.at(i, batch.y[i]), 1e-7, 1 - 1e-7));
    CHECK(std::abs(loss_cls(fresh, batch) - ce / 12.0) <= 1e-12);
    CHECK_THROWS_AS(loss_cls(fresh, data::Batch{Tensor(Shape{1, 6}), {}, {}}), DataError);
}

TEST_CASE("invariance loss examples")
{
    const auto theta = make_classifier(6, 8, 6);
    const auto b = random_batch(10, 6, 7);
    CHECK(loss_inv(theta, b, b) == 0.0);

    ad::Graph g;
    const auto kl = inv_term(g, g.constant(Tensor::matrix(1, 2, {0.9, 0.1})), g.constant(Tensor::matrix(1, 2, {0.5, 0.5})));
    CHECK(kl.value().item() == doctest::Approx(0.36806424).epsilon(1e-7));

    for (std::uint64_t s = 0; s < 20; ++s) CHECK(loss_inv(theta, random_batch(8, 6, 100 + s), random_batch(8, 6, 200 + s)) >= 0.0);
    CHECK_THROWS_AS(loss_inv(theta, b, random_batch(9, 6, 8)), ShapeError);
}

TEST_CASE("fairness surrogate per-example values")
{
    CHECK(fair_g(0.5, 1, 0.6, FairVariant::literal) == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(fair_g(0.5, -1, 0.6, FairVariant::signed_gap) == doctest::Approx(-1.2).epsilon(1e-15));
    CHECK(fair_g(0.5, -1, 0.6, FairVariant::literal) == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(fair_g(0.3, 1, 0.0, FairVariant::literal) == 0.0);
    CHECK(fair_g(0.3, -1, 0.0, FairVariant::signed_gap) == 0.0);
    CHECK_THROWS_AS(fair_g(0.0, 1, 0.5, FairVariant::signed_gap), MetricError);
    CHECK_THROWS_AS(fair_g(1.0, 1, 0.5, FairVariant::signed_gap), MetricError);
}

TEST_CASE("fairness loss examples")
{
    ad::Graph g;
    const auto zero_f = g.constant(Tensor::matrix(4, 2, {1, 0, 1, 0, 1, 0, 1, 0}));
    const std::vector<int> z{1, -1, 1, -1};
    CHECK(fair_term(g, zero_f, z, FairVariant::signed_gap, nullptr).value().item() == 0.0);
    CHECK(fair_term(g, zero_f, z, FairVariant::literal, nullptr).value().item() == 0.0);

    const auto two = g.constant(Tensor::matrix(2, 2, {0, 1, 1, 0}));
    CHECK(fair_term(g, two, {1, -1}, FairVariant::signed_gap, nullptr).value().item() == doctest::Approx(1.0).epsilon(1e-15));

    const auto theta = make_classifier(6, 8, 9);
    const auto b = random_batch(10, 6, 10);
    ad::Graph g2;
    const double single = fair_term(g2, g2.constant(classify(theta, b.x)), b.z, FairVariant::signed_gap, nullptr).value().item();
    CHECK(loss_fair(theta, b, b, FairVariant::signed_gap) == doctest::Approx(2.0 * single).epsilon(1e-15));
}

TEST_CASE("signed fairness matches the mean of per-example g")
{
    const auto theta = make_classifier(6, 8, 11);
    const auto b = random_batch(13, 6, 12);
    const auto p = classify(theta, b.x);
    double p1 = 0;
    for (int z : b.z) p1 += z > 0;
    p1 /= 13.0;
    double mean_g = 0, mean_lit = 0;
    for (std::size_t i = 0; i < 13; ++i) {
        mean_g += fair_g(p1, b.z[i], p.at(i, 1), FairVariant::signed_gap) / 13.0;
        mean_lit += fair_g(p1, b.z[i], p.at(i, 1), FairVariant::literal) / 13.0;
    }
    ad::Graph g;
    const auto pv = g.constant(p);
    CHECK(fair_term(g, pv, b.z, FairVariant::signed_gap, nullptr).value().item() == doctest::Approx(std::abs(mean_g)).epsilon(1e-12));
    CHECK(fair_term(g, pv, b.z, FairVariant::literal, nullptr).value().item() == doctest::Approx(mean_lit).epsilon(1e-12));
}

TEST_CASE("single-group batches contribute zero and are counted")
{
    const auto theta = make_classifier(6, 8, 13);
    auto b = random_batch(6, 6, 14);
    for (auto& z : b.z) z = 1;
    LossDiagnostics diag;
    CHECK(loss_fair(theta, b, b, FairVariant::signed_gap, &diag) == 0.0);
    CHECK(diag.single_group_batches == 2);
}

TEST_CASE("constant predictions give exactly zero signed fairness")
{
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        auto theta = make_classifier(6, 8, 16 + trial);
        std::uniform_real_distribution<double> u(-3, 3);
        set_output_bias(theta, u(rng), u(rng));
        const auto b = random_batch(9 + trial, 6, 40 + trial);
        CHECK(loss_fair(theta, b, b, FairVariant::signed_gap) == 0.0);
    }
}

TEST_CASE("total loss composition")
{
    const auto theta = make_classifier(6, 8, 17);
    const auto b = random_batch(10, 6, 18);
    const auto b2 = random_batch(10, 6, 19);
    DualState d;
    CHECK(loss_total(theta, b, b2, d, FairVariant::signed_gap) == loss_cls(theta, b));
    d.lambda1 = 1.0;
    CHECK(loss_total(theta, b, b, d, FairVariant::signed_gap) == doctest::Approx(loss_cls(theta, b)).epsilon(1e-15));
    d.lambda1 = 0.7;
    d.lambda2 = 1.3;
    const double manual = loss_cls(theta, b) + 0.7 * loss_inv(theta, b, b2) + 1.3 * loss_fair(theta, b, b2, FairVariant::signed_gap);
    CHECK(std::abs(loss_total(theta, b, b2, d, FairVariant::signed_gap) - manual) <= 1e-12);
}

TEST_CASE("softmax shift invariance carries to every loss")
{
    auto theta = make_classifier(6, 8, 20);
    const auto b = random_batch(10, 6, 21);
    const auto b2 = random_batch(10, 6, 22);
    const auto p = classify(theta, b.x);
    const double cls = loss_cls(theta, b), inv = loss_inv(theta, b, b2), fair = loss_fair(theta, b, b2, FairVariant::signed_gap);
    auto& bias = theta.params().get(Mlp::bias_name(theta.layers() - 1));
    bias[0] += 2.5;
    bias[1] += 2.5;
    const auto q = classify(theta, b.x);
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    CHECK(std::abs(loss_cls(theta, b) - cls) <= 1e-12);
    CHECK(std::abs(loss_inv(theta, b, b2) - inv) <= 1e-12);
    CHECK(std::abs(loss_fair(theta, b, b2, FairVariant::signed_gap) - fair) <= 1e-12);
}

TEST_CASE("dual update examples")
{
    DualState d;
    d.eta_d = 1.0;
    d.gamma1 = 0.2;
    CHECK(dual_update(d, 0.5, 0.0).lambda1 == doctest::Approx(0.3).epsilon(1e-15));
    d.lambda2 = 0.1;
    d.gamma2 = 0.5;
    CHECK(dual_update(d, 0.0, 0.0).lambda2 == 0.0);
    DualState f;
    f.lambda1 = 0.4;
    f.lambda2 = 0.25;
    const auto same = dual_update(f, f.gamma1, f.gamma2);
    CHECK(same.lambda1 == 0.4);
    CHECK(same.lambda2 == 0.25);
}

TEST_CASE("stage-2 losses match central differences")
{
    auto theta = make_classifier(4, 4, 23);
    // Nonzero biases keep pre-activations off the ReLU kink.
    Rng br(99);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (std::size_t l = 0; l < theta.layers(); ++l) {
        for (auto& v : theta.params().get(Mlp::bias_name(l)).data()) v = u(br);
    }
    const auto b = random_batch(4, 4, 24);
    const auto b2 = random_batch(4, 4, 25);
    DualState d;
    d.lambda1 = 0.7;
    d.lambda2 = 0.9;
    for (auto variant : {FairVariant::signed_gap, FairVariant::literal}) {
        auto loss = [&](ad::Graph& g) { return build_losses(g, theta, Binding::trainable, b, b2, d, variant).total; };
        CHECK(testing::gradcheck_stores({&theta.params()}, loss).max_rel_error < 1e-4);
    }
}

TEST_CASE("inner adaptation fixed points")
{
    auto theta = make_classifier(6, 8, 26);
    set_output_bias(theta, 0, 0);
    // Every input appears once with each label, so the loss is stationary.
    Rng rng(27);
    std::vector<data::Example> sup;
    for (std::uint64_t i = 0; i < 6; ++i) {
        const auto x = sample_normal(rng, 6);
        sup.push_back({x, 1, 0, 0, 2 * i});
        sup.push_back({x, -1, 1, 0, 2 * i + 1});
    }
    MetaHyper hp;
    Rng r1(28);
    CHECK(inner_adapt(theta, sup, DualState{}, nullptr, hp, 5, r1).adapted.params() == theta.params());

    const auto moving = make_classifier(6, 8, 29);
    hp.alpha = 0.0;
    const auto ex = random_examples(8, 6, 30);
    Rng r2(31);
    CHECK(inner_adapt(moving, ex, DualState{}, nullptr, hp, 5, r2).adapted.params() == moving.params());
}

TEST_CASE("degenerate quadratic inner step")
{
    ParamStore p("q");
    p.set("theta", Tensor::scalar(1.0));
    ad::Graph g;
    const auto th = g.param(p.key("theta"), p.get("theta"));
    auto st = OptimizerState::sgd(0.1);
    optimizer_step(st, p, g.backward(ad::mul(th, th)));
    CHECK(p.get("theta").item() == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("meta training contracts")
{
    const auto pool = small_pool(32);
    const auto model = disentangle::DisentangleModel::create(disentangle::Dims{}, disentangle::Architecture{}, 33);
    const auto theta = make_classifier(20, 16, 34);
    MetaHyper hp;
    hp.iterations = 0;
    CHECK(meta_train(theta, pool, model, hp, DualState{}).theta.params() == theta.params());

    hp.iterations = 4;
    hp.n_sup = 8;
    hp.n_qry = 8;
    hp.seed = 35;
    hp.snapshot_every = 2;
    const auto a = meta_train(theta, pool, model, hp, DualState{});
    const auto b = meta_train(theta, pool, model, hp, DualState{});
    CHECK(a.theta.params() == b.theta.params());
    CHECK(a.history.size() == 4);
    CHECK(a.snapshots.size() == 2);
    CHECK(a.snapshots.back().theta.params() == a.theta.params());
    for (const auto& r : a.history) {
        CHECK(r.lambda1 >= 0.0);
        CHECK(r.lambda2 >= 0.0);
    }
    CHECK_FALSE(a.theta.params() == theta.params());
    CHECK_THROWS_AS(meta_train(theta, std::vector<data::DomainDataset>{}, model, hp, DualState{}), DataError);
}

TEST_CASE("single-task meta training with a frozen inner loop is plain gradient descent")
{
    const auto pool = small_pool(36);
    const auto model = disentangle::DisentangleModel::create(disentangle::Dims{}, disentangle::Architecture{}, 37);
    auto theta = make_classifier(20, 16, 38);
    MetaHyper hp;
    hp.alpha = 0.0;
    hp.tasks_per_batch = 1;
    hp.iterations = 20;
    hp.seed = 39;
    hp.snapshot_every = 1;
    const auto res = meta_train(theta, pool, model, hp, frozen_duals());
    REQUIRE(res.snapshots.size() == 20);

    auto st = OptimizerState::sgd(hp.eta_p);
    double worst = 0;
    for (long it = 0; it < hp.iterations; ++it) {
        const auto task = data::sample_tasks(pool, 1, hp.n_sup, hp.n_qry, hp.sampling, task_seed(hp.seed, it)).front();
        const auto q = data::make_batch(task.query);
        ad::Graph g;
        const auto probs = ad::clamp(theta.forward(g, g.constant(q.x), Binding::trainable), 1e-7, 1 - 1e-7);
        Tensor onehot(Shape{q.size(), 2}, 0.0);
        for (std::size_t i = 0; i < q.size(); ++i) onehot.at(i, q.y[i]) = 1.0;
        const auto ce = ad::scale(ad::sum(ad::mul(g.constant(onehot), ad::log(probs))), -1.0 / double(q.size()));
        optimizer_step(st, theta.params(), g.backward(ce));
        for (const auto& [name, t] : theta.params()) {
            const auto& u = res.snapshots[it].theta.params().get(name);
            for (std::size_t i = 0; i < t.numel(); ++i) worst = std::max(worst, std::abs(t[i] - u[i]));
        }
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("downstream adaptation contracts")
{
    const auto theta = make_classifier(20, 16, 40);
    const auto pool = small_pool(41, 40);
    const auto& shots = pool[0].examples;
    MetaHyper hp;
    hp.downstream_steps = 0;
    CHECK(adapt_downstream(theta, shots, nullptr, hp, DualState{}).params() == theta.params());
    hp.downstream_steps = 5;
    hp.seed = 42;
    const auto model = disentangle::DisentangleModel::create(disentangle::Dims{}, disentangle::Architecture{}, 43);
    const auto a = adapt_downstream(theta, shots, &model, hp, DualState{});
    const auto b = adapt_downstream(theta, shots, &model, hp, DualState{});
    CHECK(a.params() == b.params());
    CHECK_FALSE(a.params() == theta.params());
    CHECK_THROWS_AS(adapt_downstream(theta, std::vector<data::Example>{}, nullptr, hp, DualState{}), DataError);
}

TEST_CASE("ERM contracts")
{
    const auto theta = make_classifier(2, 16, 44);
    ErmHyper hp;
    hp.steps = 0;
    const auto pool = small_pool(45, 40);

    // Linearly separable: y = 1 iff x0 + x1 > 0, with a margin.
    Rng rng(46);
    data::DomainDataset toy{0, "toy", 2, {}, {}};
    std::uniform_real_distribution<double> u(-1, 1);
    while (toy.examples.size() < 400) {
        const double a = u(rng), b = u(rng);
        if (std::abs(a + b) < 0.2) continue;
        const int y = a + b > 0;
        toy.examples.push_back({{a, b}, toy.examples.size() % 2 ? 1 : -1, y, 0, toy.examples.size()});
    }
    const std::vector<data::DomainDataset> toys{toy};
    CHECK(train_erm(theta, toys, hp, false, DualState{}).theta.params() == theta.params());

    hp.steps = 500;
    hp.lr = 1e-2;
    hp.seed = 47;
    const auto fit = train_erm(theta, toys, hp, false, DualState{});
    const auto p = classify(fit.theta, data::make_batch(toy.examples).x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < toy.size(); ++i) correct += (p.at(i, 1) >= 0.5) == (toy.examples[i].y == 1);
    CHECK(static_cast<double>(correct) / toy.size() >= 0.95);

    hp.steps = 60;
    const auto off = train_erm(theta, toys, hp, false, DualState{});
    const auto on = train_erm(theta, toys, hp, true, frozen_duals());
    CHECK(off.theta.params() == on.theta.params());
    for (const auto& r : on.history) CHECK(r.lambda2 == 0.0);
}

TEST_CASE("ablations")
{
    const auto pool = small_pool(48);
    const auto model = disentangle::DisentangleModel::create(disentangle::Dims{}, disentangle::Architecture{}, 49);
    const auto theta = make_classifier(20, 16, 50);
    MetaHyper hp;
    hp.iterations = 5;
    hp.seed = 51;
    const auto abs2 = run_ablation(AblationKind::no_augment, theta, pool, model, hp, DualState{});
    REQUIRE(abs2.history.size() == 5);
    for (const auto& r : abs2.history) CHECK(r.inv == 0.0);
    const auto abs1 = run_ablation(AblationKind::no_inner_loop, theta, pool, model, hp, DualState{});
    REQUIRE(abs1.history.size() == 5);
    for (const auto& r : abs1.history) CHECK(r.inner_shift == 0.0);
    const auto full = meta_train(theta, pool, model, hp, DualState{});
    CHECK(full.history.front().inner_shift > 0.0);
}

TEST_CASE("random dual updates stay nonnegative")
{
    Rng rng(52);
    std::uniform_real_distribution<double> u(0, 2), l(-5, 5);
    DualState d;
    for (int i = 0; i < 2000; ++i) {
        d.eta_d = u(rng) + 1e-3;
        d = dual_update(d, l(rng), l(rng));
        CHECK(d.lambda1 >= 0.0);
        CHECK(d.lambda2 >= 0.0);
    }
}
