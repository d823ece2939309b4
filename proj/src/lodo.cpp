#include "feed/lodo.hpp"

#include "feed/error.hpp"
#include "feed/rng.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace feed::harness {

namespace {

constexpr std::uint64_t kDataTag = 0x64617461ULL;
constexpr std::uint64_t kFewshotTag = 0x66657773ULL;
constexpr std::uint64_t kFoldTag = 0x666f6c64ULL;
constexpr std::uint64_t kStage1Tag = 0x73746731ULL;
constexpr std::uint64_t kStage2Tag = 0x73746732ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kSelectTag = 0x73656c63ULL;
constexpr std::uint64_t kAdaptTag = 0x61647074ULL;

report::HistoryEntry stage1_entry(const std::string& fold, const disentangle::Stage1Record& r)
{
    return {fold,
            "stage1",
            r.step,
            {{"recon", r.recon.total()},
             {"recon_x", r.recon.x},
             {"recon_md", r.recon.md},
             {"recon_c", r.recon.c},
             {"recon_a", r.recon.a},
             {"recon_s_in", r.recon.s_in},
             {"recon_s_out", r.recon.s_out},
             {"recon_mf", r.recon.mf},
             {"sensitive", r.sensitive},
             {"d_objective", r.d_objective},
             {"g_objective", r.g_objective},
             {"monitor_recon", r.monitor_recon.total()},
             {"monitor_sensitive", r.monitor_sensitive}}};
}

report::HistoryEntry meta_entry(const std::string& fold, const std::string& phase, const meta::MetaRecord& r)
{
    return {fold,
            phase,
            r.step,
            {{"cls", r.cls},
             {"inv", r.inv},
             {"fair", r.fair},
             {"total", r.total},
             {"lambda1", r.lambda1},
             {"lambda2", r.lambda2}}};
}

report::HistoryEntry erm_entry(const std::string& fold, const std::string& phase, const meta::ErmRecord& r)
{
    return {fold, phase, r.step, {{"cls", r.cls}, {"fair", r.fair}, {"lambda1", 0.0}, {"lambda2", r.lambda2}}};
}

} // namespace

std::vector<data::DomainDataset> load_domains(const ExperimentConfig& config)
{
    std::vector<data::DomainDataset> domains;
    if (config.data.kind == SourceKind::synthetic) {
        domains = data::generate_synthetic(config.data.synth, config.data.per_domain_count,
                                           derive_seed(config.seed, kDataTag));
    } else {
        const auto schema = data::CsvSchema::parse(config.data.schema);
        if (!schema.domain) throw SchemaError("domain generalization needs a domain column in the schema");
        domains = data::split_by_domain(data::load_csv(config.data.csv_path, schema));
    }
    return domains;
}

std::uint64_t fewshot_seed(std::uint64_t seed, int domain)
{
    return derive_seed(seed, kFewshotTag, static_cast<std::uint64_t>(domain));
}

FewshotSplit split_fewshot(const data::DomainDataset& domain, std::size_t k, std::uint64_t seed)
{
    const std::size_t n = domain.size();
    if (k == 0 || k >= n) {
        throw DataError("domain " + domain.name + " has " + std::to_string(n) + " examples, too few for a " +
                        std::to_string(k) + "-example few-shot set and a non-empty evaluation set");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    FewshotSplit out;
    for (std::size_t i = 0; i < n; ++i) {
        (i < k ? out.fewshot : out.eval).push_back(domain.examples[order[i]]);
    }
    return out;
}

void check_training_pool(std::span<const data::DomainDataset> pool, const Holdout& holdout)
{
    for (const auto& ds : pool) {
        if (holdout.domains.count(ds.domain)) {
            throw DataError("held-out domain " + ds.name + " reached a training entry point");
        }
        for (const auto& ex : ds.examples) {
            if ((ex.domain && holdout.domains.count(*ex.domain)) || holdout.eval_ids.count(ex.id)) {
                throw DataError("held-out example " + std::to_string(ex.id) + " reached a training entry point");
            }
        }
    }
}

void check_fewshot(std::span<const data::Example> fewshot, const Holdout& holdout)
{
    for (const auto& ex : fewshot) {
        if (holdout.eval_ids.count(ex.id)) {
            throw DataError("evaluation example " + std::to_string(ex.id) + " reached few-shot adaptation");
        }
    }
}

Fold make_fold(std::span<const data::DomainDataset> domains, std::size_t held_out, const ExperimentConfig& config)
{
    if (domains.size() < 3) {
        throw DataError("leave-one-domain-out needs at least 3 domains, found " + std::to_string(domains.size()));
    }
    if (held_out >= domains.size()) throw DataError("held-out domain index out of range");
    std::vector<data::DomainDataset> raw_train;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        if (i != held_out) raw_train.push_back(domains[i]);
    }
    std::vector<data::DomainDataset> all(raw_train);
    all.push_back(domains[held_out]);
    auto norm = data::normalize_features(raw_train, all);

    Fold fold;
    fold.held_out = held_out;
    fold.target = std::move(norm.datasets.back());
    norm.datasets.pop_back();
    fold.train = std::move(norm.datasets);
    fold.stats = std::move(norm.stats);
    fold.split = split_fewshot(fold.target, config.fewshot, fewshot_seed(config.seed, fold.target.domain));
    fold.holdout.domains.insert(fold.target.domain);
    for (const auto& ex : fold.split.eval) fold.holdout.eval_ids.insert(ex.id);
    return fold;
}

disentangle::Dims model_dims(const ExperimentConfig& config, std::size_t input_dim)
{
    auto dims = config.latent;
    dims.d = input_dim;
    return dims;
}

disentangle::Stage1Result train_stage1(const ExperimentConfig& config, std::span<const data::DomainDataset> train,
                                       const Holdout& holdout, std::uint64_t seed)
{
    check_training_pool(train, holdout);
    if (train.empty()) throw DataError("no training domains");
    auto hp = config.stage1;
    hp.seed = seed;
    auto model = disentangle::DisentangleModel::create(model_dims(config, train.front().dim), config.arch,
                                                       derive_seed(seed, kInitTag));
    return disentangle::train_disentangler(std::move(model), train, hp);
}

Stage2Output train_stage2(const ExperimentConfig& config, std::span<const data::DomainDataset> train,
                          const disentangle::DisentangleModel* model, const Holdout& holdout, std::uint64_t seed,
                          const std::string& fold, bool keep_snapshots)
{
    check_training_pool(train, holdout);
    if (train.empty()) throw DataError("no training domains");
    if (uses_transform(config.method) && model == nullptr) {
        throw ConfigError(std::string("method ") + method_name(config.method) + " needs a trained disentangler");
    }
    const auto theta0 = meta::make_classifier(train.front().dim, config.classifier_hidden, derive_seed(seed, kInitTag));
    const std::string phase = method_name(config.method);
    Stage2Output out;
    if (is_meta_method(config.method)) {
        auto hp = config.meta;
        hp.seed = seed;
        hp.snapshot_every = keep_snapshots ? config.select_every : 0;
        const disentangle::DisentangleModel placeholder;
        const auto& m = model ? *model : placeholder;
        meta::MetaResult res;
        if (config.method == Method::feed) {
            res = meta::meta_train(theta0, train, m, hp, config.duals);
        } else {
            const auto kind =
                config.method == Method::abs1 ? meta::AblationKind::no_inner_loop : meta::AblationKind::no_augment;
            res = meta::run_ablation(kind, theta0, train, m, hp, config.duals);
        }
        for (const auto& r : res.history) out.history.push_back(meta_entry(fold, phase, r));
        out.theta = std::move(res.theta);
        out.duals = res.duals;
        out.snapshots = std::move(res.snapshots);
        if (keep_snapshots && (out.snapshots.empty() || out.snapshots.back().iteration != hp.iterations)) {
            out.snapshots.push_back({hp.iterations, out.theta, out.duals});
        }
    } else {
        auto hp = config.erm;
        hp.seed = seed;
        hp.variant = config.meta.variant;
        hp.snapshot_every = keep_snapshots ? config.select_every : 0;
        auto res = meta::train_erm(theta0, train, hp, config.method == Method::erm_fc, config.duals);
        for (const auto& r : res.history) out.history.push_back(erm_entry(fold, phase, r));
        out.theta = std::move(res.theta);
        out.duals = res.duals;
        out.snapshots = std::move(res.snapshots);
        if (keep_snapshots && (out.snapshots.empty() || out.snapshots.back().iteration != hp.steps)) {
            out.snapshots.push_back({hp.steps, out.theta, out.duals});
        }
    }
    return out;
}

Mlp final_predictor(const ExperimentConfig& config, const Mlp& theta, const meta::DualState& duals,
                    std::span<const data::Example> fewshot, const disentangle::DisentangleModel* model,
                    const Holdout& holdout, std::uint64_t seed)
{
    if (!is_meta_method(config.method)) return theta;
    check_fewshot(fewshot, holdout);
    auto hp = config.meta;
    hp.seed = seed;
    return meta::adapt_downstream(theta, fewshot, uses_transform(config.method) ? model : nullptr, hp, duals);
}

namespace {

// Leave-one-training-domain-out validation accuracy per snapshot; returns the
// iteration with the best average (earliest on ties), or -1 for the final iterate.
long select_iteration(const ExperimentConfig& config, const Fold& fold, const disentangle::DisentangleModel* model,
                      std::uint64_t fold_seed)
{
    if (!config.select_enabled || fold.train.size() < 2) return -1;
    std::vector<double> score;
    std::vector<long> iterations;
    for (std::size_t v = 0; v < fold.train.size(); ++v) {
        std::vector<data::DomainDataset> sub;
        for (std::size_t i = 0; i < fold.train.size(); ++i) {
            if (i != v) sub.push_back(fold.train[i]);
        }
        const auto& val = fold.train[v];
        const auto vseed = derive_seed(fold_seed, kSelectTag, static_cast<std::uint64_t>(v));
        const auto split = split_fewshot(val, std::min(config.fewshot, val.size() / 2), fewshot_seed(vseed, val.domain));
        Holdout h = fold.holdout;
        h.domains.insert(val.domain);
        for (const auto& ex : split.eval) h.eval_ids.insert(ex.id);

        const auto out = train_stage2(config, sub, model, h, derive_seed(vseed, kStage2Tag), val.name, true);
        if (score.empty()) {
            score.assign(out.snapshots.size(), 0.0);
            for (const auto& s : out.snapshots) iterations.push_back(s.iteration);
        }
        for (std::size_t k = 0; k < out.snapshots.size(); ++k) {
            const auto& s = out.snapshots[k];
            const auto pred =
                final_predictor(config, s.theta, s.duals, split.fewshot, model, h, derive_seed(vseed, kAdaptTag));
            score[k] += fair::evaluate_model(pred, split.eval, val.name, config.threshold).accuracy;
        }
    }
    const auto best = std::max_element(score.begin(), score.end()) - score.begin();
    return iterations[static_cast<std::size_t>(best)];
}

} // namespace

const disentangle::Stage1Result* Stage1Cache::find(const std::string& key) const
{
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

const disentangle::Stage1Result& Stage1Cache::insert(const std::string& key, disentangle::Stage1Result result)
{
    return entries_.insert_or_assign(key, std::move(result)).first->second;
}

std::string stage1_key(const ExperimentConfig& config, std::size_t held_out)
{
    std::istringstream lines(config.serialize());
    std::string key = "seed=" + std::to_string(config.seed) + ";held_out=" + std::to_string(held_out);
    for (std::string line; std::getline(lines, line);) {
        if (line.rfind("data.", 0) == 0 || line.rfind("synth.", 0) == 0 || line.rfind("stage1.", 0) == 0) {
            key += ";" + line;
        }
    }
    return key;
}

LodoResult run_lodo(const ExperimentConfig& config, Stage1Cache* cache)
{
    config.validate();
    const auto domains = load_domains(config);
    if (domains.size() < 3) {
        throw DataError("leave-one-domain-out needs at least 3 domains, found " + std::to_string(domains.size()));
    }

    LodoResult result;
    result.method = method_name(config.method);
    result.seed = config.seed;
    std::vector<report::ResultRow> rows;
    for (std::size_t e = 0; e < domains.size(); ++e) {
        const auto fold = make_fold(domains, e, config);
        const auto fold_seed = derive_seed(config.seed, kFoldTag, static_cast<std::uint64_t>(e));
        const std::string& name = fold.target.name;

        std::optional<disentangle::DisentangleModel> model;
        if (uses_transform(config.method)) {
            const auto key = stage1_key(config, e);
            const disentangle::Stage1Result* s1 = cache ? cache->find(key) : nullptr;
            std::optional<disentangle::Stage1Result> local;
            if (!s1) {
                auto trained = train_stage1(config, fold.train, fold.holdout, derive_seed(fold_seed, kStage1Tag));
                s1 = cache ? &cache->insert(key, std::move(trained)) : &local.emplace(std::move(trained));
            }
            for (const auto& r : s1->history) result.history.push_back(stage1_entry(name, r));
            model = s1->model;
        }
        const auto* mp = model ? &*model : nullptr;

        const long selected = select_iteration(config, fold, mp, fold_seed);
        auto out = train_stage2(config, fold.train, mp, fold.holdout, derive_seed(fold_seed, kStage2Tag), name,
                                selected >= 0);
        result.history.insert(result.history.end(), out.history.begin(), out.history.end());

        Mlp theta = out.theta;
        meta::DualState duals = out.duals;
        long chosen = is_meta_method(config.method) ? config.meta.iterations : config.erm.steps;
        if (selected >= 0) {
            const auto it = std::find_if(out.snapshots.begin(), out.snapshots.end(),
                                         [&](const meta::Snapshot& s) { return s.iteration == selected; });
            if (it == out.snapshots.end()) throw DataError("selected iterate is missing from the snapshot list");
            theta = it->theta;
            duals = it->duals;
            chosen = selected;
        }
        const auto pred = final_predictor(config, theta, duals, fold.split.fewshot, mp, fold.holdout,
                                          derive_seed(fold_seed, kAdaptTag));
        auto rep = fair::evaluate_model(pred, fold.split.eval, name, config.threshold);
        rows.push_back(report::make_row(result.method, rep, config.seed));
        result.folds.push_back({std::move(rep), chosen});
    }
    result.rows = rows;
    result.rows.push_back(report::average_row(result.method, rows, config.seed));
    return result;
}

void write_lodo(const LodoResult& result, const std::filesystem::path& dir)
{
    report::write_text(dir / "results.csv", report::to_csv(result.rows));
    report::write_text(dir / "results.jsonl", report::to_jsonl(result.rows));
    report::write_text(dir / "history.jsonl", report::history_jsonl(result.history));
}

} // namespace feed::harness
