#include "feed/cli.hpp"

#include "feed/checkpoint.hpp"
#include "feed/error.hpp"
#include "feed/lodo.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

namespace feed::harness {

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* sub, Common& c, bool config_required)
{
    auto* opt = sub->add_option("--config", c.config_path, "experiment configuration file");
    if (config_required) opt->required();
    sub->add_option("--set", c.sets, "override a configuration key (key=value), repeatable");
    sub->add_option("--seed", c.seed, "root seed");
    sub->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) cfg.seed = *c.seed;
    apply_environment(cfg);
    if (!c.out.empty()) cfg.out_dir = c.out;
    cfg.validate();
    return cfg;
}

void check_fingerprint(const ckpt::Checkpoint& ck, const ExperimentConfig& cfg, const std::string& what,
                       std::ostream& err)
{
    const auto fp = ck.fingerprint();
    if (fp && *fp != cfg.fingerprint()) {
        err << "warning: " << what << " was written under a different configuration\n";
    }
}

// Training domains (all but held_out, if given) and their statistics.
struct TrainingView {
    std::vector<data::DomainDataset> train;
    data::FeatureStats stats;
    Holdout holdout;
};

TrainingView training_view(const ExperimentConfig& cfg, std::optional<int> held_out,
                           const std::optional<data::FeatureStats>& stats)
{
    const auto domains = load_domains(cfg);
    TrainingView v;
    std::vector<data::DomainDataset> raw;
    for (const auto& d : domains) {
        if (held_out && d.domain == *held_out) continue;
        raw.push_back(d);
    }
    if (held_out && raw.size() == domains.size()) {
        throw DataError("held-out domain " + std::to_string(*held_out) + " does not exist");
    }
    if (held_out) v.holdout.domains.insert(*held_out);
    if (stats) {
        v.stats = *stats;
        for (auto& d : raw) v.train.push_back(data::apply_feature_stats(v.stats, d));
    } else {
        auto norm = data::normalize_features(raw, raw);
        v.train = std::move(norm.datasets);
        v.stats = std::move(norm.stats);
    }
    return v;
}

const data::DomainDataset& find_domain(const std::vector<data::DomainDataset>& domains, int id)
{
    for (const auto& d : domains) {
        if (d.domain == id) return d;
    }
    throw DataError("domain " + std::to_string(id) + " does not exist");
}

std::optional<disentangle::DisentangleModel> load_model(const std::string& path)
{
    if (path.empty()) return std::nullopt;
    return ckpt::get_model(ckpt::load(path));
}

int cmd_synth(const ExperimentConfig& cfg, std::ostream& out)
{
    if (cfg.data.kind != SourceKind::synthetic) throw ConfigError("synth requires data.source = synthetic");
    const auto domains = load_domains(cfg);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
    const auto path = cfg.out_dir / "synthetic.csv";
    data::write_csv(path, domains);
    data::write_truth_csv(cfg.out_dir / "synthetic_truth.csv", domains);
    out << path.string() << "\n";
    return 0;
}

int cmd_train_disentangler(const ExperimentConfig& cfg, std::optional<int> held_out, std::ostream& out)
{
    const auto view = training_view(cfg, held_out, std::nullopt);
    auto res = train_stage1(cfg, view.train, view.holdout, cfg.seed);
    ckpt::Checkpoint ck;
    ckpt::put_model(ck, res.model);
    ckpt::put_stats(ck, view.stats);
    ck.put_fingerprint(cfg.fingerprint());
    const auto path = cfg.out_dir / "stage1.ckpt";
    ckpt::save(path, ck);

    std::vector<report::HistoryEntry> hist;
    for (const auto& r : res.history) {
        hist.push_back({"all",
                        "stage1",
                        r.step,
                        {{"recon", r.recon.total()},
                         {"sensitive", r.sensitive},
                         {"d_objective", r.d_objective},
                         {"g_objective", r.g_objective},
                         {"monitor_recon", r.monitor_recon.total()},
                         {"monitor_sensitive", r.monitor_sensitive}}});
    }
    report::write_text(cfg.out_dir / "stage1_history.jsonl", report::history_jsonl(hist));
    out << path.string() << "\n";
    return 0;
}

int cmd_meta_train(const ExperimentConfig& cfg, std::optional<int> held_out, const std::string& stage1,
                   std::ostream& out, std::ostream& err)
{
    std::optional<disentangle::DisentangleModel> model;
    std::optional<data::FeatureStats> stats;
    if (!stage1.empty()) {
        const auto ck = ckpt::load(stage1);
        check_fingerprint(ck, cfg, stage1, err);
        model = ckpt::get_model(ck);
        stats = ckpt::get_stats(ck);
    } else if (uses_transform(cfg.method)) {
        throw ConfigError(std::string("method ") + method_name(cfg.method) + " needs --stage1");
    }
    const auto view = training_view(cfg, held_out, stats);
    const auto res = train_stage2(cfg, view.train, model ? &*model : nullptr, view.holdout, cfg.seed, "all", false);

    ckpt::Checkpoint ck;
    ckpt::put_classifier(ck, res.theta);
    ckpt::put_duals(ck, res.duals);
    ckpt::put_stats(ck, view.stats);
    ck.put_fingerprint(cfg.fingerprint());
    const auto path = cfg.out_dir / "classifier.ckpt";
    ckpt::save(path, ck);
    report::write_text(cfg.out_dir / "stage2_history.jsonl", report::history_jsonl(res.history));
    out << path.string() << "\n";
    return 0;
}

int cmd_adapt(const ExperimentConfig& cfg, const std::string& classifier, const std::string& stage1, int domain,
              std::ostream& out, std::ostream& err)
{
    const auto ck = ckpt::load(classifier);
    check_fingerprint(ck, cfg, classifier, err);
    const auto theta = ckpt::get_classifier(ck);
    const auto duals = ckpt::get_duals(ck).value_or(cfg.duals);
    const auto stats = ckpt::get_stats(ck);
    if (!stats) throw CheckpointError(classifier + " carries no normalization statistics");
    const auto model = load_model(stage1);
    if (uses_transform(cfg.method) && !model) {
        throw ConfigError(std::string("method ") + method_name(cfg.method) + " needs --stage1");
    }

    const auto domains = load_domains(cfg);
    const auto target = data::apply_feature_stats(*stats, find_domain(domains, domain));
    const auto split = split_fewshot(target, cfg.fewshot, fewshot_seed(cfg.seed, target.domain));
    Holdout h;
    for (const auto& ex : split.eval) h.eval_ids.insert(ex.id);
    const auto adapted = final_predictor(cfg, theta, duals, split.fewshot, model ? &*model : nullptr, h, cfg.seed);

    ckpt::Checkpoint outck;
    ckpt::put_classifier(outck, adapted);
    ckpt::put_duals(outck, duals);
    ckpt::put_stats(outck, *stats);
    outck.put_fingerprint(cfg.fingerprint());
    const auto path = cfg.out_dir / "adapted.ckpt";
    ckpt::save(path, outck);
    out << path.string() << "\n";
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& classifier, std::optional<int> domain,
                 const std::string& split_mode, std::ostream& out, std::ostream& err)
{
    const auto ck = ckpt::load(classifier);
    check_fingerprint(ck, cfg, classifier, err);
    const auto theta = ckpt::get_classifier(ck);
    const auto stats = ckpt::get_stats(ck);
    if (!stats) throw CheckpointError(classifier + " carries no normalization statistics");

    std::vector<report::ResultRow> rows;
    for (const auto& raw : load_domains(cfg)) {
        if (domain && raw.domain != *domain) continue;
        const auto ds = data::apply_feature_stats(*stats, raw);
        fair::FairReport rep;
        if (split_mode == "eval") {
            const auto split = split_fewshot(ds, cfg.fewshot, fewshot_seed(cfg.seed, ds.domain));
            rep = fair::evaluate_model(theta, split.eval, ds.name, cfg.threshold);
        } else {
            rep = fair::evaluate_model(theta, ds, cfg.threshold);
        }
        rows.push_back(report::make_row(method_name(cfg.method), rep, cfg.seed));
    }
    if (rows.empty()) throw DataError("domain " + std::to_string(domain.value_or(-1)) + " does not exist");
    if (rows.size() > 1) {
        const std::vector<report::ResultRow> per(rows);
        rows.push_back(report::average_row(method_name(cfg.method), per, cfg.seed));
    }
    const auto csv = report::to_csv(rows);
    report::write_text(cfg.out_dir / "evaluation.csv", csv);
    report::write_text(cfg.out_dir / "evaluation.jsonl", report::to_jsonl(rows));
    out << csv;
    return 0;
}

int cmd_lodo(const ExperimentConfig& cfg, std::ostream& out)
{
    const auto res = run_lodo(cfg);
    write_lodo(res, cfg.out_dir);
    out << report::to_csv(res.rows);
    return 0;
}

int cmd_ablate(ExperimentConfig cfg, const std::string& kind, std::ostream& out)
{
    std::vector<Method> methods;
    if (kind == "abs1" || kind == "both") methods.push_back(Method::abs1);
    if (kind == "abs2" || kind == "both") methods.push_back(Method::abs2);
    const auto root = cfg.out_dir;
    for (auto m : methods) {
        cfg.method = m;
        const auto res = run_lodo(cfg);
        write_lodo(res, root / method_name(m));
        out << report::to_csv(res.rows);
    }
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Fairness-aware domain generalization toolkit", "feed"};
    app.require_subcommand(1);

    Common c_synth, c_s1, c_meta, c_adapt, c_eval, c_lodo, c_abl;
    std::optional<int> s1_held, meta_held, eval_domain;
    int adapt_domain = 0;
    std::string meta_stage1, adapt_classifier, adapt_stage1, eval_classifier, eval_split = "eval", abl_kind = "both";

    auto* synth = app.add_subcommand("synth", "write the synthetic benchmark as CSV");
    add_common(synth, c_synth, false);

    auto* s1 = app.add_subcommand("train-disentangler", "train the stage-1 disentanglement model");
    add_common(s1, c_s1, true);
    s1->add_option("--held-out", s1_held, "domain id excluded from training");

    auto* mt = app.add_subcommand("meta-train", "train the stage-2 classifier of the configured method");
    add_common(mt, c_meta, true);
    mt->add_option("--held-out", meta_held, "domain id excluded from training");
    mt->add_option("--stage1", meta_stage1, "stage-1 checkpoint");

    auto* ad = app.add_subcommand("adapt", "few-shot adaptation to one domain");
    add_common(ad, c_adapt, true);
    ad->add_option("--classifier", adapt_classifier, "classifier checkpoint")->required();
    ad->add_option("--stage1", adapt_stage1, "stage-1 checkpoint");
    ad->add_option("--domain", adapt_domain, "target domain id")->required();

    auto* ev = app.add_subcommand("evaluate", "accuracy and fairness metrics of a classifier");
    add_common(ev, c_eval, true);
    ev->add_option("--classifier", eval_classifier, "classifier checkpoint")->required();
    ev->add_option("--domain", eval_domain, "domain id (default: every domain)");
    ev->add_option("--split", eval_split, "eval: examples outside the few-shot set; all: every example")
        ->check(CLI::IsMember({"eval", "all"}));

    auto* lo = app.add_subcommand("lodo", "leave-one-domain-out experiment");
    add_common(lo, c_lodo, true);

    auto* ab = app.add_subcommand("ablate", "leave-one-domain-out runs of the ablations");
    add_common(ab, c_abl, true);
    ab->add_option("--kind", abl_kind, "abs1, abs2 or both")->check(CLI::IsMember({"abs1", "abs2", "both"}));

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(resolve(c_synth), out);
        if (s1->parsed()) return cmd_train_disentangler(resolve(c_s1), s1_held, out);
        if (mt->parsed()) return cmd_meta_train(resolve(c_meta), meta_held, meta_stage1, out, err);
        if (ad->parsed()) return cmd_adapt(resolve(c_adapt), adapt_classifier, adapt_stage1, adapt_domain, out, err);
        if (ev->parsed()) return cmd_evaluate(resolve(c_eval), eval_classifier, eval_domain, eval_split, out, err);
        if (lo->parsed()) return cmd_lodo(resolve(c_lodo), out);
        if (ab->parsed()) return cmd_ablate(resolve(c_abl), abl_kind, out);
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

int cli_main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

} // namespace feed::harness
