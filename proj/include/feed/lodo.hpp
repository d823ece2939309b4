#pragma once

#include "feed/config.hpp"
#include "feed/fairmetrics.hpp"
#include "feed/report.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

// Leave-one-domain-out evaluation and the pieces the CLI reuses.
namespace feed::harness {

std::vector<data::DomainDataset> load_domains(const ExperimentConfig& config);

struct FewshotSplit {
    std::vector<data::Example> fewshot;
    std::vector<data::Example> eval;
};

// Seeded shuffle of the domain; the first k examples form the few-shot set.
FewshotSplit split_fewshot(const data::DomainDataset& domain, std::size_t k, std::uint64_t seed);
std::uint64_t fewshot_seed(std::uint64_t seed, int domain);

// Examples that must never reach a training entry point.
struct Holdout {
    std::set<int> domains;
    std::set<std::uint64_t> eval_ids;
};

void check_training_pool(std::span<const data::DomainDataset> pool, const Holdout& holdout);
void check_fewshot(std::span<const data::Example> fewshot, const Holdout& holdout);

struct Fold {
    std::size_t held_out = 0;
    std::vector<data::DomainDataset> train; // normalized with train statistics
    data::DomainDataset target;             // normalized with the same statistics
    data::FeatureStats stats;
    FewshotSplit split;
    Holdout holdout;
};

Fold make_fold(std::span<const data::DomainDataset> domains, std::size_t held_out, const ExperimentConfig& config);

disentangle::Dims model_dims(const ExperimentConfig& config, std::size_t input_dim);

disentangle::Stage1Result train_stage1(const ExperimentConfig& config, std::span<const data::DomainDataset> train,
                                       const Holdout& holdout, std::uint64_t seed);

struct Stage2Output {
    Mlp theta;
    meta::DualState duals;
    std::vector<meta::Snapshot> snapshots; // ends with the final iterate when requested
    std::vector<report::HistoryEntry> history;
};

// Stage 2 of the configured method. model is required for methods that use
// the transformation model.
Stage2Output train_stage2(const ExperimentConfig& config, std::span<const data::DomainDataset> train,
                          const disentangle::DisentangleModel* model, const Holdout& holdout, std::uint64_t seed,
                          const std::string& fold, bool keep_snapshots);

// Downstream predictor: few-shot adaptation for meta methods, theta itself otherwise.
Mlp final_predictor(const ExperimentConfig& config, const Mlp& theta, const meta::DualState& duals,
                    std::span<const data::Example> fewshot, const disentangle::DisentangleModel* model,
                    const Holdout& holdout, std::uint64_t seed);

struct FoldOutcome {
    fair::FairReport report;
    long selected_iteration = 0;
};

struct LodoResult {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<FoldOutcome> folds;
    std::vector<report::ResultRow> rows; // one per domain, then the average
    std::vector<report::HistoryEntry> history;
};

// Trained stage-1 models keyed by the settings that determine them, so runs
// that differ only in stage 2 (e.g. feed and abs1) train each fold once.
class Stage1Cache {
public:
    const disentangle::Stage1Result* find(const std::string& key) const;
    const disentangle::Stage1Result& insert(const std::string& key, disentangle::Stage1Result result);
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::string, disentangle::Stage1Result> entries_;
};

std::string stage1_key(const ExperimentConfig& config, std::size_t held_out);

LodoResult run_lodo(const ExperimentConfig& config, Stage1Cache* cache = nullptr);

// results.csv, results.jsonl and history.jsonl under dir.
void write_lodo(const LodoResult& result, const std::filesystem::path& dir);

} // namespace feed::harness
