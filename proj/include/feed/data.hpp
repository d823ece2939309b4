#pragma once

#include "feed/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace feed::data {

struct Example {
    std::vector<double> x;
    int z = 1; // sensitive label, -1 or +1
    int y = 0; // class label, 0 or 1
    std::optional<int> domain;
    // Record identity, unique within a loaded or generated collection.
    std::uint64_t id = 0;

    friend bool operator==(const Example&, const Example&) = default;
};

// Generative latents of a synthetic example; oracle use only.
struct GroundTruth {
    std::vector<double> c;
    std::vector<double> s;
    std::vector<double> a;
    double logit = 0.0; // w . c, before label noise
};

struct DomainDataset {
    int domain = 0;
    std::string name;
    std::size_t dim = 0;
    std::vector<Example> examples;
    std::vector<GroundTruth> truth; // empty unless synthetic

    std::size_t size() const noexcept { return examples.size(); }
    bool single_group() const;
    void validate() const;
};

struct Task {
    std::vector<Example> support;
    std::vector<Example> query;
};

struct SynthSpec {
    std::size_t content_dim = 8;
    std::size_t style_dim = 4;
    std::size_t sensitive_dim = 4;
    std::size_t feature_dim = 20;
    // One entry per domain; size() is the domain count.
    std::vector<double> rho = {0.9, 0.7, 0.0};
    // Empty means the default ladder: domain e has every style coordinate at
    // style_shift * (e - (n - 1) / 2).
    std::vector<std::vector<double>> style_means;
    double style_shift = 2.0;
    std::uint64_t mixing_seed = 2024;
    double label_noise = 0.5;   // sigma of the label noise
    double feature_noise = 0.1; // stddev of additive noise on x
    double sensitive_shift = 2.0; // scale of the planted sensitive mean

    std::size_t domains() const noexcept { return rho.size(); }
    std::size_t latent_dim() const noexcept { return content_dim + style_dim + sensitive_dim; }
    void validate() const;
    std::vector<double> style_mean(std::size_t domain) const;
};

// Fixed pieces of the generative process shared by every domain.
struct SynthWorld {
    std::vector<double> w;         // content -> label direction
    std::vector<double> mu_a;      // sensitive mean direction
    Tensor mixing;                 // [feature_dim x latent_dim]
};

SynthWorld make_world(const SynthSpec& spec);

std::vector<DomainDataset> generate_synthetic(const SynthSpec& spec, std::size_t per_domain_count, std::uint64_t seed);

// Column roles for CSV ingestion, parsed from e.g.
// "feature:x0,feature:x1,sensitive:race,label:y,domain:borough".
// "feature:*" selects every column without another role.
struct CsvSchema {
    std::vector<std::string> features;
    bool all_other_features = false;
    std::string sensitive;
    std::string label;
    std::optional<std::string> domain;

    static CsvSchema parse(const std::string& spec);
    std::string str() const;
};

DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
// Rows grouped by their domain column, in domain-id order.
std::vector<DomainDataset> split_by_domain(const DomainDataset& all);

// Columns x0..x{d-1}, z, y, domain.
void write_csv(const std::filesystem::path& path, std::span<const DomainDataset> domains);
CsvSchema default_schema(std::size_t dim);
// Ground-truth sidecar: id, domain, c*, s*, a*, logit.
void write_truth_csv(const std::filesystem::path& path, std::span<const DomainDataset> domains);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

// Per-feature z-score statistics over the pooled datasets; features with
// stddev below kMinStd pass through unscaled.
inline constexpr double kMinStd = 1e-9;
FeatureStats fit_feature_stats(std::span<const DomainDataset> train);
DomainDataset apply_feature_stats(const FeatureStats& stats, DomainDataset ds);

struct Normalized {
    std::vector<DomainDataset> datasets;
    FeatureStats stats;
};

// Statistics from `train` only, applied to each of `apply_to`.
Normalized normalize_features(std::span<const DomainDataset> train, std::span<const DomainDataset> apply_to);

enum class SamplingMode { pooled, per_domain };

std::vector<Task> sample_tasks(std::span<const DomainDataset> pool, std::size_t task_count, std::size_t n_sup,
                               std::size_t n_qry, SamplingMode mode, std::uint64_t seed);

// Flattened view of a batch for the numeric code.
struct Batch {
    Tensor x;
    std::vector<int> z;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
};

Batch make_batch(std::span<const Example> examples);
std::vector<Example> pooled_examples(std::span<const DomainDataset> domains);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);
// Strict parse of a full field; throws DataError naming `what` on failure.
double parse_double(const std::string& field, const std::string& what);

} // namespace feed::data
