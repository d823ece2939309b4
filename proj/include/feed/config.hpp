#pragma once

#include "feed/data.hpp"
#include "feed/disentangle.hpp"
#include "feed/meta.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace feed::harness {

enum class Method { feed, erm, erm_fc, abs1, abs2 };

const char* method_name(Method m) noexcept;
Method parse_method(const std::string& s);
// Methods that meta-train and adapt downstream.
bool is_meta_method(Method m) noexcept;
bool uses_transform(Method m) noexcept;

enum class SourceKind { synthetic, csv };

struct DataSource {
    SourceKind kind = SourceKind::synthetic;
    data::SynthSpec synth;
    std::size_t per_domain_count = 1000;
    std::filesystem::path csv_path;
    std::string schema;
};

// Line-oriented `key = value` configuration with `#` comments and dotted keys.
// Unknown keys are rejected.
struct ExperimentConfig {
    Method method = Method::feed;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "feed_out";
    std::size_t fewshot = 32;
    bool select_enabled = true;
    long select_every = 25;
    double threshold = 0.5;

    DataSource data;
    // Latent widths; the input width d is taken from the data.
    disentangle::Dims latent;
    disentangle::Architecture arch;
    disentangle::Stage1Hyper stage1;
    meta::MetaHyper meta;
    std::size_t classifier_hidden = 64;
    meta::DualState duals;
    meta::ErmHyper erm;

    static ExperimentConfig parse(const std::string& text, const std::string& origin = "<string>");
    static ExperimentConfig load(const std::filesystem::path& path);

    // Applies one `key = value` assignment (also used for command-line overrides).
    void set(const std::string& key, const std::string& value);
    std::vector<std::string> keys() const;
    // Every key with its current value, one `key = value` line each, in key order.
    std::string serialize() const;
    std::uint64_t fingerprint() const;
    void validate() const;
};

// FEED_OUT_DIR, when set, replaces out_dir.
void apply_environment(ExperimentConfig& config);

} // namespace feed::harness
