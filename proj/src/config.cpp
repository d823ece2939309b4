#include "feed/config.hpp"

#include "feed/error.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace feed::harness {

const char* method_name(Method m) noexcept
{
    switch (m) {
    case Method::feed: return "feed";
    case Method::erm: return "erm";
    case Method::erm_fc: return "erm_fc";
    case Method::abs1: return "abs1";
    case Method::abs2: return "abs2";
    }
    return "unknown";
}

Method parse_method(const std::string& s)
{
    if (s == "feed") return Method::feed;
    if (s == "erm") return Method::erm;
    if (s == "erm_fc") return Method::erm_fc;
    if (s == "abs1") return Method::abs1;
    if (s == "abs2") return Method::abs2;
    throw ConfigError("unknown method '" + s + "' (expected feed, erm, erm_fc, abs1, abs2)");
}

bool is_meta_method(Method m) noexcept
{
    return m == Method::feed || m == Method::abs1 || m == Method::abs2;
}

bool uses_transform(Method m) noexcept
{
    return m == Method::feed || m == Method::abs1;
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v)
{
    try {
        return data::parse_double(v, "config key " + key);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v)
{
    Int out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v)
{
    return data::format_double(v);
}

struct Field {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

using FieldTable = std::map<std::string, Field>;

template <typename Int>
Field int_field(const std::string& key, Int& ref)
{
    return {[&ref, key](const std::string& v) { ref = to_int<Int>(key, v); }, [&ref] { return std::to_string(ref); }};
}

Field double_field(const std::string& key, double& ref)
{
    return {[&ref, key](const std::string& v) { ref = to_double(key, v); }, [&ref] { return fmt(ref); }};
}

Field bool_field(const std::string& key, bool& ref)
{
    return {[&ref, key](const std::string& v) { ref = to_bool(key, v); }, [&ref] { return ref ? "true" : "false"; }};
}

FieldTable fields(ExperimentConfig& c)
{
    FieldTable t;
    t["method"] = {[&c](const std::string& v) { c.method = parse_method(v); },
                   [&c] { return std::string(method_name(c.method)); }};
    t["seed"] = int_field("seed", c.seed);
    t["out_dir"] = {[&c](const std::string& v) { c.out_dir = v; }, [&c] { return c.out_dir.string(); }};
    t["fewshot"] = int_field("fewshot", c.fewshot);
    t["threshold"] = double_field("threshold", c.threshold);
    t["select.enabled"] = bool_field("select.enabled", c.select_enabled);
    t["select.every"] = int_field("select.every", c.select_every);

    auto& src = c.data;
    t["data.source"] = {[&src](const std::string& v) {
                            if (v == "synthetic") src.kind = SourceKind::synthetic;
                            else if (v == "csv") src.kind = SourceKind::csv;
                            else throw ConfigError("data.source must be synthetic or csv, got '" + v + "'");
                        },
                        [&src] { return std::string(src.kind == SourceKind::csv ? "csv" : "synthetic"); }};
    t["data.csv_path"] = {[&src](const std::string& v) { src.csv_path = v; }, [&src] { return src.csv_path.string(); }};
    t["data.schema"] = {[&src](const std::string& v) { src.schema = v; }, [&src] { return src.schema; }};
    t["data.per_domain_count"] = int_field("data.per_domain_count", src.per_domain_count);

    auto& sy = src.synth;
    t["synth.rho"] = {[&sy](const std::string& v) {
                          std::vector<double> rho;
                          std::stringstream in(v);
                          std::string item;
                          while (std::getline(in, item, ',')) rho.push_back(to_double("synth.rho", trim(item)));
                          sy.rho = std::move(rho);
                      },
                      [&sy] {
                          std::string s;
                          for (std::size_t i = 0; i < sy.rho.size(); ++i) s += (i ? "," : "") + fmt(sy.rho[i]);
                          return s;
                      }};
    t["synth.content_dim"] = int_field("synth.content_dim", sy.content_dim);
    t["synth.style_dim"] = int_field("synth.style_dim", sy.style_dim);
    t["synth.sensitive_dim"] = int_field("synth.sensitive_dim", sy.sensitive_dim);
    t["synth.feature_dim"] = int_field("synth.feature_dim", sy.feature_dim);
    t["synth.style_shift"] = double_field("synth.style_shift", sy.style_shift);
    t["synth.mixing_seed"] = int_field("synth.mixing_seed", sy.mixing_seed);
    t["synth.label_noise"] = double_field("synth.label_noise", sy.label_noise);
    t["synth.feature_noise"] = double_field("synth.feature_noise", sy.feature_noise);
    t["synth.sensitive_shift"] = double_field("synth.sensitive_shift", sy.sensitive_shift);

    auto& s1 = c.stage1;
    t["stage1.steps"] = int_field("stage1.steps", s1.steps);
    t["stage1.batch_size"] = int_field("stage1.batch_size", s1.batch_size);
    t["stage1.monitor_size"] = int_field("stage1.monitor_size", s1.monitor_size);
    t["stage1.lr_generators"] = double_field("stage1.lr_generators", s1.lr_generators);
    t["stage1.lr_discriminators"] = double_field("stage1.lr_discriminators", s1.lr_discriminators);
    t["stage1.beta_z"] = double_field("stage1.beta_z", s1.beta_z);
    t["stage1.beta_g"] = double_field("stage1.beta_g", s1.beta_g);
    t["stage1.objective"] = {[&s1](const std::string& v) {
                                 if (v == "literal") s1.objective = disentangle::GanObjective::literal;
                                 else if (v == "nonsaturating") s1.objective = disentangle::GanObjective::nonsaturating;
                                 else throw ConfigError("stage1.objective must be literal or nonsaturating");
                             },
                             [&s1] {
                                 return std::string(s1.objective == disentangle::GanObjective::literal ? "literal"
                                                                                                       : "nonsaturating");
                             }};
    t["stage1.semantic_dim"] = int_field("stage1.semantic_dim", c.latent.d_m);
    t["stage1.content_dim"] = int_field("stage1.content_dim", c.latent.d_c);
    t["stage1.style_dim"] = int_field("stage1.style_dim", c.latent.d_s);
    t["stage1.sensitive_dim"] = int_field("stage1.sensitive_dim", c.latent.d_a);
    t["stage1.encoder_hidden"] = int_field("stage1.encoder_hidden", c.arch.encoder_hidden);
    t["stage1.encoder_layers"] = int_field("stage1.encoder_layers", c.arch.encoder_layers);
    t["stage1.decoder_hidden"] = int_field("stage1.decoder_hidden", c.arch.decoder_hidden);
    t["stage1.decoder_layers"] = int_field("stage1.decoder_layers", c.arch.decoder_layers);
    t["stage1.classifier_hidden"] = int_field("stage1.classifier_hidden", c.arch.classifier_hidden);
    t["stage1.discriminator_hidden"] = int_field("stage1.discriminator_hidden", c.arch.discriminator_hidden);

    auto& m = c.meta;
    t["meta.alpha"] = double_field("meta.alpha", m.alpha);
    t["meta.eta_p"] = double_field("meta.eta_p", m.eta_p);
    t["meta.inner_steps"] = int_field("meta.inner_steps", m.inner_steps);
    t["meta.tasks_per_batch"] = int_field("meta.tasks_per_batch", m.tasks_per_batch);
    t["meta.iterations"] = int_field("meta.iterations", m.iterations);
    t["meta.n_sup"] = int_field("meta.n_sup", m.n_sup);
    t["meta.n_qry"] = int_field("meta.n_qry", m.n_qry);
    t["meta.downstream_steps"] = int_field("meta.downstream_steps", m.downstream_steps);
    t["meta.hidden"] = int_field("meta.hidden", c.classifier_hidden);
    t["meta.variant"] = {[&m](const std::string& v) {
                             if (v == "signed") m.variant = meta::FairVariant::signed_gap;
                             else if (v == "literal") m.variant = meta::FairVariant::literal;
                             else throw ConfigError("meta.variant must be signed or literal");
                         },
                         [&m] { return std::string(m.variant == meta::FairVariant::literal ? "literal" : "signed"); }};
    t["meta.sampling"] = {[&m](const std::string& v) {
                              if (v == "pooled") m.sampling = data::SamplingMode::pooled;
                              else if (v == "per_domain") m.sampling = data::SamplingMode::per_domain;
                              else throw ConfigError("meta.sampling must be pooled or per_domain");
                          },
                          [&m] {
                              return std::string(m.sampling == data::SamplingMode::per_domain ? "per_domain" : "pooled");
                          }};

    auto& d = c.duals;
    t["dual.lambda1_init"] = double_field("dual.lambda1_init", d.lambda1);
    t["dual.lambda2_init"] = double_field("dual.lambda2_init", d.lambda2);
    t["dual.gamma1"] = double_field("dual.gamma1", d.gamma1);
    t["dual.gamma2"] = double_field("dual.gamma2", d.gamma2);
    t["dual.eta_d"] = double_field("dual.eta_d", d.eta_d);

    t["erm.steps"] = int_field("erm.steps", c.erm.steps);
    t["erm.batch_size"] = int_field("erm.batch_size", c.erm.batch_size);
    t["erm.lr"] = double_field("erm.lr", c.erm.lr);
    return t;
}

} // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value)
{
    auto table = fields(*this);
    auto it = table.find(trim(key));
    if (it == table.end()) throw ConfigError("unknown config key '" + trim(key) + "'");
    it->second.set(trim(value));
}

std::vector<std::string> ExperimentConfig::keys() const
{
    auto table = fields(const_cast<ExperimentConfig&>(*this));
    std::vector<std::string> out;
    for (const auto& [k, _] : table) out.push_back(k);
    return out;
}

std::string ExperimentConfig::serialize() const
{
    auto table = fields(const_cast<ExperimentConfig&>(*this));
    std::string out;
    for (const auto& [k, f] : table) out += k + " = " + f.get() + "\n";
    return out;
}

std::uint64_t ExperimentConfig::fingerprint() const
{
    // FNV-1a over the canonical serialization.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : serialize()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin)
{
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            c.set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void ExperimentConfig::validate() const
{
    if (fewshot == 0) throw ConfigError("fewshot must be positive");
    if (select_every <= 0) throw ConfigError("select.every must be positive");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    if (latent.d_m == 0 || latent.d_c == 0 || latent.d_s == 0 || latent.d_a == 0 || classifier_hidden == 0) throw ConfigError("network widths must be positive");
    if (arch.encoder_hidden == 0 || arch.decoder_hidden == 0 || arch.classifier_hidden == 0 ||
        arch.discriminator_hidden == 0) {
        throw ConfigError("network widths must be positive");
    }
    if (data.per_domain_count == 0) throw ConfigError("data.per_domain_count must be positive");
    if (data.kind == SourceKind::csv && (data.csv_path.empty() || data.schema.empty())) {
        throw ConfigError("data.source = csv requires data.csv_path and data.schema");
    }
    try {
        if (data.kind == SourceKind::synthetic) data.synth.validate();
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    stage1.validate();
    meta.validate();
    duals.validate();
    erm.validate();
}

void apply_environment(ExperimentConfig& config)
{
    if (const char* dir = std::getenv("FEED_OUT_DIR"); dir && *dir) config.out_dir = dir;
}

} // namespace feed::harness
