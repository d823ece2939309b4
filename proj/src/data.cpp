#include "feed/data.hpp"

#include "feed/error.hpp"
#include "feed/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace feed::data {

bool DomainDataset::single_group() const
{
    bool neg = false, pos = false;
    for (const auto& e : examples) {
        (e.z > 0 ? pos : neg) = true;
    }
    return !(neg && pos);
}

void DomainDataset::validate() const
{
    for (const auto& e : examples) {
        if (e.x.size() != dim) {
            throw DataError("example " + std::to_string(e.id) + " has " + std::to_string(e.x.size()) +
                            " features, dataset dimension is " + std::to_string(dim));
        }
        if (e.z != -1 && e.z != 1) throw DataError("example " + std::to_string(e.id) + " has z outside {-1,+1}");
        if (e.y != 0 && e.y != 1) throw DataError("example " + std::to_string(e.id) + " has y outside {0,1}");
    }
}

// ---------------------------------------------------------------------------
// synthetic generator

void SynthSpec::validate() const
{
    if (content_dim == 0 || style_dim == 0 || sensitive_dim == 0) throw DataError("latent dimensions must be positive");
    if (feature_dim < latent_dim()) {
        throw DataError("feature_dim " + std::to_string(feature_dim) + " is smaller than the latent dimension " +
                        std::to_string(latent_dim()));
    }
    if (rho.size() < 3) throw DataError("at least 3 domains are required, got " + std::to_string(rho.size()));
    for (double r : rho) {
        if (!(r >= 0.0 && r <= 1.0)) throw DataError("rho must lie in [0, 1], got " + format_double(r));
    }
    if (!style_means.empty()) {
        if (style_means.size() != rho.size()) throw DataError("style_means must have one entry per domain");
        for (const auto& m : style_means) {
            if (m.size() != style_dim) throw DataError("style mean length does not match style_dim");
        }
    }
    if (!(label_noise >= 0.0) || !(feature_noise >= 0.0) || !(sensitive_shift >= 0.0)) {
        throw DataError("noise scales must be non-negative");
    }
}

std::vector<double> SynthSpec::style_mean(std::size_t domain) const
{
    if (!style_means.empty()) return style_means.at(domain);
    const double centre = (static_cast<double>(domains()) - 1.0) / 2.0;
    return std::vector<double>(style_dim, style_shift * (static_cast<double>(domain) - centre));
}

namespace {

std::vector<double> unit_direction(Rng& rng, std::size_t n)
{
    auto v = sample_normal(rng, n);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

} // namespace

SynthWorld make_world(const SynthSpec& spec)
{
    spec.validate();
    Rng rng(derive_seed(spec.mixing_seed, 0x776f726c64ULL));
    SynthWorld world;
    world.w = unit_direction(rng, spec.content_dim);
    world.mu_a = unit_direction(rng, spec.sensitive_dim);
    for (auto& v : world.mu_a) v *= spec.sensitive_shift;
    const std::size_t k = spec.latent_dim();
    world.mixing = Tensor(Shape{spec.feature_dim, k});
    const double sd = 1.0 / std::sqrt(static_cast<double>(k));
    auto entries = sample_normal(rng, spec.feature_dim * k, 0.0, sd);
    std::copy(entries.begin(), entries.end(), world.mixing.data().begin());
    return world;
}

std::vector<DomainDataset> generate_synthetic(const SynthSpec& spec, std::size_t per_domain_count, std::uint64_t seed)
{
    if (per_domain_count == 0) throw DataError("per_domain_count must be positive");
    const SynthWorld world = make_world(spec);
    const std::size_t d = spec.feature_dim;
    const std::size_t k = spec.latent_dim();

    std::vector<DomainDataset> out(spec.domains());
    for (std::size_t e = 0; e < spec.domains(); ++e) {
        Rng rng(derive_seed(seed, e));
        std::normal_distribution<double> unit(0.0, 1.0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const auto style_mu = spec.style_mean(e);
        const double p_aligned = (1.0 + spec.rho[e]) / 2.0;

        DomainDataset& ds = out[e];
        ds.domain = static_cast<int>(e);
        ds.name = std::to_string(e);
        ds.dim = d;
        ds.examples.reserve(per_domain_count);
        ds.truth.reserve(per_domain_count);
        for (std::size_t i = 0; i < per_domain_count; ++i) {
            GroundTruth gt;
            gt.c.resize(spec.content_dim);
            gt.s.resize(spec.style_dim);
            gt.a.resize(spec.sensitive_dim);
            for (auto& v : gt.c) v = unit(rng);
            for (std::size_t j = 0; j < spec.style_dim; ++j) gt.s[j] = style_mu[j] + unit(rng);
            gt.logit = std::inner_product(world.w.begin(), world.w.end(), gt.c.begin(), 0.0);
            const double eps = spec.label_noise * unit(rng);
            const int y = gt.logit + eps > 0.0 ? 1 : 0;
            const int aligned = 2 * y - 1;
            // p_aligned == 1 must force alignment regardless of the draw.
            const double draw = u01(rng);
            const int z = (p_aligned >= 1.0 || draw < p_aligned) ? aligned : -aligned;
            for (std::size_t j = 0; j < spec.sensitive_dim; ++j) gt.a[j] = z * world.mu_a[j] + unit(rng);

            std::vector<double> latent;
            latent.reserve(k);
            latent.insert(latent.end(), gt.c.begin(), gt.c.end());
            latent.insert(latent.end(), gt.s.begin(), gt.s.end());
            latent.insert(latent.end(), gt.a.begin(), gt.a.end());
            Example ex;
            ex.x.assign(d, 0.0);
            for (std::size_t r = 0; r < d; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < k; ++c) acc += world.mixing.at(r, c) * latent[c];
                ex.x[r] = acc + spec.feature_noise * unit(rng);
            }
            ex.z = z;
            ex.y = y;
            ex.domain = static_cast<int>(e);
            ex.id = e * per_domain_count + i;
            ds.examples.push_back(std::move(ex));
            ds.truth.push_back(std::move(gt));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw DataError("cannot format double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& field, const std::string& what)
{
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || field.empty()) {
        throw DataError("unparseable number '" + field + "' in " + what);
    }
    return v;
}

namespace {

std::string trim(std::string s)
{
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, sep)) out.push_back(trim(field));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

} // namespace

CsvSchema CsvSchema::parse(const std::string& spec)
{
    CsvSchema schema;
    bool have_z = false, have_y = false;
    for (const auto& item : split(spec, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw SchemaError("schema entry '" + item + "' is not role:name");
        const auto role = trim(item.substr(0, colon));
        const auto name = trim(item.substr(colon + 1));
        if (name.empty()) throw SchemaError("schema entry '" + item + "' has an empty column name");
        if (role == "feature") {
            if (name == "*") schema.all_other_features = true;
            else schema.features.push_back(name);
        } else if (role == "sensitive") {
            if (have_z) throw SchemaError("schema declares more than one sensitive column");
            schema.sensitive = name;
            have_z = true;
        } else if (role == "label") {
            if (have_y) throw SchemaError("schema declares more than one label column");
            schema.label = name;
            have_y = true;
        } else if (role == "domain") {
            if (schema.domain) throw SchemaError("schema declares more than one domain column");
            schema.domain = name;
        } else {
            throw SchemaError("unknown schema role '" + role + "'");
        }
    }
    if (!have_z) throw SchemaError("schema has no sensitive column");
    if (!have_y) throw SchemaError("schema has no label column");
    if (schema.features.empty() && !schema.all_other_features) throw SchemaError("schema has no feature columns");
    return schema;
}

std::string CsvSchema::str() const
{
    std::string s;
    for (const auto& f : features) s += "feature:" + f + ",";
    if (all_other_features) s += "feature:*,";
    s += "sensitive:" + sensitive + ",label:" + label;
    if (domain) s += ",domain:" + *domain;
    return s;
}

CsvSchema default_schema(std::size_t dim)
{
    CsvSchema schema;
    for (std::size_t j = 0; j < dim; ++j) schema.features.push_back("x" + std::to_string(j));
    schema.sensitive = "z";
    schema.label = "y";
    schema.domain = "domain";
    return schema;
}

DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = split(trim(line), ',');

    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw SchemaError(path.string() + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t zc = column(schema.sensitive);
    const std::size_t yc = column(schema.label);
    const std::optional<std::size_t> dc = schema.domain ? std::optional(column(*schema.domain)) : std::nullopt;
    std::vector<std::size_t> fcols;
    for (const auto& f : schema.features) fcols.push_back(column(f));
    if (schema.all_other_features) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == zc || c == yc || (dc && c == *dc)) continue;
            if (std::find(fcols.begin(), fcols.end(), c) == fcols.end()) fcols.push_back(c);
        }
    }
    if (fcols.empty()) throw SchemaError(path.string() + ": no feature columns selected");

    DomainDataset ds;
    ds.dim = fcols.size();
    ds.name = path.stem().string();
    std::vector<double> raw_z, raw_y;
    std::map<std::string, int> domain_ids;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(trim(line), ',');
        if (fields.size() != header.size()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        const std::string where = path.string() + ":" + std::to_string(lineno);
        Example ex;
        ex.x.reserve(fcols.size());
        for (auto c : fcols) ex.x.push_back(parse_double(fields[c], where + " column '" + header[c] + "'"));
        raw_z.push_back(parse_double(fields[zc], where + " column '" + header[zc] + "'"));
        raw_y.push_back(parse_double(fields[yc], where + " column '" + header[yc] + "'"));
        if (dc) {
            const auto& label = fields[*dc];
            auto [it, inserted] = domain_ids.try_emplace(label, static_cast<int>(domain_ids.size()));
            ex.domain = it->second;
        }
        ex.id = ds.examples.size();
        ds.examples.push_back(std::move(ex));
    }

    // Two-valued columns may be coded {0,1} or {-1,1}.
    auto normalize = [&](const std::vector<double>& raw, const std::string& col, int neg, int pos) {
        bool saw_zero = false, saw_minus = false;
        for (double v : raw) {
            if (v == 0.0) saw_zero = true;
            else if (v == -1.0) saw_minus = true;
            else if (v != 1.0) {
                throw SchemaError(path.string() + ": column '" + col + "' has value " + format_double(v) +
                                  " outside {0,1} / {-1,1}");
            }
        }
        if (saw_zero && saw_minus) throw SchemaError(path.string() + ": column '" + col + "' mixes 0 and -1 codes");
        std::vector<int> out;
        out.reserve(raw.size());
        for (double v : raw) out.push_back(v == 1.0 ? pos : neg);
        return out;
    };
    const auto zs = normalize(raw_z, schema.sensitive, -1, 1);
    const auto ys = normalize(raw_y, schema.label, 0, 1);
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        ds.examples[i].z = zs[i];
        ds.examples[i].y = ys[i];
    }
    ds.validate();
    return ds;
}

std::vector<DomainDataset> split_by_domain(const DomainDataset& all)
{
    std::map<int, DomainDataset> groups;
    for (const auto& ex : all.examples) {
        if (!ex.domain) throw DataError("example " + std::to_string(ex.id) + " has no domain tag");
        auto& g = groups[*ex.domain];
        g.domain = *ex.domain;
        g.name = std::to_string(*ex.domain);
        g.dim = all.dim;
        g.examples.push_back(ex);
    }
    std::vector<DomainDataset> out;
    for (auto& [_, g] : groups) out.push_back(std::move(g));
    return out;
}

void write_csv(const std::filesystem::path& path, std::span<const DomainDataset> domains)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::size_t d = domains.empty() ? 0 : domains.front().dim;
    for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
    out << "z,y,domain\n";
    for (const auto& ds : domains) {
        for (const auto& ex : ds.examples) {
            for (double v : ex.x) out << format_double(v) << ',';
            out << ex.z << ',' << ex.y << ',' << ex.domain.value_or(ds.domain) << '\n';
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

void write_truth_csv(const std::filesystem::path& path, std::span<const DomainDataset> domains)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    if (domains.empty() || domains.front().truth.empty()) return;
    const auto& t0 = domains.front().truth.front();
    out << "id,domain";
    for (std::size_t j = 0; j < t0.c.size(); ++j) out << ",c" << j;
    for (std::size_t j = 0; j < t0.s.size(); ++j) out << ",s" << j;
    for (std::size_t j = 0; j < t0.a.size(); ++j) out << ",a" << j;
    out << ",logit\n";
    for (const auto& ds : domains) {
        for (std::size_t i = 0; i < ds.truth.size(); ++i) {
            const auto& t = ds.truth[i];
            out << ds.examples[i].id << ',' << ds.domain;
            for (double v : t.c) out << ',' << format_double(v);
            for (double v : t.s) out << ',' << format_double(v);
            for (double v : t.a) out << ',' << format_double(v);
            out << ',' << format_double(t.logit) << '\n';
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// normalization

FeatureStats fit_feature_stats(std::span<const DomainDataset> train)
{
    std::size_t n = 0;
    std::size_t d = 0;
    for (const auto& ds : train) {
        n += ds.size();
        d = ds.dim;
    }
    if (n == 0) throw DataError("cannot fit feature statistics on an empty training pool");
    FeatureStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (const auto& ds : train) {
        if (ds.dim != d) throw DataError("training domains disagree on feature dimension");
        for (const auto& ex : ds.examples) {
            for (std::size_t j = 0; j < d; ++j) st.mean[j] += ex.x[j];
        }
    }
    for (auto& m : st.mean) m /= static_cast<double>(n);
    for (const auto& ds : train) {
        for (const auto& ex : ds.examples) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = ex.x[j] - st.mean[j];
                st.stddev[j] += dv * dv;
            }
        }
    }
    for (auto& s : st.stddev) s = std::sqrt(s / static_cast<double>(n));
    return st;
}

DomainDataset apply_feature_stats(const FeatureStats& stats, DomainDataset ds)
{
    if (ds.dim != stats.mean.size()) throw DataError("feature statistics do not match dataset dimension");
    for (auto& ex : ds.examples) {
        for (std::size_t j = 0; j < ds.dim; ++j) {
            if (stats.stddev[j] < kMinStd) continue;
            ex.x[j] = (ex.x[j] - stats.mean[j]) / stats.stddev[j];
        }
    }
    return ds;
}

Normalized normalize_features(std::span<const DomainDataset> train, std::span<const DomainDataset> apply_to)
{
    Normalized out;
    out.stats = fit_feature_stats(train);
    out.datasets.reserve(apply_to.size());
    for (const auto& ds : apply_to) out.datasets.push_back(apply_feature_stats(out.stats, ds));
    return out;
}

// ---------------------------------------------------------------------------
// tasks and batches

std::vector<Example> pooled_examples(std::span<const DomainDataset> domains)
{
    std::vector<Example> all;
    for (const auto& ds : domains) all.insert(all.end(), ds.examples.begin(), ds.examples.end());
    return all;
}

namespace {

// Partial Fisher-Yates: the first `need` entries of idx become a uniform
// sample without replacement.
void partial_shuffle(std::vector<std::size_t>& idx, std::size_t need, Rng& rng)
{
    for (std::size_t i = 0; i < need; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
}

Task draw_task(const std::vector<const Example*>& source, std::size_t n_sup, std::size_t n_qry, Rng& rng)
{
    std::vector<std::size_t> idx(source.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    partial_shuffle(idx, n_sup + n_qry, rng);
    Task t;
    t.support.reserve(n_sup);
    t.query.reserve(n_qry);
    for (std::size_t i = 0; i < n_sup; ++i) t.support.push_back(*source[idx[i]]);
    for (std::size_t i = n_sup; i < n_sup + n_qry; ++i) t.query.push_back(*source[idx[i]]);
    return t;
}

} // namespace

std::vector<Task> sample_tasks(std::span<const DomainDataset> pool, std::size_t task_count, std::size_t n_sup,
                               std::size_t n_qry, SamplingMode mode, std::uint64_t seed)
{
    if (task_count == 0) return {};
    if (n_sup == 0 || n_qry == 0) throw DataError("support and query sizes must be positive");
    const std::size_t need = n_sup + n_qry;
    Rng rng(seed);
    std::vector<Task> tasks;
    tasks.reserve(task_count);

    if (mode == SamplingMode::pooled) {
        std::vector<const Example*> all;
        for (const auto& ds : pool) {
            for (const auto& ex : ds.examples) all.push_back(&ex);
        }
        if (all.size() < need) {
            throw DataError("pool has " + std::to_string(all.size()) + " examples, a task needs " + std::to_string(need));
        }
        for (std::size_t t = 0; t < task_count; ++t) tasks.push_back(draw_task(all, n_sup, n_qry, rng));
        return tasks;
    }

    std::vector<std::vector<const Example*>> per_domain;
    for (const auto& ds : pool) {
        if (ds.size() < need) {
            throw DataError("domain " + ds.name + " has " + std::to_string(ds.size()) + " examples, a task needs " +
                            std::to_string(need));
        }
        auto& v = per_domain.emplace_back();
        for (const auto& ex : ds.examples) v.push_back(&ex);
    }
    if (per_domain.empty()) throw DataError("empty task pool");
    std::uniform_int_distribution<std::size_t> which(0, per_domain.size() - 1);
    for (std::size_t t = 0; t < task_count; ++t) tasks.push_back(draw_task(per_domain[which(rng)], n_sup, n_qry, rng));
    return tasks;
}

Batch make_batch(std::span<const Example> examples)
{
    if (examples.empty()) throw DataError("empty batch");
    const std::size_t d = examples.front().x.size();
    Batch b;
    b.x = Tensor(Shape{examples.size(), d});
    b.z.reserve(examples.size());
    b.y.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].x.size() != d) throw ShapeError("batch examples disagree on feature dimension");
        std::copy(examples[i].x.begin(), examples[i].x.end(), b.x.data().begin() + i * d);
        b.z.push_back(examples[i].z);
        b.y.push_back(examples[i].y);
    }
    return b;
}

} // namespace feed::data
