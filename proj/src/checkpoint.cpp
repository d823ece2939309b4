#include "feed/checkpoint.hpp"

#include "feed/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace feed::ckpt {

namespace {

constexpr const char* kMagic = "FEEDPK";
constexpr const char* kStatsMean = "norm/mean";
constexpr const char* kStatsStd = "norm/stddev";
constexpr const char* kDims = "meta/dims";
constexpr const char* kFingerprint = "meta/fingerprint";
constexpr const char* kDuals = "meta/duals";

void put_le(std::string& out, double v)
{
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xFF));
        bits >>= 8;
    }
}

double get_le(const unsigned char* p)
{
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    return std::bit_cast<double>(bits);
}

bool parse_size(const std::string& tok, std::size_t& out)
{
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc{} && ptr == tok.data() + tok.size() && !tok.empty();
}

std::vector<std::string> split_ws(const std::string& line)
{
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

} // namespace

void Checkpoint::put(const std::string& name, Tensor value)
{
    if (name.empty() || std::any_of(name.begin(), name.end(), [](char c) { return std::isspace((unsigned char)c); })) {
        throw CheckpointError("invalid tensor name '" + name + "'");
    }
    for (auto& e : entries_) {
        if (e.name == name) {
            e.value = std::move(value);
            return;
        }
    }
    entries_.push_back({name, std::move(value)});
}

bool Checkpoint::contains(const std::string& name) const
{
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Tensor& Checkpoint::get(const std::string& name) const
{
    for (const auto& e : entries_) {
        if (e.name == name) return e.value;
    }
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::put_store(const ParamStore& store)
{
    for (const auto& [local, t] : store) put(store.key(local), t);
}

ParamStore Checkpoint::get_store(const std::string& store_name) const
{
    ParamStore out(store_name);
    const std::string prefix = store_name + "/";
    for (const auto& e : entries_) {
        if (e.name.rfind(prefix, 0) == 0) out.set(e.name.substr(prefix.size()), e.value);
    }
    if (out.size() == 0) throw CheckpointError("checkpoint has no parameters for '" + store_name + "'");
    return out;
}

bool Checkpoint::has_store(const std::string& store_name) const
{
    const std::string prefix = store_name + "/";
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.name.rfind(prefix, 0) == 0; });
}

void Checkpoint::put_fingerprint(std::uint64_t fp)
{
    // Two 32-bit halves, each exactly representable as a double.
    put(kFingerprint, Tensor::vector({static_cast<double>(fp >> 32), static_cast<double>(fp & 0xFFFFFFFFu)}));
}

std::optional<std::uint64_t> Checkpoint::fingerprint() const
{
    if (!contains(kFingerprint)) return std::nullopt;
    const auto& t = get(kFingerprint);
    if (t.numel() != 2) throw CheckpointError("malformed fingerprint tensor");
    return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

std::string serialize(const Checkpoint& ck)
{
    std::string out = std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
    for (const auto& e : ck.entries()) {
        out += e.name + " " + std::to_string(e.value.rank());
        for (auto d : e.value.shape()) out += " " + std::to_string(d);
        out += "\n";
        for (double v : e.value.data()) put_le(out, v);
    }
    out += "END\n";
    return out;
}

Checkpoint deserialize(const std::string& bytes, const std::string& origin)
{
    std::size_t pos = 0;
    auto next_line = [&](std::string& line) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) return false;
        line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return true;
    };

    std::string line;
    if (!next_line(line)) throw CheckpointError(origin + ": truncated checkpoint (no header)");
    const auto head = split_ws(line);
    if (head.size() != 2 || head[0] != kMagic) throw CheckpointError(origin + ": corrupt magic, not a checkpoint file");
    std::size_t version = 0;
    if (!parse_size(head[1], version)) throw CheckpointError(origin + ": corrupt version field '" + head[1] + "'");
    if (version != static_cast<std::size_t>(kVersion)) {
        throw CheckpointError(origin + ": unsupported checkpoint version " + head[1] + " (supported: " +
                              std::to_string(kVersion) + ")");
    }

    Checkpoint ck;
    while (true) {
        if (!next_line(line)) throw CheckpointError(origin + ": truncated checkpoint (missing END)");
        if (line == "END") break;
        const auto toks = split_ws(line);
        std::size_t rank = 0;
        if (toks.size() < 2 || !parse_size(toks[1], rank) || toks.size() != rank + 2) {
            throw CheckpointError(origin + ": corrupt tensor header '" + line + "'");
        }
        Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i) {
            if (!parse_size(toks[i + 2], shape[i]) || shape[i] == 0) {
                throw CheckpointError(origin + ": corrupt dimension in '" + line + "'");
            }
        }
        const std::size_t n = shape_numel(shape);
        if (bytes.size() - pos < n * 8) {
            throw CheckpointError(origin + ": truncated payload for '" + toks[0] + "' (expected " +
                                  std::to_string(n * 8) + " bytes, found " + std::to_string(bytes.size() - pos) + ")");
        }
        std::vector<double> values(n);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        for (std::size_t i = 0; i < n; ++i) values[i] = get_le(p + 8 * i);
        pos += n * 8;
        if (ck.contains(toks[0])) throw CheckpointError(origin + ": duplicate tensor '" + toks[0] + "'");
        ck.put(toks[0], Tensor(shape, std::move(values)));
    }
    if (pos != bytes.size()) throw CheckpointError(origin + ": trailing bytes after END");
    return ck;
}

void save(const std::filesystem::path& path, const Checkpoint& ck)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const auto bytes = serialize(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str(), path.string());
}

void put_stats(Checkpoint& ck, const data::FeatureStats& stats)
{
    ck.put(kStatsMean, Tensor::vector(stats.mean));
    ck.put(kStatsStd, Tensor::vector(stats.stddev));
}

std::optional<data::FeatureStats> get_stats(const Checkpoint& ck)
{
    if (!ck.contains(kStatsMean)) return std::nullopt;
    return data::FeatureStats{ck.get(kStatsMean).values(), ck.get(kStatsStd).values()};
}

void put_model(Checkpoint& ck, const disentangle::DisentangleModel& model)
{
    const auto& d = model.dims;
    ck.put(kDims, Tensor::vector({double(d.d), double(d.d_m), double(d.d_c), double(d.d_s), double(d.d_a)}));
    for (const auto* s : model.stores()) ck.put_store(*s);
}

bool has_model(const Checkpoint& ck)
{
    return ck.contains(kDims);
}

disentangle::DisentangleModel get_model(const Checkpoint& ck)
{
    if (!has_model(ck)) throw CheckpointError("checkpoint holds no disentanglement model");
    std::vector<ParamStore> stores;
    for (const char* name : disentangle::DisentangleModel::store_names()) stores.push_back(ck.get_store(name));
    auto model = disentangle::DisentangleModel::from_stores(std::move(stores));
    const auto& dims = ck.get(kDims);
    const auto& d = model.dims;
    if (dims.numel() != 5 || dims[0] != double(d.d) || dims[1] != double(d.d_m) || dims[2] != double(d.d_c) ||
        dims[3] != double(d.d_s) || dims[4] != double(d.d_a)) {
        throw CheckpointError("stored dimensions disagree with the stored parameters");
    }
    return model;
}

void put_classifier(Checkpoint& ck, const Mlp& theta)
{
    ck.put_store(theta.params());
}

Mlp get_classifier(const Checkpoint& ck)
{
    return Mlp::from_params(ck.get_store(meta::kClassifierStore), Activation::softmax);
}

void put_duals(Checkpoint& ck, const meta::DualState& duals)
{
    ck.put(kDuals, Tensor::vector({duals.lambda1, duals.lambda2, duals.gamma1, duals.gamma2, duals.eta_d}));
}

std::optional<meta::DualState> get_duals(const Checkpoint& ck)
{
    if (!ck.contains(kDuals)) return std::nullopt;
    const auto& t = ck.get(kDuals);
    if (t.numel() != 5) throw CheckpointError("malformed dual-variable tensor");
    return meta::DualState{t[0], t[1], t[2], t[3], t[4]};
}

} // namespace feed::ckpt
