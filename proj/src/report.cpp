#include "feed/report.hpp"

#include "feed/data.hpp"
#include "feed/error.hpp"

#include "json.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace feed::report {

namespace {

std::string opt_str(const std::optional<double>& v)
{
    return v ? data::format_double(*v) : std::string();
}

std::optional<double> mean_present(std::span<const ResultRow> rows, std::optional<double> ResultRow::*field)
{
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : rows) {
        if (r.*field) {
            sum += *(r.*field);
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

nlohmann::ordered_json opt_json(const std::optional<double>& v)
{
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

} // namespace

ResultRow make_row(const std::string& method, const fair::FairReport& r, std::uint64_t seed)
{
    return {method, r.domain, r.accuracy, r.delta_dp.value, r.delta_eopp.value, r.delta_eo.value, seed};
}

ResultRow average_row(const std::string& method, std::span<const ResultRow> rows, std::uint64_t seed)
{
    if (rows.empty()) throw DataError("cannot average an empty result set");
    double acc = 0;
    for (const auto& r : rows) acc += r.accuracy;
    return {method,
            kAverageRow,
            acc / static_cast<double>(rows.size()),
            mean_present(rows, &ResultRow::delta_dp),
            mean_present(rows, &ResultRow::delta_eopp),
            mean_present(rows, &ResultRow::delta_eo),
            seed};
}

std::string to_csv(std::span<const ResultRow> rows)
{
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) {
        out += r.method + "," + r.held_out_domain + "," + data::format_double(r.accuracy) + "," + opt_str(r.delta_dp) +
               "," + opt_str(r.delta_eopp) + "," + opt_str(r.delta_eo) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

std::string to_jsonl(std::span<const ResultRow> rows)
{
    std::string out;
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["held_out_domain"] = r.held_out_domain;
        j["accuracy"] = r.accuracy;
        j["delta_dp"] = opt_json(r.delta_dp);
        j["delta_eopp"] = opt_json(r.delta_eopp);
        j["delta_eo"] = opt_json(r.delta_eo);
        j["seed"] = r.seed;
        out += j.dump() + "\n";
    }
    return out;
}

std::string history_jsonl(std::span<const HistoryEntry> history)
{
    std::string out;
    for (const auto& h : history) {
        nlohmann::ordered_json j;
        j["fold"] = h.fold;
        j["phase"] = h.phase;
        j["step"] = h.step;
        for (const auto& [k, v] : h.values) j[k] = v;
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<ResultRow> parse_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw DataError("results file does not start with the expected header");
    std::vector<ResultRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 7) throw DataError("results line " + std::to_string(lineno) + ": expected 7 fields");
        auto opt = [&](const std::string& s, const char* what) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return data::parse_double(s, what);
        };
        ResultRow r;
        r.method = f[0];
        r.held_out_domain = f[1];
        r.accuracy = data::parse_double(f[2], "accuracy");
        r.delta_dp = opt(f[3], "delta_dp");
        r.delta_eopp = opt(f[4], "delta_eopp");
        r.delta_eo = opt(f[5], "delta_eo");
        auto [ptr, ec] = std::from_chars(f[6].data(), f[6].data() + f[6].size(), r.seed);
        if (ec != std::errc{} || ptr != f[6].data() + f[6].size()) {
            throw DataError("results line " + std::to_string(lineno) + ": bad seed '" + f[6] + "'");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ResultRow> read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace feed::report
