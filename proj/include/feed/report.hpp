#pragma once

#include "feed/fairmetrics.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace feed::report {

inline constexpr const char* kCsvHeader = "method,held_out_domain,accuracy,delta_dp,delta_eopp,delta_eo,seed";
inline constexpr const char* kAverageRow = "Avg";

struct ResultRow {
    std::string method;
    std::string held_out_domain;
    double accuracy = 0;
    std::optional<double> delta_dp, delta_eopp, delta_eo;
    std::uint64_t seed = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

ResultRow make_row(const std::string& method, const fair::FairReport& r, std::uint64_t seed);
// Mean of each column over the rows where it is present.
ResultRow average_row(const std::string& method, std::span<const ResultRow> rows, std::uint64_t seed);

// One training-curve point.
struct HistoryEntry {
    std::string fold;
    std::string phase;
    long step = 0;
    std::vector<std::pair<std::string, double>> values;
};

std::string to_csv(std::span<const ResultRow> rows);
std::string to_jsonl(std::span<const ResultRow> rows);
std::string history_jsonl(std::span<const HistoryEntry> history);

std::vector<ResultRow> parse_csv(const std::string& text);
std::vector<ResultRow> read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace feed::report
