#pragma once

#include "feed/data.hpp"
#include "feed/disentangle.hpp"
#include "feed/meta.hpp"
#include "feed/nn.hpp"
#include "feed/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Binary parameter files.
//
//   FEEDPK <version>\n
//   <name> <rank> <dim>...\n  followed by numel little-endian IEEE-754 doubles
//   ...
//   END\n
namespace feed::ckpt {

inline constexpr int kVersion = 1;

struct Entry {
    std::string name;
    Tensor value;

    friend bool operator==(const Entry&, const Entry&) = default;
};

class Checkpoint {
public:
    // Tensor names may not contain whitespace and must be unique.
    void put(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    // Store tensors are named "<store>/<local>".
    void put_store(const ParamStore& store);
    ParamStore get_store(const std::string& store_name) const;
    bool has_store(const std::string& store_name) const;

    void put_fingerprint(std::uint64_t fp);
    std::optional<std::uint64_t> fingerprint() const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

private:
    std::vector<Entry> entries_;
};

void save(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load(const std::filesystem::path& path);
std::string serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::string& bytes, const std::string& origin = "<memory>");

void put_stats(Checkpoint& ck, const data::FeatureStats& stats);
std::optional<data::FeatureStats> get_stats(const Checkpoint& ck);

void put_model(Checkpoint& ck, const disentangle::DisentangleModel& model);
disentangle::DisentangleModel get_model(const Checkpoint& ck);
bool has_model(const Checkpoint& ck);

void put_classifier(Checkpoint& ck, const Mlp& theta);
Mlp get_classifier(const Checkpoint& ck);

void put_duals(Checkpoint& ck, const meta::DualState& duals);
std::optional<meta::DualState> get_duals(const Checkpoint& ck);

} // namespace feed::ckpt
