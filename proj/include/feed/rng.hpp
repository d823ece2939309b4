#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace feed {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a root
// seed and a path of integer labels.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename... Labels>
constexpr std::uint64_t derive_seed(std::uint64_t root, Labels... labels) noexcept
{
    std::uint64_t s = mix64(root);
    ((s = mix64(s ^ static_cast<std::uint64_t>(labels))), ...);
    return s;
}

inline std::vector<double> sample_normal(Rng& rng, std::size_t n, double mean = 0.0, double stddev = 1.0)
{
    std::normal_distribution<double> dist(mean, stddev);
    std::vector<double> out(n);
    for (auto& v : out) {
        v = dist(rng);
    }
    return out;
}

} // namespace feed
