#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

// Data-parallel inner loops. Every kernel has a serial reference and an OpenMP
// variant; both accumulate each output element in the same order, so their
// results are bit-identical for any thread count.
namespace feed::kernels {

// Counts of (group, label, prediction) with group 0 <-> z = -1, 1 <-> z = +1.
// Index = group * 4 + label * 2 + prediction.
using ConfusionCounts = std::array<std::int64_t, 8>;

constexpr std::size_t confusion_index(int group, int label, int pred) noexcept
{
    return static_cast<std::size_t>(group * 4 + label * 2 + pred);
}

namespace serial {

// out[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n);
// out[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);
// out[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);

ConfusionCounts confusion(std::span<const int> group, std::span<const int> label, std::span<const int> pred);

} // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);

ConfusionCounts confusion(std::span<const int> group, std::span<const int> label, std::span<const int> pred);

} // namespace parallel

// Work (multiply-adds or elements) below which the dispatchers stay serial.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

bool openmp_enabled() noexcept;
int max_threads() noexcept;
void set_threads(int n) noexcept;

// Dispatchers used by the library.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n);
ConfusionCounts confusion(std::span<const int> group, std::span<const int> label, std::span<const int> pred);

} // namespace feed::kernels
