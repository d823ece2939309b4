#include "feed/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace feed::kernels {

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n)
{
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        double* c = out.data() + i * n;
        std::fill(c, c + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* br = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * br[j];
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n)
{
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        double* c = out.data() + i * n;
        std::fill(c, c + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* br = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * br[j];
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n)
{
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        const double* ar = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* br = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            out[i * n + j] = acc;
        }
    }
}

ConfusionCounts confusion(std::span<const int> group, std::span<const int> label, std::span<const int> pred)
{
    std::int64_t c0 = 0, c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0, c6 = 0, c7 = 0;
    const auto len = static_cast<std::ptrdiff_t>(group.size());
#pragma omp parallel for schedule(static) reduction(+ : c0, c1, c2, c3, c4, c5, c6, c7)
    for (std::ptrdiff_t i = 0; i < len; ++i) {
        switch (confusion_index(group[i], label[i], pred[i])) {
        case 0: ++c0; break;
        case 1: ++c1; break;
        case 2: ++c2; break;
        case 3: ++c3; break;
        case 4: ++c4; break;
        case 5: ++c5; break;
        case 6: ++c6; break;
        default: ++c7; break;
        }
    }
    return {c0, c1, c2, c3, c4, c5, c6, c7};
}

} // namespace parallel

bool openmp_enabled() noexcept
{
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() noexcept
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) noexcept
{
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

namespace {

bool go_parallel(std::size_t work) noexcept
{
    return openmp_enabled() && work >= kParallelThreshold && max_threads() > 1;
}

} // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n)
{
    if (go_parallel(m * k * n)) parallel::matmul(a, b, out, m, k, n);
    else serial::matmul(a, b, out, m, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n)
{
    if (go_parallel(m * k * n)) parallel::matmul_tn(a, b, out, m, k, n);
    else serial::matmul_tn(a, b, out, m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n)
{
    if (go_parallel(m * k * n)) parallel::matmul_nt(a, b, out, m, k, n);
    else serial::matmul_nt(a, b, out, m, k, n);
}

ConfusionCounts confusion(std::span<const int> group, std::span<const int> label, std::span<const int> pred)
{
    if (go_parallel(group.size())) return parallel::confusion(group, label, pred);
    return serial::confusion(group, label, pred);
}

} // namespace feed::kernels
