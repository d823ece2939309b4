#include "feed/kernels.hpp"

#include <algorithm>

namespace feed::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n)
{
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* c = out.data() + i * n;
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
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* c = out.data() + i * n;
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
    for (std::size_t i = 0; i < m; ++i) {
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
    ConfusionCounts counts{};
    for (std::size_t i = 0; i < group.size(); ++i) {
        ++counts[confusion_index(group[i], label[i], pred[i])];
    }
    return counts;
}

} // namespace feed::kernels::serial
