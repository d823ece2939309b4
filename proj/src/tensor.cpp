#include "feed/tensor.hpp"

#include "feed/error.hpp"

#include <cmath>
#include <numeric>

namespace feed {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
    }
}

Tensor Tensor::vector(std::vector<double> v)
{
    const auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
{
    return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t i) const
{
    if (i >= shape_.size()) throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(shape_));
    return shape_[i];
}

std::size_t Tensor::rows() const noexcept
{
    if (shape_.empty()) return 1;
    return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept
{
    return shape_.empty() ? 1 : shape_.back();
}

double Tensor::item() const
{
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const noexcept
{
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace feed
