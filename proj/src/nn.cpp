#include "feed/nn.hpp"

#include "feed/error.hpp"

#include <cmath>

namespace feed {

Tensor& ParamStore::get(const std::string& local)
{
    auto it = tensors_.find(local);
    if (it == tensors_.end()) throw ShapeError("parameter " + key(local) + " not found");
    return it->second;
}

const Tensor& ParamStore::get(const std::string& local) const
{
    auto it = tensors_.find(local);
    if (it == tensors_.end()) throw ShapeError("parameter " + key(local) + " not found");
    return it->second;
}

std::size_t ParamStore::numel() const
{
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
}

Mlp::Mlp(std::string name, std::vector<std::size_t> widths, Activation output, Rng& rng)
    : widths_(std::move(widths)), output_(output), params_(std::move(name))
{
    if (widths_.size() < 2) throw ShapeError("an MLP needs at least an input and an output width");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const std::size_t in = widths_[l], out = widths_[l + 1];
        // Glorot-uniform weights, zero biases.
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w(Shape{in, out});
        for (auto& v : w.data()) v = dist(rng);
        params_.set(weight_name(l), std::move(w));
        params_.set(bias_name(l), Tensor(Shape{out}, 0.0));
    }
}

Mlp Mlp::from_params(ParamStore params, Activation output)
{
    Mlp net;
    net.output_ = output;
    std::size_t l = 0;
    while (params.contains(weight_name(l))) {
        const Tensor& w = params.get(weight_name(l));
        if (w.rank() != 2) throw ShapeError("layer weight " + params.key(weight_name(l)) + " is not a matrix");
        if (l == 0) net.widths_.push_back(w.dim(0));
        else if (net.widths_.back() != w.dim(0)) throw ShapeError("layer widths of " + params.name() + " do not chain");
        net.widths_.push_back(w.dim(1));
        if (!params.contains(bias_name(l)) || params.get(bias_name(l)).numel() != w.dim(1)) {
            throw ShapeError("bias of layer " + std::to_string(l) + " in " + params.name() + " missing or misshaped");
        }
        ++l;
    }
    if (l == 0 || params.size() != 2 * l) throw ShapeError("parameter store " + params.name() + " is not an MLP");
    net.params_ = std::move(params);
    return net;
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x, Binding binding) const
{
    if (x.value().cols() != in_dim()) {
        throw ShapeError(params_.name() + ": expected input width " + std::to_string(in_dim()) + ", got " +
                         std::to_string(x.value().cols()));
    }
    auto bind = [&](const std::string& local) {
        return binding == Binding::trainable ? g.param(params_.key(local), params_.get(local))
                                             : g.constant(params_.get(local));
    };
    ad::Var h = x;
    for (std::size_t l = 0; l < layers(); ++l) {
        h = ad::add(ad::matmul(h, bind(weight_name(l))), bind(bias_name(l)));
        if (l + 1 < layers()) h = ad::relu(h);
    }
    switch (output_) {
    case Activation::relu: return ad::relu(h);
    case Activation::sigmoid: return ad::sigmoid(h);
    case Activation::softmax: return ad::softmax(h);
    default: return h;
    }
}

Tensor Mlp::predict(const Tensor& x) const
{
    ad::Graph g;
    return forward(g, g.constant(x), Binding::frozen).value();
}

} // namespace feed
