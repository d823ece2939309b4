#pragma once

#include "feed/autodiff.hpp"
#include "feed/rng.hpp"
#include "feed/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace feed {

// Named collection of trainable tensors. Full parameter keys are
// "<store name>/<local name>".
class ParamStore {
public:
    ParamStore() = default;
    explicit ParamStore(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }
    ad::ParamKey key(const std::string& local) const { return name_ + "/" + local; }

    void set(const std::string& local, Tensor value) { tensors_[local] = std::move(value); }
    bool contains(const std::string& local) const { return tensors_.count(local) != 0; }
    Tensor& get(const std::string& local);
    const Tensor& get(const std::string& local) const;

    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t numel() const;
    auto begin() noexcept { return tensors_.begin(); }
    auto end() noexcept { return tensors_.end(); }
    auto begin() const noexcept { return tensors_.begin(); }
    auto end() const noexcept { return tensors_.end(); }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::string name_;
    std::map<std::string, Tensor> tensors_;
};

enum class Activation { none, relu, sigmoid, softmax };

enum class Binding {
    trainable, // parameters registered on the graph, gradients flow
    frozen,    // parameters bound as constants
};

// Fully-connected network: ReLU between layers, chosen activation on the output.
class Mlp {
public:
    Mlp() = default;
    // widths = {in, hidden..., out}
    Mlp(std::string name, std::vector<std::size_t> widths, Activation output, Rng& rng);
    // Rebuild from a stored parameter set (e.g. loaded from a checkpoint).
    static Mlp from_params(ParamStore params, Activation output);

    ad::Var forward(ad::Graph& g, ad::Var x, Binding binding) const;
    // Forward pass on a throwaway graph, no gradients.
    Tensor predict(const Tensor& x) const;

    std::size_t in_dim() const { return widths_.front(); }
    std::size_t out_dim() const { return widths_.back(); }
    std::size_t layers() const { return widths_.size() - 1; }
    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    Activation output_activation() const noexcept { return output_; }

    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    static std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer); }
    static std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer); }

private:
    std::vector<std::size_t> widths_;
    Activation output_ = Activation::none;
    ParamStore params_;
};

} // namespace feed
