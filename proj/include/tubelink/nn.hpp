#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tubelink/rng.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Ordered registry of trainable leaves; the order is the checkpoint order.
class ParameterSet {
 public:
  void add(std::string name, const Tensor& t) {
    for (const auto& p : items_) {
      if (p.name == name) throw Error("ParameterSet: duplicate parameter " + name);
    }
    items_.push_back({std::move(name), t});
  }

  const std::vector<NamedParameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& p : items_) {
      if (p.name == name) return &p.tensor;
    }
    return nullptr;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  void zero_grad() const {
    for (const auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParameter> items_;
};

inline Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v), true);
}

// y = x·W (+ b). Weight is stored in×out.
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true, double gain = 1.0)
      : weight(uniform_tensor({in, out}, gain * std::sqrt(6.0 / static_cast<double>(in + out)), rng)) {
    if (with_bias) bias = Tensor::zeros({out}, true);
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const { return bias.defined() ? linear(x, weight, bias) : matmul(x, weight); }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".weight", weight);
    if (bias.defined()) set.add(prefix + ".bias", bias);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma(Shape{width}, std::vector<double>(width, 1.0), true), beta(Tensor::zeros({width}, true)) {}

  Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".gamma", gamma);
    set.add(prefix + ".beta", beta);
  }
};

// Two linear layers with a ReLU between them.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  FeedForward() = default;
  FeedForward(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    fc1.register_into(set, prefix + ".fc1");
    fc2.register_into(set, prefix + ".fc2");
  }
};

}  // namespace tubelink
