#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/errors.hpp"
#include "mta/rng.hpp"

namespace mta {

template <typename T>
struct NamedParameter {
  std::string name;
  ag::Var<T> var;
  bool trainable = true;
};

/// Owns every parameter leaf of a model in registration order. Names are
/// "<group>/<path>", e.g. "decoder/layer1/cross.wq".
template <typename T>
class ParameterSet {
 public:
  ag::Var<T> add(std::string name, Matrix<T> init, bool trainable) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name " + name);
    auto var = ag::Var<T>(std::move(init), trainable);
    params_.push_back({std::move(name), var, trainable});
    return var;
  }

  std::vector<NamedParameter<T>>& all() { return params_; }
  const std::vector<NamedParameter<T>>& all() const { return params_; }

  const NamedParameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.var.value().size();
    return n;
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

/// y = x W + b
template <typename T>
struct Linear {
  ag::Var<T> weight;  // [in x out]
  ag::Var<T> bias;    // [1 x out]

  static Linear create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, bool trainable = true, double gain = 1.0) {
    Linear l;
    l.weight = params.add(name + ".w", rng.normal_matrix<T>(in, out, gain / std::sqrt(double(in))), trainable);
    l.bias = params.add(name + ".b", Matrix<T>(1, out), trainable);
    return l;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::add_row(ag::matmul(x, weight), bias); }
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

/// Stack of Linear layers with GELU between them (none after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  static Mlp create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t hidden,
                    std::size_t out, int depth, Rng& rng, double last_gain = 1.0) {
    if (depth < 1) throw ConfigError(name + ": MLP depth must be >= 1");
    Mlp m;
    std::size_t width = in;
    for (int i = 0; i < depth; ++i) {
      const bool last = i + 1 == depth;
      const std::size_t next = last ? out : hidden;
      m.layers.push_back(Linear<T>::create(params, name + ".l" + std::to_string(i), width, next, rng, true,
                                           last ? last_gain : 1.0));
      width = next;
    }
    return m;
  }

  ag::Var<T> operator()(ag::Var<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = ag::gelu(x);
    }
    return x;
  }
};

template <typename T>
struct LayerNormParams {
  ag::Var<T> gamma, beta;

  static LayerNormParams create(ParameterSet<T>& params, const std::string& name, std::size_t width,
                                bool trainable = true) {
    return {params.add(name + ".gamma", Matrix<T>(1, width, T(1)), trainable),
            params.add(name + ".beta", Matrix<T>(1, width), trainable)};
  }
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

}  // namespace mta
