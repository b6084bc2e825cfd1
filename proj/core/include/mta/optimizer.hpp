#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mta/errors.hpp"
#include "mta/params.hpp"

namespace mta {

struct AdamWConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

/// First/second moments of one trainable parameter.
template <typename T>
struct MomentState {
  std::string name;
  Matrix<T> m, v;
};

/// Adaptive moments with decoupled weight decay. State is created for the
/// trainable parameters only, in registration order.
template <typename T>
class AdamW {
 public:
  AdamW(const ParameterSet<T>& params, AdamWConfig config) : config_(config) {
    for (const auto& p : params.all()) {
      if (!p.trainable) continue;
      const auto& v = p.var.value();
      state_.push_back({p.name, Matrix<T>(v.rows(), v.cols()), Matrix<T>(v.rows(), v.cols())});
    }
  }

  void step(ParameterSet<T>& params) {
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(step_)), c2 = 1.0 - std::pow(b2, double(step_));
    std::size_t s = 0;
    for (auto& p : params.all()) {
      if (!p.trainable) continue;
      auto& st = state_.at(s++);
      if (st.name != p.name) throw ConfigError("optimizer state does not match parameter " + p.name);
      auto& value = p.var.mutable_value();
      const auto& grad = p.var.grad();
      const bool has_grad = grad.size() == value.size();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = has_grad ? double(grad[i]) : 0.0;
        const double m = b1 * double(st.m[i]) + (1.0 - b1) * g;
        const double v = b2 * double(st.v[i]) + (1.0 - b2) * g * g;
        st.m[i] = T(m);
        st.v[i] = T(v);
        const double update = (m / c1) / (std::sqrt(v / c2) + config_.epsilon) + config_.weight_decay * double(value[i]);
        value[i] = T(double(value[i]) - config_.learning_rate * update);
      }
    }
    if (s != state_.size()) throw ConfigError("optimizer state has parameters the model lacks");
  }

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<MomentState<T>>& state() const { return state_; }

  /// Restores moments and step count; names and shapes must match exactly.
  void restore(std::vector<MomentState<T>> state, std::int64_t step) {
    if (state.size() != state_.size()) throw ConfigError("optimizer state size mismatch");
    for (std::size_t i = 0; i < state.size(); ++i) {
      if (state[i].name != state_[i].name || !state[i].m.same_shape(state_[i].m) ||
          !state[i].v.same_shape(state_[i].v))
        throw ConfigError("optimizer state mismatch at " + state_[i].name);
    }
    state_ = std::move(state);
    step_ = step;
  }

 private:
  AdamWConfig config_;
  std::vector<MomentState<T>> state_;
  std::int64_t step_ = 0;
};

}  // namespace mta
