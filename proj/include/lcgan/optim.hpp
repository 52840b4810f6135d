#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lcgan/error.hpp"
#include "lcgan/layers.hpp"

namespace lcgan {

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double eps = 1e-8;

  bool operator==(const AdamSettings&) const = default;
};

struct SgdSettings {
  double lr = 2e-4;

  bool operator==(const SgdSettings&) const = default;
};

/// Adam with bias correction; moment buffers are parallel to the parameter list.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamSettings s) : params_(std::move(params)), s_(s) {
    if (!(s.lr > 0.0)) throw ConfigError("learning rate must be positive");
    for (auto* p : params_) {
      m_.emplace_back(p->size(), T{0});
      v_.emplace_back(p->size(), T{0});
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        const double mi = s_.beta1 * m[i] + (1.0 - s_.beta1) * g;
        const double vi = s_.beta2 * v[i] + (1.0 - s_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = s_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + s_.eps);
        p.value[i] = static_cast<T>(p.value[i] - update);
      }
    }
  }

  const AdamSettings& settings() const { return s_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamSettings s_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t t_ = 0;
};

/// Plain gradient descent, no momentum.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>*> params, SgdSettings s) : params_(std::move(params)), s_(s) {
    if (!(s.lr > 0.0)) throw ConfigError("learning rate must be positive");
  }

  void step() {
    for (auto* p : params_) {
      for (std::size_t i = 0; i < p->size(); ++i) {
        p->value[i] = static_cast<T>(p->value[i] - s_.lr * p->grad[i]);
      }
    }
  }

  const SgdSettings& settings() const { return s_; }

 private:
  std::vector<Parameter<T>*> params_;
  SgdSettings s_;
};

}  // namespace lcgan
