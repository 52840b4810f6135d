#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lcgan/error.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

/// Probabilities are clamped to [eps, 1 - eps] before any logarithm.
inline constexpr double kProbEps = 1e-7;

enum class AdversarialForm {
  kNonSaturating,  // -mean log D(X, G(X))
  kLiteral,        //  mean log(1 - D(X, G(X)))
};

enum class L2Reduction {
  kPerTileMean,  // norm per tile and class, then mean over the batch
  kJoint,        // one norm per class over the whole batch
};

struct LossConfig {
  double lambda = 100.0;
  AdversarialForm adversarial_form = AdversarialForm::kNonSaturating;
  L2Reduction l2_reduction = L2Reduction::kPerTileMean;
  int num_classes = kNumClasses;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
    if (num_classes < 2) throw ConfigError("need at least two classes");
  }
};

struct LossValue {
  double total = 0.0;
  double adversarial = 0.0;
  double reconstruction = 0.0;
};

struct ScoreLoss {
  double value = 0.0;
  std::size_t clamped = 0;  // scores pushed back into [eps, 1 - eps]
};

namespace detail {

inline double clamp_prob(double p, std::size_t& clamped) {
  if (p < kProbEps) {
    ++clamped;
    return kProbEps;
  }
  if (p > 1.0 - kProbEps) {
    ++clamped;
    return 1.0 - kProbEps;
  }
  return p;
}

inline std::vector<double> inverse_weights(std::span<const double> w, int channels) {
  if (static_cast<int>(w.size()) != channels) {
    throw ShapeError("expected " + std::to_string(channels) + " class weights, got " +
                     std::to_string(w.size()));
  }
  std::vector<double> inv(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (!(w[c] > 0.0) || !std::isfinite(w[c])) {
      throw DegenerateWeightsError("class weight " + std::to_string(c) + " is not positive");
    }
    inv[c] = 1.0 / w[c];
  }
  return inv;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace detail

/// -mean log(real) - mean log(1 - fake). Minimizing this is the
/// discriminator's side of the conditional adversarial objective.
/// Gradients w.r.t. the scores are written when the output spans are
/// non-empty; clamped scores get zero gradient.
template <typename T>
ScoreLoss d_loss(std::span<const T> real, std::span<const T> fake, std::span<T> d_real = {},
                 std::span<T> d_fake = {}) {
  if (real.empty() || fake.empty()) throw ShapeError("empty score grid");
  ScoreLoss out;
  double sr = 0.0;
  const double nr = static_cast<double>(real.size());
  for (std::size_t i = 0; i < real.size(); ++i) {
    const std::size_t before = out.clamped;
    const double s = detail::clamp_prob(real[i], out.clamped);
    sr += std::log(s);
    if (!d_real.empty()) d_real[i] = out.clamped != before ? T{0} : static_cast<T>(-1.0 / (nr * s));
  }
  double sf = 0.0;
  const double nf = static_cast<double>(fake.size());
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const std::size_t before = out.clamped;
    const double s = detail::clamp_prob(fake[i], out.clamped);
    sf += std::log(1.0 - s);
    if (!d_fake.empty()) {
      d_fake[i] = out.clamped != before ? T{0} : static_cast<T>(1.0 / (nf * (1.0 - s)));
    }
  }
  out.value = -sr / nr - sf / nf;
  return out;
}

/// Generator adversarial term; both forms decrease as fake scores rise.
template <typename T>
ScoreLoss g_adv_loss(std::span<const T> fake, AdversarialForm form = AdversarialForm::kNonSaturating,
                     std::span<T> d_fake = {}) {
  if (fake.empty()) throw ShapeError("empty score grid");
  ScoreLoss out;
  const double n = static_cast<double>(fake.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const std::size_t before = out.clamped;
    const double s = detail::clamp_prob(fake[i], out.clamped);
    const bool clamped = out.clamped != before;
    if (form == AdversarialForm::kNonSaturating) {
      acc -= std::log(s);
      if (!d_fake.empty()) d_fake[i] = clamped ? T{0} : static_cast<T>(-1.0 / (n * s));
    } else {
      acc += std::log(1.0 - s);
      if (!d_fake.empty()) d_fake[i] = clamped ? T{0} : static_cast<T>(-1.0 / (n * (1.0 - s)));
    }
  }
  out.value = acc / n;
  return out;
}

/// Class-weighted L2:  sum_c (1/w_c) ||Y_c - Yhat_c||_2 / sum_c (1/w_c),
/// with the norm taken over one class channel's pixels.
/// Inputs are N x C x H x W; `grad` (if given) receives dL/dYhat.
template <typename T>
double weighted_l2(const Tensor<T>& y, const Tensor<T>& yhat, std::span<const double> weights,
                   L2Reduction reduction = L2Reduction::kPerTileMean, Tensor<T>* grad = nullptr) {
  detail::check_same_shape(y, yhat);
  const Shape s = y.shape();
  const auto inv = detail::inverse_weights(weights, s.c);
  double inv_sum = 0.0;
  for (double v : inv) inv_sum += v;
  if (grad) *grad = Tensor<T>(s);

  const std::size_t plane = s.plane();
  const int groups = reduction == L2Reduction::kPerTileMean ? s.n : 1;
  const int per_group = reduction == L2Reduction::kPerTileMean ? 1 : s.n;
  double total = 0.0;
  for (int g = 0; g < groups; ++g) {
    double loss = 0.0;
    for (int c = 0; c < s.c; ++c) {
      double sq = 0.0;
      for (int k = 0; k < per_group; ++k) {
        const int n = g * per_group + k;
        const T* a = y.channel(n, c);
        const T* b = yhat.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
          sq += d * d;
        }
      }
      const double norm = std::sqrt(sq);
      loss += inv[c] * norm;
      if (grad && norm > 0.0) {
        const double scale = inv[c] / (inv_sum * norm * groups);
        for (int k = 0; k < per_group; ++k) {
          const int n = g * per_group + k;
          const T* a = y.channel(n, c);
          const T* b = yhat.channel(n, c);
          T* d = grad->channel(n, c);
          for (std::size_t i = 0; i < plane; ++i) {
            d[i] = static_cast<T>(scale * (static_cast<double>(b[i]) - static_cast<double>(a[i])));
          }
        }
      }
    }
    total += loss / inv_sum;
  }
  return total / groups;
}

template <typename T>
double weighted_l2(const Tensor<T>& y, const Tensor<T>& yhat, const ClassWeights& w,
                   L2Reduction reduction = L2Reduction::kPerTileMean, Tensor<T>* grad = nullptr) {
  return weighted_l2(y, yhat, std::span<const double>(w.w), reduction, grad);
}

/// Generator objective: adversarial + lambda * reconstruction.
inline LossValue g_total_loss(double adversarial, double reconstruction, const LossConfig& cfg = {}) {
  if (!std::isfinite(adversarial) || !std::isfinite(reconstruction)) {
    throw Error("non-finite generator loss component");
  }
  return {adversarial + cfg.lambda * reconstruction, adversarial, reconstruction};
}

/// -mean over pixels of sum_c (y_c / w_c) log(clamp(yhat_c)).
/// The mean runs over all N*H*W pixels.
template <typename T>
double weighted_cross_entropy(const Tensor<T>& y_true, const Tensor<T>& y_pred,
                              std::span<const double> weights, Tensor<T>* grad = nullptr) {
  detail::check_same_shape(y_true, y_pred);
  const Shape s = y_true.shape();
  const auto inv = detail::inverse_weights(weights, s.c);
  if (grad) *grad = Tensor<T>(s);
  const std::size_t plane = s.plane();
  const double pixels = static_cast<double>(s.n) * plane;
  std::size_t clamped = 0;
  double acc = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* t = y_true.channel(n, c);
      const T* p = y_pred.channel(n, c);
      T* d = grad ? grad->channel(n, c) : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        if (t[i] == T{0}) continue;
        // Lower clamp only: log(1) is already finite.
        const bool low = p[i] < kProbEps;
        const double q = low ? kProbEps : static_cast<double>(p[i]);
        clamped += low;
        acc += t[i] * inv[c] * std::log(q);
        if (d && !low) d[i] = static_cast<T>(-t[i] * inv[c] / (q * pixels));
      }
    }
  }
  return -acc / pixels;
}

template <typename T>
double weighted_cross_entropy(const Tensor<T>& y_true, const Tensor<T>& y_pred,
                              const ClassWeights& w, Tensor<T>* grad = nullptr) {
  return weighted_cross_entropy(y_true, y_pred, std::span<const double>(w.w), grad);
}

}  // namespace lcgan
