#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lcgan/error.hpp"
#include "lcgan/random.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

enum class LayerKind { kConvDown, kConvUp };
enum class Norm { kNone, kBatchNorm };
enum class Activation { kLeakyRelu, kRelu, kSoftmax, kSigmoid };
enum class Mode { kTrain, kEval };

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kInitStd = 0.02;

/// One block: convolution, optional batch-norm, optional dropout, activation.
struct LayerSpec {
  LayerKind kind = LayerKind::kConvDown;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  Norm norm = Norm::kNone;
  Activation activation = Activation::kRelu;
  double dropout = 0.0;  // 0 or 0.5
  std::optional<int> skip_source;  // 1-based index of the block whose output is concatenated

  /// Convolutions feeding batch-norm carry no bias.
  bool has_bias() const { return norm == Norm::kNone; }

  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(in_channels) * out_channels * kernel * kernel;
  }

  bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string name, std::vector<int> dims, T fill = T{0})
      : name(std::move(name)), dims(std::move(dims)) {
    std::size_t n = 1;
    for (int d : this->dims) n *= static_cast<std::size_t>(d);
    value.assign(n, fill);
    grad.assign(n, T{0});
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

namespace kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int channels;  // channels of the strided ("image") side
  int h, w;      // image side extents
  int oh, ow;    // strided side extents
  int k, s, p;
};

/// Unfolds image patches into a (channels*k*k) x (oh*ow) matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t P = static_cast<std::size_t>(g.oh) * g.ow;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * P;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into the image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t P = static_cast<std::size_t>(g.oh) * g.ow;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * P;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.ow;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels

/// A single network block with cached activations for backpropagation.
/// The cache holds the most recent forward pass only.
template <typename T>
class Block {
 public:
  Block(const LayerSpec& spec, const std::string& prefix) : spec_(spec) {
    const int kk = spec.kernel;
    if (spec.kind == LayerKind::kConvDown) {
      weight_ = Parameter<T>(prefix + "weight", {spec.out_channels, spec.in_channels, kk, kk});
    } else {
      weight_ = Parameter<T>(prefix + "weight", {spec.in_channels, spec.out_channels, kk, kk});
    }
    if (spec.has_bias()) bias_ = Parameter<T>(prefix + "bias", {spec.out_channels});
    if (spec.norm == Norm::kBatchNorm) {
      gamma_ = Parameter<T>(prefix + "bn.weight", {spec.out_channels}, T{1});
      beta_ = Parameter<T>(prefix + "bn.bias", {spec.out_channels});
      running_mean_ = Parameter<T>(prefix + "bn.running_mean", {spec.out_channels});
      running_var_ = Parameter<T>(prefix + "bn.running_var", {spec.out_channels}, T{1});
      running_mean_.grad.clear();
      running_var_.grad.clear();
    }
  }

  const LayerSpec& spec() const { return spec_; }

  /// Kernels ~ N(0, 0.02); batch-norm scale ~ N(1, 0.02), shift 0; bias 0.
  void init(Rng& rng) {
    for (auto& v : weight_.value) v = static_cast<T>(rng.normal(0.0, kInitStd));
    if (spec_.has_bias()) std::fill(bias_.value.begin(), bias_.value.end(), T{0});
    if (spec_.norm == Norm::kBatchNorm) {
      for (auto& v : gamma_.value) v = static_cast<T>(rng.normal(1.0, kInitStd));
      std::fill(beta_.value.begin(), beta_.value.end(), T{0});
      std::fill(running_mean_.value.begin(), running_mean_.value.end(), T{0});
      std::fill(running_var_.value.begin(), running_var_.value.end(), T{1});
    }
  }

  Shape output_shape(const Shape& in) const {
    if (spec_.kind == LayerKind::kConvDown) {
      return {in.n, spec_.out_channels, (in.h + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1,
              (in.w + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1};
    }
    return {in.n, spec_.out_channels, (in.h - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel,
            (in.w - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel};
  }

  /// `dropout_rng` must be non-null when dropout is active.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool dropout_active, Rng* dropout_rng) {
    if (x.shape().c != spec_.in_channels) {
      throw ShapeError("block expects " + std::to_string(spec_.in_channels) +
                       " input channels, got " + std::to_string(x.shape().c));
    }
    input_ = x;
    Tensor<T> z = convolve(x);

    batch_stats_ = mode == Mode::kTrain;
    if (spec_.norm == Norm::kBatchNorm) batch_norm_forward(z);

    mask_.clear();
    if (spec_.dropout > 0.0 && dropout_active) {
      if (!dropout_rng) throw Error("dropout requires a random stream");
      const T keep_scale = static_cast<T>(1.0 / (1.0 - spec_.dropout));
      mask_.resize(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        mask_[i] = dropout_rng->uniform() >= spec_.dropout ? keep_scale : T{0};
        z[i] *= mask_[i];
      }
    }

    activate(z);
    output_ = z;
    return z;
  }

  /// Returns dL/dinput. Parameter gradients accumulate only if `param_grads`.
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads) {
    if (dy.shape() != output_.shape()) {
      throw ShapeError("gradient shape " + dy.shape().str() + " does not match output " +
                       output_.shape().str());
    }
    Tensor<T> g = activation_backward(dy);
    if (!mask_.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
    }
    if (spec_.norm == Norm::kBatchNorm) batch_norm_backward(g, param_grads);
    return convolve_backward(g, param_grads);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out{&weight_};
    if (spec_.has_bias()) out.push_back(&bias_);
    if (spec_.norm == Norm::kBatchNorm) {
      out.push_back(&gamma_);
      out.push_back(&beta_);
    }
    return out;
  }

  std::vector<Parameter<T>*> buffers() {
    if (spec_.norm != Norm::kBatchNorm) return {};
    return {&running_mean_, &running_var_};
  }

  const Tensor<T>& output() const { return output_; }

 private:
  kernels::ConvGeometry geometry(const Shape& in, const Shape& out) const {
    if (spec_.kind == LayerKind::kConvDown) {
      return {in.c, in.h, in.w, out.h, out.w, spec_.kernel, spec_.stride, spec_.padding};
    }
    return {out.c, out.h, out.w, in.h, in.w, spec_.kernel, spec_.stride, spec_.padding};
  }

  Tensor<T> convolve(const Tensor<T>& x) {
    using namespace kernels;
    const Shape in = x.shape();
    const Shape os = output_shape(in);
    if (os.h <= 0 || os.w <= 0) throw ShapeError("input " + in.str() + " too small for block");
    Tensor<T> z(os);
    const auto g = geometry(in, os);
    const int kk = spec_.kernel * spec_.kernel;
    if (spec_.kind == LayerKind::kConvDown) {
      const int K = in.c * kk;
      const int P = os.h * os.w;
      cols_.resize(static_cast<std::size_t>(K) * P);
      ConstMatMap<T> W(weight_.value.data(), os.c, K);
      for (int n = 0; n < in.n; ++n) {
        im2col(x.sample(n), g, cols_.data());
        MatMap<T>(z.sample(n), os.c, P).noalias() = W * ConstMatMap<T>(cols_.data(), K, P);
      }
    } else {
      const int K = os.c * kk;
      const int P = in.h * in.w;
      cols_.resize(static_cast<std::size_t>(K) * P);
      ConstMatMap<T> W(weight_.value.data(), in.c, K);
      for (int n = 0; n < in.n; ++n) {
        MatMap<T>(cols_.data(), K, P).noalias() = W.transpose() * ConstMatMap<T>(x.sample(n), in.c, P);
        col2im(cols_.data(), g, z.sample(n));
      }
    }
    if (spec_.has_bias()) {
      for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
          T* p = z.channel(n, c);
          const T b = bias_.value[c];
          for (std::size_t i = 0; i < os.plane(); ++i) p[i] += b;
        }
      }
    }
    return z;
  }

  Tensor<T> convolve_backward(const Tensor<T>& dz, bool param_grads) {
    using namespace kernels;
    const Shape in = input_.shape();
    const Shape os = dz.shape();
    const auto g = geometry(in, os);
    const int kk = spec_.kernel * spec_.kernel;
    Tensor<T> dx(in);
    if (spec_.kind == LayerKind::kConvDown) {
      const int K = in.c * kk;
      const int P = os.h * os.w;
      cols_.resize(static_cast<std::size_t>(K) * P);
      std::vector<T> dcols(static_cast<std::size_t>(K) * P);
      ConstMatMap<T> W(weight_.value.data(), os.c, K);
      MatMap<T> dW(weight_.grad.data(), os.c, K);
      for (int n = 0; n < in.n; ++n) {
        ConstMatMap<T> dY(dz.sample(n), os.c, P);
        if (param_grads) {
          im2col(input_.sample(n), g, cols_.data());
          dW.noalias() += dY * ConstMatMap<T>(cols_.data(), K, P).transpose();
        }
        MatMap<T>(dcols.data(), K, P).noalias() = W.transpose() * dY;
        col2im(dcols.data(), g, dx.sample(n));
      }
    } else {
      const int K = os.c * kk;
      const int P = in.h * in.w;
      cols_.resize(static_cast<std::size_t>(K) * P);
      ConstMatMap<T> W(weight_.value.data(), in.c, K);
      MatMap<T> dW(weight_.grad.data(), in.c, K);
      for (int n = 0; n < in.n; ++n) {
        im2col(dz.sample(n), g, cols_.data());
        ConstMatMap<T> dcols(cols_.data(), K, P);
        MatMap<T>(dx.sample(n), in.c, P).noalias() = W * dcols;
        if (param_grads) {
          dW.noalias() += ConstMatMap<T>(input_.sample(n), in.c, P) * dcols.transpose();
        }
      }
    }
    if (param_grads && spec_.has_bias()) {
      for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
          const T* p = dz.channel(n, c);
          double s = 0.0;
          for (std::size_t i = 0; i < os.plane(); ++i) s += p[i];
          bias_.grad[c] += static_cast<T>(s);
        }
      }
    }
    return dx;
  }

  void batch_norm_forward(Tensor<T>& z) {
    const Shape s = z.shape();
    const double count = static_cast<double>(s.n) * s.plane();
    xhat_ = Tensor<T>(s);
    invstd_.assign(s.c, T{0});
    for (int c = 0; c < s.c; ++c) {
      double mean;
      double var;
      if (batch_stats_) {
        double sum = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const T* p = z.channel(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
        }
        mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const T* p = z.channel(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            const double d = p[i] - mean;
            sq += d * d;
          }
        }
        var = sq / count;
        const double unbiased = count > 1 ? sq / (count - 1) : var;
        running_mean_.value[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean_.value[c] +
                                                kBatchNormMomentum * mean);
        running_var_.value[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_var_.value[c] +
                                               kBatchNormMomentum * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
      invstd_[c] = static_cast<T>(inv);
      const T gm = gamma_.value[c];
      const T bt = beta_.value[c];
      for (int n = 0; n < s.n; ++n) {
        T* p = z.channel(n, c);
        T* xh = xhat_.channel(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          xh[i] = static_cast<T>((p[i] - mean) * inv);
          p[i] = gm * xh[i] + bt;
        }
      }
    }
  }

  void batch_norm_backward(Tensor<T>& g, bool param_grads) {
    const Shape s = g.shape();
    const double count = static_cast<double>(s.n) * s.plane();
    for (int c = 0; c < s.c; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* dy = g.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
        }
      }
      if (param_grads) {
        gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
        beta_.grad[c] += static_cast<T>(sum_dy);
      }
      const double gm = gamma_.value[c];
      const double inv = invstd_[c];
      for (int n = 0; n < s.n; ++n) {
        T* dy = g.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          if (batch_stats_) {
            dy[i] = static_cast<T>(gm * inv / count *
                                   (count * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
          } else {
            dy[i] = static_cast<T>(gm * inv * dy[i]);
          }
        }
      }
    }
  }

  void activate(Tensor<T>& z) const {
    switch (spec_.activation) {
      case Activation::kLeakyRelu:
        for (auto& v : z.vec()) v = v > T{0} ? v : static_cast<T>(kLeakySlope) * v;
        break;
      case Activation::kRelu:
        for (auto& v : z.vec()) v = v > T{0} ? v : T{0};
        break;
      case Activation::kSigmoid:
        for (auto& v : z.vec()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        break;
      case Activation::kSoftmax: {
        const Shape s = z.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n) {
          T* base = z.sample(n);
          for (std::size_t i = 0; i < plane; ++i) {
            T mx = base[i];
            for (int c = 1; c < s.c; ++c) mx = std::max(mx, base[c * plane + i]);
            T sum{0};
            for (int c = 0; c < s.c; ++c) {
              T& v = base[c * plane + i];
              v = std::exp(v - mx);
              sum += v;
            }
            for (int c = 0; c < s.c; ++c) base[c * plane + i] /= sum;
          }
        }
        break;
      }
    }
  }

  Tensor<T> activation_backward(const Tensor<T>& dy) const {
    Tensor<T> g(dy.shape());
    const auto& y = output_.vec();
    switch (spec_.activation) {
      case Activation::kLeakyRelu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] = y[i] > T{0} ? dy[i] : static_cast<T>(kLeakySlope) * dy[i];
        }
        break;
      case Activation::kRelu:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = y[i] > T{0} ? dy[i] : T{0};
        break;
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = dy[i] * y[i] * (T{1} - y[i]);
        break;
      case Activation::kSoftmax: {
        const Shape s = dy.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n) {
          const T* yp = output_.sample(n);
          const T* dp = dy.sample(n);
          T* gp = g.sample(n);
          for (std::size_t i = 0; i < plane; ++i) {
            T dot{0};
            for (int c = 0; c < s.c; ++c) dot += yp[c * plane + i] * dp[c * plane + i];
            for (int c = 0; c < s.c; ++c) {
              gp[c * plane + i] = yp[c * plane + i] * (dp[c * plane + i] - dot);
            }
          }
        }
        break;
      }
    }
    return g;
  }

  LayerSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Parameter<T> running_mean_;
  Parameter<T> running_var_;

  Tensor<T> input_;
  Tensor<T> xhat_;
  Tensor<T> output_;
  std::vector<T> invstd_;
  std::vector<T> mask_;
  std::vector<T> cols_;
  bool batch_stats_ = true;
};

}  // namespace lcgan
