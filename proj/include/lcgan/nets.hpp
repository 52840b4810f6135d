#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"
#include "lcgan/layers.hpp"
#include "lcgan/random.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

inline constexpr int kGeneratorInputChannels = 4;
inline constexpr int kGeneratorOutputChannels = 6;
inline constexpr int kDiscriminatorInputChannels = kGeneratorInputChannels + kGeneratorOutputChannels;
inline constexpr int kNetworkInputSize = 256;

/// Ordered block list plus the width multiplier it was built with.
struct NetworkSpec {
  std::string name;
  double width_multiplier = 1.0;
  int input_channels = 0;
  int input_size = kNetworkInputSize;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkSpec&) const = default;
};

namespace detail {

/// base * m, which must be a positive integer.
inline int scaled_channels(int base, double m) {
  const double v = base * m;
  const double r = std::round(v);
  if (r < 1.0 || std::abs(v - r) > 1e-9) {
    throw ConfigError("width multiplier " + std::to_string(m) + " gives non-integral channel count " +
                      std::to_string(v) + " for base " + std::to_string(base));
  }
  return static_cast<int>(r);
}

inline void check_multiplier(double m) {
  if (!(m >= 0.125) || !std::isfinite(m)) {
    throw ConfigError("width multiplier must be >= 1/8, got " + std::to_string(m));
  }
}

}  // namespace detail

/// 14-block U-Net: 7 strided convolutions down to 2x2, 7 transposed
/// convolutions back to 256x256. Decoder blocks 9-14 concatenate the outputs
/// of encoder blocks 6-1.
inline NetworkSpec generator_spec(double m = 1.0) {
  detail::check_multiplier(m);
  auto ch = [m](int base) { return detail::scaled_channels(base, m); };
  using enum LayerKind;
  using enum Norm;
  using enum Activation;
  NetworkSpec s;
  s.name = "generator";
  s.width_multiplier = m;
  s.input_channels = kGeneratorInputChannels;

  const int enc[7] = {ch(64), ch(128), ch(256), ch(512), ch(512), ch(512), ch(512)};
  int in = kGeneratorInputChannels;
  for (int i = 0; i < 7; ++i) {
    LayerSpec l;
    l.kind = kConvDown;
    l.in_channels = in;
    l.out_channels = enc[i];
    l.norm = (i == 0 || i == 6) ? kNone : kBatchNorm;
    l.activation = i == 6 ? kRelu : kLeakyRelu;
    s.layers.push_back(l);
    in = enc[i];
  }
  const int dec[6] = {ch(512), ch(512), ch(512), ch(256), ch(128), ch(64)};
  for (int i = 0; i < 6; ++i) {
    LayerSpec l;
    l.kind = kConvUp;
    l.in_channels = in;
    l.out_channels = dec[i];
    l.norm = kBatchNorm;
    l.activation = kRelu;
    l.dropout = (i == 1 || i == 2) ? 0.5 : 0.0;  // blocks 9 and 10
    if (i > 0) {
      const int src = 7 - i;  // block 9 <- 6, ..., block 13 <- 2
      l.skip_source = src;
      l.in_channels = in + enc[src - 1];
    }
    s.layers.push_back(l);
    in = dec[i];
  }
  LayerSpec out;
  out.kind = kConvUp;
  out.in_channels = in + enc[0];
  out.out_channels = kGeneratorOutputChannels;
  out.norm = kNone;
  out.activation = kSoftmax;
  out.skip_source = 1;
  s.layers.push_back(out);
  return s;
}

/// 5-block patch discriminator over the (image, mask) concatenation; emits
/// an 8x8 grid of sigmoid scores.
inline NetworkSpec discriminator_spec(double m = 1.0) {
  detail::check_multiplier(m);
  auto ch = [m](int base) { return detail::scaled_channels(base, m); };
  NetworkSpec s;
  s.name = "discriminator";
  s.width_multiplier = m;
  s.input_channels = kDiscriminatorInputChannels;
  const int outs[5] = {ch(64), ch(128), ch(256), ch(512), 1};
  int in = kDiscriminatorInputChannels;
  for (int i = 0; i < 5; ++i) {
    LayerSpec l;
    l.kind = LayerKind::kConvDown;
    l.in_channels = in;
    l.out_channels = outs[i];
    l.norm = (i == 0 || i == 4) ? Norm::kNone : Norm::kBatchNorm;
    l.activation = i == 4 ? Activation::kSigmoid : Activation::kLeakyRelu;
    s.layers.push_back(l);
    in = outs[i];
  }
  return s;
}

struct ParameterCount {
  std::int64_t weight_only = 0;  // convolution kernels
  std::int64_t total = 0;        // plus biases and batch-norm affine terms

  bool operator==(const ParameterCount&) const = default;
};

inline ParameterCount count_parameters(const NetworkSpec& spec) {
  ParameterCount pc;
  for (const auto& l : spec.layers) {
    pc.weight_only += l.weight_count();
    pc.total += l.weight_count();
    if (l.has_bias()) pc.total += l.out_channels;
    if (l.norm == Norm::kBatchNorm) pc.total += 2 * l.out_channels;
  }
  return pc;
}

inline nlohmann::json to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["kind"] = l.kind == LayerKind::kConvDown ? "conv-down" : "conv-up";
  j["in_channels"] = l.in_channels;
  j["out_channels"] = l.out_channels;
  j["kernel"] = l.kernel;
  j["stride"] = l.stride;
  j["padding"] = l.padding;
  j["norm"] = l.norm == Norm::kBatchNorm ? "batch-norm" : "none";
  static const char* acts[] = {"leaky-relu", "relu", "softmax", "sigmoid"};
  j["activation"] = acts[static_cast<int>(l.activation)];
  j["dropout"] = l.dropout;
  j["skip_source"] = l.skip_source ? nlohmann::json(*l.skip_source) : nlohmann::json(nullptr);
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv-down") {
    l.kind = LayerKind::kConvDown;
  } else if (kind == "conv-up") {
    l.kind = LayerKind::kConvUp;
  } else {
    throw ConfigError("unknown layer kind " + kind);
  }
  l.in_channels = j.at("in_channels").get<int>();
  l.out_channels = j.at("out_channels").get<int>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.norm = j.at("norm").get<std::string>() == "batch-norm" ? Norm::kBatchNorm : Norm::kNone;
  const auto act = j.at("activation").get<std::string>();
  if (act == "leaky-relu") {
    l.activation = Activation::kLeakyRelu;
  } else if (act == "relu") {
    l.activation = Activation::kRelu;
  } else if (act == "softmax") {
    l.activation = Activation::kSoftmax;
  } else if (act == "sigmoid") {
    l.activation = Activation::kSigmoid;
  } else {
    throw ConfigError("unknown activation " + act);
  }
  l.dropout = j.at("dropout").get<double>();
  if (!j.at("skip_source").is_null()) l.skip_source = j.at("skip_source").get<int>();
  return l;
}

inline nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["width_multiplier"] = s.width_multiplier;
  j["input_channels"] = s.input_channels;
  j["input_size"] = s.input_size;
  for (const auto& l : s.layers) j["layers"].push_back(to_json(l));
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.name = j.at("name").get<std::string>();
  s.width_multiplier = j.at("width_multiplier").get<double>();
  s.input_channels = j.at("input_channels").get<int>();
  s.input_size = j.at("input_size").get<int>();
  for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
  return s;
}

/// Executable network built from a NetworkSpec.
template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      if (l.kernel != 4 || l.stride != 2 || l.padding != 1) {
        throw ConfigError("blocks must use 4x4 kernels with stride 2 and padding 1");
      }
      if (l.dropout != 0.0 && l.dropout != 0.5) throw ConfigError("dropout must be 0 or 0.5");
      if (l.skip_source && (*l.skip_source < 1 || *l.skip_source >= static_cast<int>(i))) {
        throw ConfigError("skip source must reference an earlier, non-adjacent block");
      }
      blocks_.emplace_back(l, "block" + std::to_string(i + 1) + ".");
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  std::size_t depth() const { return blocks_.size(); }
  Block<T>& block(std::size_t i) { return blocks_[i]; }

  void init(std::uint64_t seed, std::string_view stream) {
    Rng rng(seed, stream);
    for (auto& b : blocks_) b.init(rng);
  }

  /// Dropout is active in train mode, and in eval mode only if
  /// `dropout_at_eval` is set.
  void set_dropout_at_eval(bool on) { dropout_at_eval_ = on; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* dropout_rng = nullptr) {
    const Shape s = x.shape();
    if (s.c != spec_.input_channels || s.h != spec_.input_size || s.w != spec_.input_size) {
      throw ShapeError(spec_.name + " expects N x " + std::to_string(spec_.input_channels) + " x " +
                       std::to_string(spec_.input_size) + " x " + std::to_string(spec_.input_size) +
                       " input, got " + s.str());
    }
    const bool dropout = mode == Mode::kTrain || dropout_at_eval_;
    input_shapes_.clear();
    output_shapes_.clear();
    const Tensor<T>* prev = &x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      Tensor<T> in;
      const auto& l = spec_.layers[i];
      if (l.skip_source) {
        in = concat_channels(*prev, blocks_[*l.skip_source - 1].output());
      } else {
        in = *prev;
      }
      input_shapes_.push_back(in.shape());
      blocks_[i].forward(in, mode, dropout, dropout_rng);
      output_shapes_.push_back(blocks_[i].output().shape());
      prev = &blocks_[i].output();
    }
    return *prev;
  }

  /// Backpropagates dL/doutput of the last forward pass; returns dL/dinput.
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads = true) {
    std::vector<Tensor<T>> grads(blocks_.size());
    grads.back() = dy;
    Tensor<T> dx;
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      if (grads[i].empty()) grads[i] = Tensor<T>(blocks_[i].output().shape());
      Tensor<T> din = blocks_[i].backward(grads[i], param_grads);
      if (i == 0) {
        dx = std::move(din);
        break;
      }
      const auto& l = spec_.layers[i];
      const Shape ps = blocks_[i - 1].output().shape();
      accumulate_channels(grads[i - 1], din, 0, ps);
      if (l.skip_source) {
        const std::size_t src = *l.skip_source - 1;
        accumulate_channels(grads[src], din, ps.c, blocks_[src].output().shape());
      }
    }
    return dx;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b.parameters()) out.push_back(p);
    }
    return out;
  }

  std::vector<Parameter<T>*> buffers() {
    std::vector<Parameter<T>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b.buffers()) out.push_back(p);
    }
    return out;
  }

  /// Per-block (input, output) shapes recorded by the last forward pass.
  const std::vector<Shape>& input_shapes() const { return input_shapes_; }
  const std::vector<Shape>& output_shapes() const { return output_shapes_; }

 private:
  static void accumulate_channels(Tensor<T>& dst, const Tensor<T>& src, int first_channel,
                                  const Shape& shape) {
    if (dst.empty()) dst = Tensor<T>(shape);
    const std::size_t n_elems = shape.sample_size();
    for (int n = 0; n < shape.n; ++n) {
      const T* s = src.sample(n) + static_cast<std::size_t>(first_channel) * shape.plane();
      T* d = dst.sample(n);
      for (std::size_t i = 0; i < n_elems; ++i) d[i] += s[i];
    }
  }

  NetworkSpec spec_;
  std::vector<Block<T>> blocks_;
  std::vector<Shape> input_shapes_;
  std::vector<Shape> output_shapes_;
  bool dropout_at_eval_ = false;
};

}  // namespace lcgan
