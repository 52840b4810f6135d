#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"
#include "lcgan/losses.hpp"
#include "lcgan/optim.hpp"

namespace lcgan {

enum class TrainMode { kCgan, kCnn };
enum class Precision { kSingle, kDouble };

inline std::string mode_name(TrainMode m) { return m == TrainMode::kCgan ? "cgan" : "cnn"; }

inline TrainMode parse_mode(const std::string& s) {
  if (s == "cgan") return TrainMode::kCgan;
  if (s == "cnn") return TrainMode::kCnn;
  throw ConfigError("invalid mode '" + s + "' (expected cgan or cnn)");
}

struct TrainConfig {
  TrainMode mode = TrainMode::kCgan;
  std::uint64_t seed = 0;
  int batch_size = 8;
  int max_epochs = 200;
  int early_stop_patience = 10;  // epochs without validation macro-F1 gain; <= 0 disables
  LossConfig loss;
  double width_multiplier = 1.0;
  AdamSettings generator_optimizer;      // generator / CNN
  SgdSettings discriminator_optimizer;   // discriminator
  Precision precision = Precision::kSingle;
  bool harden_fake = false;       // feed argmax one-hot instead of softmax to D
  bool dropout_at_eval = false;
  bool evaluate_train = true;     // compute train macro-F1 each epoch
  double target_train_macro_f1 = 0.0;  // stop once reached; 0 disables

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (!(generator_optimizer.lr > 0.0) || !(discriminator_optimizer.lr > 0.0)) {
      throw ConfigError("learning rates must be positive");
    }
    if (!(generator_optimizer.beta1 >= 0.0 && generator_optimizer.beta1 < 1.0) ||
        !(generator_optimizer.beta2 >= 0.0 && generator_optimizer.beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(target_train_macro_f1 >= 0.0 && target_train_macro_f1 <= 1.0)) {
      throw ConfigError("target_train_macro_f1 must lie in [0, 1]");
    }
    loss.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["mode"] = mode_name(c.mode);
  j["seed"] = c.seed;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["early_stop_patience"] = c.early_stop_patience;
  j["lambda"] = c.loss.lambda;
  j["g_adversarial_form"] =
      c.loss.adversarial_form == AdversarialForm::kNonSaturating ? "non-saturating" : "literal";
  j["l2_reduction"] = c.loss.l2_reduction == L2Reduction::kPerTileMean ? "per-tile" : "joint";
  j["width_multiplier"] = c.width_multiplier;
  j["generator_optimizer"] = {{"type", "adam"},
                              {"lr", c.generator_optimizer.lr},
                              {"beta1", c.generator_optimizer.beta1},
                              {"beta2", c.generator_optimizer.beta2},
                              {"eps", c.generator_optimizer.eps}};
  j["discriminator_optimizer"] = {{"type", "sgd"}, {"lr", c.discriminator_optimizer.lr}};
  j["precision"] = c.precision == Precision::kSingle ? "single" : "double";
  j["harden_fake"] = c.harden_fake;
  j["dropout_at_eval"] = c.dropout_at_eval;
  j["evaluate_train"] = c.evaluate_train;
  j["target_train_macro_f1"] = c.target_train_macro_f1;
  return j;
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.loss.lambda = j.value("lambda", c.loss.lambda);
    if (j.contains("g_adversarial_form")) {
      const auto f = j["g_adversarial_form"].get<std::string>();
      if (f == "non-saturating") {
        c.loss.adversarial_form = AdversarialForm::kNonSaturating;
      } else if (f == "literal") {
        c.loss.adversarial_form = AdversarialForm::kLiteral;
      } else {
        throw ConfigError("unknown g_adversarial_form " + f);
      }
    }
    if (j.contains("l2_reduction")) {
      const auto r = j["l2_reduction"].get<std::string>();
      if (r == "per-tile") {
        c.loss.l2_reduction = L2Reduction::kPerTileMean;
      } else if (r == "joint") {
        c.loss.l2_reduction = L2Reduction::kJoint;
      } else {
        throw ConfigError("unknown l2_reduction " + r);
      }
    }
    c.width_multiplier = j.value("width_multiplier", c.width_multiplier);
    if (j.contains("generator_optimizer")) {
      const auto& o = j["generator_optimizer"];
      c.generator_optimizer.lr = o.value("lr", c.generator_optimizer.lr);
      c.generator_optimizer.beta1 = o.value("beta1", c.generator_optimizer.beta1);
      c.generator_optimizer.beta2 = o.value("beta2", c.generator_optimizer.beta2);
      c.generator_optimizer.eps = o.value("eps", c.generator_optimizer.eps);
    }
    if (j.contains("discriminator_optimizer")) {
      c.discriminator_optimizer.lr =
          j["discriminator_optimizer"].value("lr", c.discriminator_optimizer.lr);
    }
    if (j.contains("precision")) {
      const auto p = j["precision"].get<std::string>();
      if (p != "single" && p != "double") throw ConfigError("precision must be single or double");
      c.precision = p == "single" ? Precision::kSingle : Precision::kDouble;
    }
    c.harden_fake = j.value("harden_fake", c.harden_fake);
    c.dropout_at_eval = j.value("dropout_at_eval", c.dropout_at_eval);
    c.evaluate_train = j.value("evaluate_train", c.evaluate_train);
    c.target_train_macro_f1 = j.value("target_train_macro_f1", c.target_train_macro_f1);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lcgan
