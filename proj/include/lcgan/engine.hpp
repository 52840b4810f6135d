#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/checkpoint.hpp"
#include "lcgan/config.hpp"
#include "lcgan/data.hpp"
#include "lcgan/error.hpp"
#include "lcgan/losses.hpp"
#include "lcgan/metrics.hpp"
#include "lcgan/nets.hpp"
#include "lcgan/optim.hpp"
#include "lcgan/random.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/version.hpp"

namespace lcgan {

/// Loss components of one optimization step. Fields that do not apply to
/// the mode stay zero.
struct StepLosses {
  double d_loss = 0.0;
  double g_adversarial = 0.0;
  double g_reconstruction = 0.0;
  double g_total = 0.0;
  double cross_entropy = 0.0;
  std::size_t clamped = 0;
};

struct TrainState {
  std::int64_t step = 0;   // optimization steps taken
  int epoch = 0;           // completed epochs
  double best_val_macro_f1 = -1.0;
  int epochs_since_improvement = 0;
  StepLosses last;
};

/// Patience-based stopping on a metric that should increase.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience, double best = -1.0, int stale = 0)
      : patience_(patience), best_(best), stale_(stale) {}

  /// Records one epoch's metric; returns true when training should stop.
  bool update(double metric) {
    if (metric > best_) {
      best_ = metric;
      stale_ = 0;
      improved_ = true;
    } else {
      ++stale_;
      improved_ = false;
    }
    return patience_ > 0 && stale_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }
  int stale() const { return stale_; }

 private:
  int patience_;
  double best_;
  int stale_;
  bool improved_ = false;
};

/// Owns the networks and optimizers of one training run.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, ClassWeights weights) : cfg_(std::move(cfg)), weights_(weights) {
    cfg_.validate();
    weights_.validate();
    generator_ = std::make_unique<Network<T>>(generator_spec(cfg_.width_multiplier));
    generator_->init(cfg_.seed, "init/generator");
    generator_->set_dropout_at_eval(cfg_.dropout_at_eval);
    g_opt_ = std::make_unique<Adam<T>>(generator_->parameters(), cfg_.generator_optimizer);
    if (cfg_.mode == TrainMode::kCgan) {
      discriminator_ = std::make_unique<Network<T>>(discriminator_spec(cfg_.width_multiplier));
      discriminator_->init(cfg_.seed, "init/discriminator");
      d_opt_ = std::make_unique<Sgd<T>>(discriminator_->parameters(), cfg_.discriminator_optimizer);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  void set_max_epochs(int n) { cfg_.max_epochs = n; }
  const ClassWeights& class_weights() const { return weights_; }
  Network<T>& generator() { return *generator_; }
  Network<T>* discriminator() { return discriminator_.get(); }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  Adam<T>& generator_optimizer() { return *g_opt_; }

  std::set<std::string> fit_regions;

  StepLosses step(const Batch<T>& batch, long long batch_index = 0) {
    return cfg_.mode == TrainMode::kCgan ? cgan_step(batch, batch_index) : cnn_step(batch, batch_index);
  }

  /// Generator forward in train mode with this step's dropout stream.
  Tensor<T> generate(const Batch<T>& batch) {
    Rng dropout(cfg_.seed, "dropout/generator", static_cast<std::uint64_t>(state_.step));
    return generator_->forward(batch.images, Mode::kTrain, &dropout);
  }

  /// One alternating update: SGD on the discriminator with the fake masks
  /// detached, then Adam on the generator with the discriminator frozen.
  StepLosses cgan_step(const Batch<T>& batch, long long batch_index = 0) {
    require_discriminator();
    const Tensor<T> fake = generate(batch);
    StepLosses out;
    out.d_loss = update_discriminator(batch, fake, &out.clamped);
    check_finite(out.d_loss, "discriminator loss", batch_index);
    generator_->zero_grad();
    const LossValue g = accumulate_generator_gradients(batch, fake, &out.clamped);
    out.g_adversarial = g.adversarial;
    out.g_reconstruction = g.reconstruction;
    out.g_total = g.total;
    check_finite(out.g_total, "generator loss", batch_index);
    g_opt_->step();
    ++state_.step;
    state_.last = out;
    return out;
  }

  /// One Adam update of the segmentation network on weighted cross-entropy.
  StepLosses cnn_step(const Batch<T>& batch, long long batch_index = 0) {
    const Tensor<T> pred = generate(batch);
    Tensor<T> grad;
    StepLosses out;
    out.cross_entropy = weighted_cross_entropy(batch.targets, pred, weights_, &grad);
    check_finite(out.cross_entropy, "cross-entropy loss", batch_index);
    generator_->zero_grad();
    generator_->backward(grad);
    g_opt_->step();
    ++state_.step;
    state_.last = out;
    return out;
  }

  /// Discriminator half of a CGAN step. Generator parameters are untouched.
  double update_discriminator(const Batch<T>& batch, const Tensor<T>& fake,
                              std::size_t* clamped = nullptr) {
    require_discriminator();
    auto& d = *discriminator_;
    d.zero_grad();
    const Tensor<T> real_scores = d.forward(concat_channels(batch.images, batch.targets), Mode::kTrain);
    const Tensor<T> fake_mask = cfg_.harden_fake ? harden(fake) : fake;
    Tensor<T> d_real(real_scores.shape());
    Tensor<T> d_fake_unused(real_scores.shape());
    // The loss separates into real and fake terms; each pass backpropagates
    // its own term so one activation cache suffices.
    d_loss<T>(real_scores.span(), real_scores.span(), d_real.span(), d_fake_unused.span());
    d.backward(d_real);
    const Tensor<T> fake_scores = d.forward(concat_channels(batch.images, fake_mask), Mode::kTrain);
    Tensor<T> d_fake(fake_scores.shape());
    Tensor<T> d_real_unused(fake_scores.shape());
    const ScoreLoss loss =
        d_loss<T>(real_scores.span(), fake_scores.span(), d_real_unused.span(), d_fake.span());
    d.backward(d_fake);
    d_opt_->step();
    if (clamped) *clamped += loss.clamped;
    return loss.value;
  }

  /// Generator gradients of adversarial + lambda * weighted L2 for a fake
  /// batch produced by the last `generate` call. Discriminator parameter
  /// gradients are not accumulated.
  LossValue accumulate_generator_gradients(const Batch<T>& batch, const Tensor<T>& fake,
                                           std::size_t* clamped = nullptr) {
    require_discriminator();
    auto& d = *discriminator_;
    const Tensor<T> scores = d.forward(concat_channels(batch.images, fake), Mode::kTrain);
    Tensor<T> d_scores(scores.shape());
    const ScoreLoss adv = g_adv_loss<T>(scores.span(), cfg_.loss.adversarial_form, d_scores.span());
    const Tensor<T> d_input = d.backward(d_scores, /*param_grads=*/false);

    Tensor<T> d_rec;
    const double rec = weighted_l2(batch.targets, fake, weights_, cfg_.loss.l2_reduction, &d_rec);

    Tensor<T> d_fake(fake.shape());
    const Shape fs = fake.shape();
    const std::size_t image_part = static_cast<std::size_t>(kGeneratorInputChannels) * fs.plane();
    const T lambda = static_cast<T>(cfg_.loss.lambda);
    for (int n = 0; n < fs.n; ++n) {
      const T* from_d = d_input.sample(n) + image_part;
      const T* from_rec = d_rec.sample(n);
      T* dst = d_fake.sample(n);
      for (std::size_t i = 0; i < fs.sample_size(); ++i) dst[i] = from_d[i] + lambda * from_rec[i];
    }
    generator_->backward(d_fake);
    if (clamped) *clamped += adv.clamped;
    return g_total_loss(adv.value, rec, cfg_.loss);
  }

  /// Eval-mode class maps for a batch of normalized images.
  std::vector<LabelMap> predict(const Tensor<T>& images) {
    Rng dropout(cfg_.seed, "dropout/eval");
    const Tensor<T> soft = generator_->forward(images, Mode::kEval, &dropout);
    std::vector<LabelMap> out;
    for (int n = 0; n < soft.shape().n; ++n) out.push_back(decode(soft, n));
    return out;
  }

  void save(const std::string& path) const {
    CheckpointWriter w;
    auto& h = w.header();
    h["kind"] = "trainer";
    h["lcgan_version"] = kVersion;
    h["mode"] = mode_name(cfg_.mode);
    h["run_seed"] = cfg_.seed;
    h["config"] = to_json(cfg_);
    h["generator_spec"] = to_json(generator_->spec());
    h["discriminator_spec"] = discriminator_ ? to_json(discriminator_->spec()) : nlohmann::json(nullptr);
    h["class_weights"] = weights_.w;
    h["fit_regions"] = fit_regions;
    h["state"] = {{"step", state_.step},
                  {"epoch", state_.epoch},
                  {"best_val_macro_f1", state_.best_val_macro_f1},
                  {"epochs_since_improvement", state_.epochs_since_improvement}};
    h["optimizers"]["generator"] = {{"type", "adam"},
                                    {"lr", g_opt_->settings().lr},
                                    {"beta1", g_opt_->settings().beta1},
                                    {"beta2", g_opt_->settings().beta2},
                                    {"eps", g_opt_->settings().eps},
                                    {"steps", g_opt_->steps()}};
    if (d_opt_) h["optimizers"]["discriminator"] = {{"type", "sgd"}, {"lr", d_opt_->settings().lr}};

    add_network(w, "G.", *generator_);
    if (discriminator_) add_network(w, "D.", *discriminator_);
    auto params = generator_->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      w.add<T>("opt.G.m." + params[k]->name, params[k]->dims, g_opt_->first_moments()[k]);
      w.add<T>("opt.G.v." + params[k]->name, params[k]->dims, g_opt_->second_moments()[k]);
    }
    w.write(path);
  }

  static Trainer load(const std::string& path) {
    CheckpointReader r(path);
    const auto& h = r.header();
    if (h.value("kind", "") != "trainer") throw IoError(path + ": not a trainer checkpoint");
    TrainConfig cfg = train_config_from_json(h.at("config"));
    ClassWeights cw;
    cw.w = h.at("class_weights").get<std::array<double, kNumClasses>>();
    Trainer t(cfg, cw);
    if (spec_from_json(h.at("generator_spec")) != t.generator_->spec()) {
      throw IoError(path + ": generator spec does not match its config");
    }
    load_network(r, "G.", *t.generator_);
    if (t.discriminator_) load_network(r, "D.", *t.discriminator_);
    auto params = t.generator_->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      t.g_opt_->first_moments()[k] = r.get<T>("opt.G.m." + params[k]->name);
      t.g_opt_->second_moments()[k] = r.get<T>("opt.G.v." + params[k]->name);
    }
    t.g_opt_->set_steps(h.at("optimizers").at("generator").at("steps").get<std::int64_t>());
    const auto& s = h.at("state");
    t.state_.step = s.at("step").get<std::int64_t>();
    t.state_.epoch = s.at("epoch").get<int>();
    t.state_.best_val_macro_f1 = s.at("best_val_macro_f1").get<double>();
    t.state_.epochs_since_improvement = s.at("epochs_since_improvement").get<int>();
    t.fit_regions = h.at("fit_regions").get<std::set<std::string>>();
    return t;
  }

 private:
  void require_discriminator() const {
    if (!discriminator_) throw Error("adversarial update requested in cnn mode");
  }

  void check_finite(double v, const char* what, long long batch_index) const {
    if (!std::isfinite(v)) {
      throw NonFiniteLossError(std::string("non-finite ") + what, state_.step, batch_index);
    }
  }

  static Tensor<T> harden(const Tensor<T>& soft) {
    Tensor<T> out(soft.shape());
    for (int n = 0; n < soft.shape().n; ++n) one_hot_into(decode(soft, n), out.sample(n));
    return out;
  }

  static void add_network(CheckpointWriter& w, const std::string& prefix, Network<T>& net) {
    for (auto* p : net.parameters()) w.add<T>(prefix + p->name, p->dims, p->value);
    for (auto* p : net.buffers()) w.add<T>(prefix + p->name, p->dims, p->value);
  }

 public:
  static void load_network(const CheckpointReader& r, const std::string& prefix, Network<T>& net) {
    auto fill = [&](Parameter<T>* p) {
      auto v = r.get<T>(prefix + p->name);
      if (v.size() != p->value.size()) {
        throw IoError(r.path() + ": tensor " + prefix + p->name + " has the wrong size");
      }
      p->value = std::move(v);
    };
    for (auto* p : net.parameters()) fill(p);
    for (auto* p : net.buffers()) fill(p);
  }

 private:
  TrainConfig cfg_;
  ClassWeights weights_;
  std::unique_ptr<Network<T>> generator_;
  std::unique_ptr<Network<T>> discriminator_;
  std::unique_ptr<Adam<T>> g_opt_;
  std::unique_ptr<Sgd<T>> d_opt_;
  TrainState state_;
};

inline Precision checkpoint_precision(const std::string& path) {
  CheckpointReader r(path);
  return train_config_from_json(r.header().at("config")).precision;
}

/// Pixel-pooled metrics of `net` (eval mode) over manifest records `ids`.
template <typename T>
MetricsReport evaluate(Network<T>& net, TileStore& store, const std::vector<std::size_t>& ids,
                       int batch_size, const std::string& model = {}, const std::string& split = {}) {
  if (ids.empty()) throw Error("cannot evaluate an empty split");
  std::vector<LabelMap> preds;
  std::vector<LabelMap> truth;
  Rng dropout(0, "dropout/eval");
  for (std::size_t first = 0; first < ids.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t last = std::min(ids.size(), first + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> chunk(ids.begin() + static_cast<std::ptrdiff_t>(first),
                                   ids.begin() + static_cast<std::ptrdiff_t>(last));
    Batch<T> b = store.template batch<T>(chunk);
    const Tensor<T> soft = net.forward(b.images, Mode::kEval, &dropout);
    for (int n = 0; n < soft.shape().n; ++n) {
      preds.push_back(decode(soft, n));
      truth.push_back(std::move(b.labels[n]));
    }
  }
  MetricsReport r = f1_scores(preds, truth, /*per_tile=*/true);
  r.model = model;
  r.split = split;
  return r;
}

struct EpochRecord {
  int epoch = 0;
  std::int64_t steps = 0;
  double mean_d_loss = 0.0;
  double mean_g_total = 0.0;
  double mean_cross_entropy = 0.0;
  std::optional<double> train_macro_f1;
  double val_macro_f1 = 0.0;
  bool improved = false;
};

struct FitOptions {
  bool resume = false;  // continue from <run_dir>/last.ckpt
  std::ostream* progress = nullptr;
};

struct FitResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
  std::string batch_log_path;
  std::vector<EpochRecord> epochs;
  std::int64_t steps = 0;
  double best_val_macro_f1 = -1.0;
  bool early_stopped = false;
  bool reached_target = false;
};

namespace detail {

inline nlohmann::json step_record(const TrainConfig& cfg, const TrainState& s, const StepLosses& l,
                                  double wall_ms) {
  nlohmann::json j;
  j["step"] = s.step;
  j["epoch"] = s.epoch;
  if (cfg.mode == TrainMode::kCgan) {
    j["d_loss"] = l.d_loss;
    j["g_adv"] = l.g_adversarial;
    j["g_rec"] = l.g_reconstruction;
    j["g_total"] = l.g_total;
    j["lr_d"] = cfg.discriminator_optimizer.lr;
  } else {
    j["ce"] = l.cross_entropy;
  }
  j["lr_g"] = cfg.generator_optimizer.lr;
  j["clamped"] = l.clamped;
  j["wall_ms"] = wall_ms;
  return j;
}

template <typename T>
FitResult fit_impl(const TrainConfig& cfg, const Manifest& manifest,
                   const std::filesystem::path& run_dir, const FitOptions& opt) {
  cfg.validate();
  manifest.validate();
  const auto train_ids = manifest.indices(Split::kTrain);
  const auto val_ids = manifest.indices(Split::kValidation);
  if (train_ids.empty()) throw Error("train split is empty");
  if (val_ids.empty()) throw Error("validation split is empty");

  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());

  FitResult result;
  result.best_checkpoint = (run_dir / "best.ckpt").string();
  result.last_checkpoint = (run_dir / "last.ckpt").string();
  result.log_path = (run_dir / "train_log.jsonl").string();
  result.batch_log_path = (run_dir / "batches.jsonl").string();
  const std::string epoch_log_path = (run_dir / "epochs.jsonl").string();

  TileStore store(manifest);
  std::optional<Trainer<T>> trainer;
  if (opt.resume) {
    trainer.emplace(Trainer<T>::load(result.last_checkpoint));
    // Only the epoch budget may change between a run and its resumption.
    auto saved = to_json(trainer->config());
    auto wanted = to_json(cfg);
    saved.erase("max_epochs");
    wanted.erase("max_epochs");
    if (saved != wanted) throw ConfigError("resume config differs from the checkpoint's config");
    trainer->set_max_epochs(cfg.max_epochs);
  } else {
    std::vector<LabelMap> labels;
    for (auto i : train_ids) labels.push_back(tile_io::read_labels(manifest.resolve(manifest.records()[i].label)));
    trainer.emplace(cfg, compute_class_weights(labels));
    trainer->fit_regions = manifest.fit_regions();
  }
  auto& t = *trainer;

  const auto mode = opt.resume ? std::ios::app : std::ios::trunc;
  std::ofstream log(result.log_path, mode);
  std::ofstream batch_log(result.batch_log_path, mode);
  std::ofstream epoch_log(epoch_log_path, mode);
  if (!log || !batch_log || !epoch_log) throw IoError("cannot open logs in " + run_dir.string());

  if (!opt.resume) {
    t.save(result.last_checkpoint);
    t.save(result.best_checkpoint);
  }

  EarlyStopping stopper(cfg.early_stop_patience, t.state().best_val_macro_f1,
                        t.state().epochs_since_improvement);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  while (t.state().epoch < cfg.max_epochs) {
    const int epoch = t.state().epoch;
    const auto order = epoch_order(train_ids, cfg.seed, Split::kTrain, static_cast<std::uint64_t>(epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    long long batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += batch, ++batch_index) {
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(first),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), first + batch)));
      const Batch<T> b = store.template batch<T>(ids);
      nlohmann::json audit = {{"step", t.state().step}, {"epoch", epoch}};
      for (auto i : ids) {
        audit["tiles"].push_back(manifest.records()[i].image);
        audit["regions"].push_back(manifest.records()[i].region);
        audit["splits"].push_back(split_name(manifest.records()[i].split));
      }
      batch_log << audit.dump() << '\n';

      const auto t0 = std::chrono::steady_clock::now();
      StepLosses l;
      try {
        l = t.step(b, batch_index);
      } catch (const NonFiniteLossError& e) {
        nlohmann::json dump = {{"error", e.what()}, {"step", e.step}, {"batch_index", e.batch_index},
                               {"epoch", epoch}, {"tiles", audit["tiles"]}};
        std::ofstream((run_dir / "nonfinite_dump.json").string()) << dump.dump(2);
        throw;
      }
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      log << step_record(cfg, t.state(), l, wall).dump() << '\n';
      rec.mean_d_loss += l.d_loss;
      rec.mean_g_total += l.g_total;
      rec.mean_cross_entropy += l.cross_entropy;
      ++rec.steps;
    }
    log.flush();
    batch_log.flush();
    if (rec.steps > 0) {
      rec.mean_d_loss /= static_cast<double>(rec.steps);
      rec.mean_g_total /= static_cast<double>(rec.steps);
      rec.mean_cross_entropy /= static_cast<double>(rec.steps);
    }

    rec.val_macro_f1 = evaluate(t.generator(), store, val_ids, cfg.batch_size).macro_f1();
    if (cfg.evaluate_train) {
      rec.train_macro_f1 = evaluate(t.generator(), store, train_ids, cfg.batch_size).macro_f1();
    }
    const bool stop = stopper.update(rec.val_macro_f1);
    rec.improved = stopper.improved();
    t.state().epoch = epoch + 1;
    t.state().best_val_macro_f1 = stopper.best();
    t.state().epochs_since_improvement = stopper.stale();

    if (rec.improved) t.save(result.best_checkpoint);
    t.save(result.last_checkpoint);

    nlohmann::json ej = {{"epoch", rec.epoch},
                         {"steps", rec.steps},
                         {"val_macro_f1", rec.val_macro_f1},
                         {"improved", rec.improved}};
    if (cfg.mode == TrainMode::kCgan) {
      ej["mean_d_loss"] = rec.mean_d_loss;
      ej["mean_g_total"] = rec.mean_g_total;
    } else {
      ej["mean_ce"] = rec.mean_cross_entropy;
    }
    if (rec.train_macro_f1) ej["train_macro_f1"] = *rec.train_macro_f1;
    epoch_log << ej.dump() << '\n';
    epoch_log.flush();
    if (opt.progress) *opt.progress << ej.dump() << std::endl;
    result.epochs.push_back(rec);

    if (cfg.target_train_macro_f1 > 0.0 && rec.train_macro_f1 &&
        *rec.train_macro_f1 >= cfg.target_train_macro_f1) {
      result.reached_target = true;
      break;
    }
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  result.steps = t.state().step;
  result.best_val_macro_f1 = t.state().best_val_macro_f1;
  return result;
}

}  // namespace detail

/// Trains until max_epochs, early stop on validation macro-F1, or the
/// optional train macro-F1 target. Writes best.ckpt, last.ckpt,
/// train_log.jsonl (per step), epochs.jsonl and batches.jsonl (audit) under
/// `run_dir`.
inline FitResult fit(const TrainConfig& cfg, const Manifest& manifest,
                     const std::filesystem::path& run_dir, const FitOptions& opt = {}) {
  if (cfg.precision == Precision::kDouble) return detail::fit_impl<double>(cfg, manifest, run_dir, opt);
  return detail::fit_impl<float>(cfg, manifest, run_dir, opt);
}

/// Generator restored from a trainer checkpoint, for inference.
template <typename T>
struct LoadedGenerator {
  TrainConfig config;
  std::set<std::string> fit_regions;
  std::unique_ptr<Network<T>> net;
};

template <typename T>
LoadedGenerator<T> load_generator(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path);
  CheckpointReader r(path);
  LoadedGenerator<T> g;
  g.config = train_config_from_json(r.header().at("config"));
  g.fit_regions = r.header().at("fit_regions").get<std::set<std::string>>();
  g.net = std::make_unique<Network<T>>(spec_from_json(r.header().at("generator_spec")));
  g.net->set_dropout_at_eval(g.config.dropout_at_eval);
  Trainer<T>::load_network(r, "G.", *g.net);
  return g;
}

}  // namespace lcgan
