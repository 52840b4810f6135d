#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcgan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// JSON config files for CLI11. Subcommand options live in an object named
// after the subcommand.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, "", {}, items);
    return items;
  }

 private:
  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (name == "help" || name == "config") continue;
      if (opt->get_expected_min() != 0) {
        if (opt->count() == 1) {
          j[name] = opt->results().at(0);
        } else if (opt->count() > 1) {
          j[name] = opt->results();
        } else if (default_also && !opt->get_default_str().empty()) {
          j[name] = opt->get_default_str();
        }
      } else if (opt->count() > 0) {
        j[name] = opt->as<bool>();
      } else if (default_also) {
        j[name] = false;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      if (sub->parsed()) j[sub->get_name()] = dump(sub, default_also);
    }
    return j;
  }

  static void flatten(const json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (name.empty()) {
        for (auto it = j.begin(); it != j.end(); ++it) flatten(*it, it.key(), parents, out);
        return;
      }
      // "++" and "--" open and close a section so it can trigger a subcommand.
      parents.push_back(name);
      out.push_back({parents, "++", {}});
      for (auto it = j.begin(); it != j.end(); ++it) flatten(*it, it.key(), parents, out);
      out.push_back({parents, "--", {}});
      return;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = parents;
    auto scalar = [](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      if (v.is_number()) return v.dump();
      throw CLI::ConversionError("unsupported config value " + v.dump());
    };
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    } else {
      item.inputs.push_back(scalar(j));
    }
    out.push_back(std::move(item));
  }
};

struct Globals {
  std::uint64_t seed = 0;
  std::string run_dir;
  double width_mult = 1.0;
};

struct SynthArgs {
  int n = 0;
  std::string out;
  bool scenes = false;
  int n_validation = -1;
  int n_test = -1;
};

struct PrepareArgs {
  std::string scenes;
  std::string taxonomy;
  std::string out;
  int tile = lcgan::kTileSize;
  int stride = lcgan::kTileSize;
  double drop_threshold = 0.0;
};

struct TrainArgs {
  std::string manifest;
  lcgan::TrainConfig cfg;
  std::string mode = "cgan";
  std::string adv_form = "non-saturating";
  std::string l2_reduction = "per-tile";
  std::string precision = "single";
  bool resume = false;
};

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> names;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

struct PredictArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> tiles;
  std::string manifest;
  std::string split;
  std::string taxonomy;
  std::string out;
  bool composite = false;
};

class UsageError : public lcgan::Error {
 public:
  using lcgan::Error::Error;
};

fs::path resolve_run_dir(const Globals& g, const std::string& sub) {
  if (!g.run_dir.empty()) return g.run_dir;
  return fs::path("runs") / sub;
}

void write_resolved_config(const CLI::App& app, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  json j = json::parse(app.config_to_str(true, false));
  j["lcgan_version"] = lcgan::kVersion;
  std::ofstream(run_dir / "resolved_config.json") << j.dump(2) << '\n';
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw lcgan::IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string model_label(const lcgan::TrainConfig& c) { return c.mode == lcgan::TrainMode::kCgan ? "CGAN" : "CNN"; }

int run_synth(const SynthArgs& a, const Globals& g, const fs::path& run_dir) {
  const fs::path out = a.out.empty() ? run_dir : fs::path(a.out);
  if (a.scenes) {
    lcgan::SceneSynthParams p;
    p.n_validation = a.n_validation;
    p.n_test = a.n_test;
    const auto path = lcgan::write_synth_scenes(g.seed, a.n, lcgan::ClassTaxonomy::nlcd2016(), out, p);
    std::cout << json{{"scenes", a.n}, {"scene_list", path}}.dump() << '\n';
  } else {
    lcgan::SynthParams p;
    p.n_validation = a.n_validation;
    p.n_test = a.n_test;
    const auto corpus = lcgan::synth_corpus(g.seed, a.n, p);
    const auto path = lcgan::write_corpus(corpus, out);
    std::cout << json{{"tiles", a.n}, {"manifest", path}}.dump() << '\n';
  }
  return 0;
}

int run_prepare(const PrepareArgs& a, const fs::path& run_dir) {
  const fs::path out = a.out.empty() ? run_dir : fs::path(a.out);
  const auto taxonomy =
      a.taxonomy.empty() ? lcgan::ClassTaxonomy::nlcd2016() : lcgan::ClassTaxonomy::load(a.taxonomy);
  const auto scenes = lcgan::load_manifest(a.scenes);
  lcgan::PrepareOptions opt;
  opt.tile = a.tile;
  opt.stride = a.stride;
  opt.drop_threshold = a.drop_threshold;
  const auto r = lcgan::prepare_corpus(scenes, taxonomy, out, opt);
  write_json(out / "distribution.json", r.distribution.to_json(taxonomy));
  std::ofstream(out / "distribution.txt") << r.distribution.to_text(taxonomy);
  lcgan::write_png((out / "distribution.png").string(), lcgan::distribution_chart(r.distribution, taxonomy));
  std::cerr << "prepare: kept " << r.kept << " tiles, dropped " << r.dropped << '\n';
  std::cout << json{{"kept", r.kept}, {"dropped", r.dropped}, {"manifest", r.manifest_path}}.dump() << '\n';
  return 0;
}

int run_train(TrainArgs a, const Globals& g, const fs::path& run_dir) {
  auto& cfg = a.cfg;
  cfg.mode = lcgan::parse_mode(a.mode);
  cfg.seed = g.seed;
  cfg.width_multiplier = g.width_mult;
  cfg.loss.adversarial_form = a.adv_form == "literal" ? lcgan::AdversarialForm::kLiteral
                                                      : lcgan::AdversarialForm::kNonSaturating;
  cfg.loss.l2_reduction = a.l2_reduction == "joint" ? lcgan::L2Reduction::kJoint : lcgan::L2Reduction::kPerTileMean;
  cfg.precision = a.precision == "double" ? lcgan::Precision::kDouble : lcgan::Precision::kSingle;
  cfg.validate();
  const auto manifest = lcgan::load_manifest(a.manifest);
  write_json(run_dir / "train_config.json", lcgan::to_json(cfg));
  lcgan::FitOptions opt;
  opt.resume = a.resume;
  opt.progress = &std::cerr;
  const auto r = lcgan::fit(cfg, manifest, run_dir, opt);
  std::cout << json{{"steps", r.steps},
                    {"epochs", r.epochs.size()},
                    {"best_val_macro_f1", r.best_val_macro_f1},
                    {"early_stopped", r.early_stopped},
                    {"reached_target", r.reached_target},
                    {"best_checkpoint", r.best_checkpoint},
                    {"last_checkpoint", r.last_checkpoint}}
                   .dump()
            << '\n';
  return 0;
}

template <typename T>
lcgan::MetricsReport evaluate_checkpoint(const std::string& path, const lcgan::Manifest& manifest,
                                         lcgan::Split split, const std::string& name) {
  auto g = lcgan::load_generator<T>(path);
  const auto ids = manifest.indices(split);
  if (ids.empty()) throw lcgan::Error("split " + std::string(lcgan::split_name(split)) + " has zero tiles");
  if (split == lcgan::Split::kTest) {
    for (const auto& region : manifest.regions(split)) {
      if (g.fit_regions.count(region)) {
        throw lcgan::Error("region leakage: " + std::string(lcgan::split_name(split)) + " region '" + region +
                           "' was used to fit " + path);
      }
    }
  }
  lcgan::TileStore store(manifest, false);
  return lcgan::evaluate(*g.net, store, ids, g.config.batch_size, name.empty() ? model_label(g.config) : name,
                         std::string(lcgan::split_name(split)));
}

int run_eval(const EvalArgs& a, const fs::path& run_dir) {
  if (!a.names.empty() && a.names.size() != a.checkpoints.size()) {
    throw UsageError("--name must be given once per --checkpoint");
  }
  const fs::path out = a.out.empty() ? run_dir : fs::path(a.out);
  fs::create_directories(out);
  const auto manifest = lcgan::load_manifest(a.manifest);
  manifest.validate();
  const auto split = lcgan::parse_split(a.split);
  std::vector<lcgan::MetricsReport> reports;
  std::map<std::string, int> seen;
  for (std::size_t k = 0; k < a.checkpoints.size(); ++k) {
    const auto& path = a.checkpoints[k];
    if (!fs::exists(path)) throw lcgan::IoError("checkpoint not found: " + path);
    std::string name = a.names.empty() ? "" : a.names[k];
    auto report = lcgan::checkpoint_precision(path) == lcgan::Precision::kDouble
                      ? evaluate_checkpoint<double>(path, manifest, split, name)
                      : evaluate_checkpoint<float>(path, manifest, split, name);
    if (const int n = seen[report.model]++; n > 0) report.model += "-" + std::to_string(n + 1);
    std::ofstream(out / ("report_" + report.model + ".json")) << lcgan::report_emit(report);
    reports.push_back(std::move(report));
  }
  const std::string table = lcgan::comparison_table(reports);
  std::ofstream(out / "table.txt") << table;
  std::cout << table;
  return 0;
}

template <typename T>
std::vector<lcgan::LabelMap> predict_tiles(const std::string& path, const std::vector<lcgan::RawImage>& raws) {
  auto g = lcgan::load_generator<T>(path);
  std::vector<lcgan::LabelMap> out;
  lcgan::Rng dropout(g.config.seed, "dropout/eval");
  for (const auto& raw : raws) {
    lcgan::Tensor<T> x(lcgan::Shape{1, lcgan::kImageChannels, raw.h, raw.w});
    lcgan::normalize_into(raw, x.data());
    out.push_back(lcgan::decode(g.net->forward(x, lcgan::Mode::kEval, &dropout)));
  }
  return out;
}

std::string label_sibling(const std::string& image_path) {
  const std::string suffix = ".img.lct";
  if (image_path.size() > suffix.size() &&
      image_path.compare(image_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return image_path.substr(0, image_path.size() - suffix.size()) + ".lbl.lct";
  }
  return {};
}

int run_predict(const PredictArgs& a, const fs::path& run_dir) {
  if (a.composite && a.checkpoints.size() != 2) throw UsageError("--composite needs exactly two checkpoints");
  std::vector<std::string> images = a.tiles;
  std::vector<std::string> labels;
  for (const auto& t : a.tiles) labels.push_back(label_sibling(t));
  if (!a.manifest.empty()) {
    const auto m = lcgan::load_manifest(a.manifest);
    const auto ids = a.split.empty() ? [&] {
      std::vector<std::size_t> all(m.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }()
                                     : m.indices(lcgan::parse_split(a.split));
    for (auto i : ids) {
      images.push_back(m.resolve(m.records()[i].image));
      labels.push_back(m.resolve(m.records()[i].label));
    }
  }
  if (images.empty()) throw UsageError("no tiles given; use --tile or --manifest");
  for (const auto& c : a.checkpoints) {
    if (!fs::exists(c)) throw lcgan::IoError("checkpoint not found: " + c);
  }

  const auto taxonomy =
      a.taxonomy.empty() ? lcgan::ClassTaxonomy::nlcd2016() : lcgan::ClassTaxonomy::load(a.taxonomy);
  const fs::path out = a.out.empty() ? run_dir : fs::path(a.out);
  fs::create_directories(out);

  std::vector<lcgan::RawImage> raws;
  for (const auto& p : images) raws.push_back(lcgan::tile_io::read_image(p));

  std::vector<std::vector<lcgan::LabelMap>> preds;
  std::vector<std::string> names;
  for (const auto& c : a.checkpoints) {
    const bool dbl = lcgan::checkpoint_precision(c) == lcgan::Precision::kDouble;
    preds.push_back(dbl ? predict_tiles<double>(c, raws) : predict_tiles<float>(c, raws));
    lcgan::CheckpointReader r(c);
    std::string name = model_label(lcgan::train_config_from_json(r.header().at("config")));
    if (std::find(names.begin(), names.end(), name) != names.end()) name += "-" + std::to_string(names.size() + 1);
    names.push_back(name);
  }

  json summary = json::array();
  for (std::size_t t = 0; t < images.size(); ++t) {
    std::string stem = fs::path(images[t]).filename().string();
    if (auto pos = stem.find('.'); pos != std::string::npos) stem.resize(pos);
    json entry = {{"tile", images[t]}};
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const auto base = out / (stem + "." + names[k]);
      lcgan::tile_io::write_labels(base.string() + ".lbl.lct", preds[k][t]);
      lcgan::write_png(base.string() + ".png", lcgan::render(preds[k][t], taxonomy.colormap()));
      entry["outputs"].push_back(base.string() + ".png");
    }
    if (a.composite) {
      if (labels[t].empty() || !fs::exists(labels[t])) {
        throw lcgan::IoError("composite needs ground truth next to " + images[t]);
      }
      const auto truth = lcgan::tile_io::read_labels(labels[t]);
      const std::vector<lcgan::RgbImage> panels = {
          lcgan::raw_panel(raws[t], false), lcgan::raw_panel(raws[t], true),
          lcgan::render(truth, taxonomy.colormap()), lcgan::render(preds[0][t], taxonomy.colormap()),
          lcgan::render(preds[1][t], taxonomy.colormap())};
      const auto path = out / (stem + ".composite.png");
      lcgan::write_png(path.string(), lcgan::composite(panels));
      entry["composite"] = path.string();
    }
    summary.push_back(entry);
  }
  write_json(out / "predictions.json", summary);
  std::cout << json{{"tiles", images.size()}, {"models", names}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Land-cover segmentation with conditional GANs and CNN baselines"};
  app.set_version_flag("--version", lcgan::kVersion);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config; command-line flags override its values");
  app.require_subcommand(0, 1);

  Globals g;
  app.add_option("--seed", g.seed, "Root seed for every random stream")->capture_default_str();
  app.add_option("--run-dir", g.run_dir, "Run directory (default: runs/<subcommand>)")->envname("LCGAN_RUN_DIR");
  app.add_option("--width-mult", g.width_mult, "Hidden-channel width multiplier")
      ->capture_default_str()
      ->check(CLI::Range(0.125, 64.0));

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus")->configurable();
  synth->add_option("-n,--n", sy.n, "Number of tiles (or scenes)")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", sy.out, "Output directory (default: run directory)");
  synth->add_flag("--scenes", sy.scenes, "Write source-legend scenes for prepare instead of tiles");
  synth->add_option("--n-validation", sy.n_validation, "Validation count (default n/4)")->capture_default_str();
  synth->add_option("--n-test", sy.n_test, "Test count (default n/4)")->capture_default_str();

  PrepareArgs pr;
  auto* prepare = app.add_subcommand("prepare", "Tile, remap and filter scenes into a corpus")->configurable();
  prepare->add_option("--scenes", pr.scenes, "Scene list (manifest format)")->required()->check(CLI::ExistingFile);
  prepare->add_option("--taxonomy", pr.taxonomy, "Taxonomy JSON (default: built-in NLCD 2016)");
  prepare->add_option("--out", pr.out, "Output directory (default: run directory)");
  prepare->add_option("--tile", pr.tile, "Tile side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  prepare->add_option("--stride", pr.stride, "Tiling stride in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  prepare->add_option("--drop-threshold", pr.drop_threshold, "Drop a tile above this excluded-pixel fraction")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a CGAN or CNN")->configurable();
  train->add_option("--manifest", tr.manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--mode", tr.mode, "cgan or cnn")->capture_default_str()->check(CLI::IsMember({"cgan", "cnn"}));
  train->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--max-epochs", tr.cfg.max_epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--patience", tr.cfg.early_stop_patience, "Early-stop patience in epochs; 0 disables")
      ->capture_default_str();
  train->add_option("--lambda", tr.cfg.loss.lambda, "Reconstruction weight")->capture_default_str();
  train->add_option("--adv-form", tr.adv_form)->capture_default_str()->check(CLI::IsMember({"non-saturating", "literal"}));
  train->add_option("--l2-reduction", tr.l2_reduction)->capture_default_str()->check(CLI::IsMember({"per-tile", "joint"}));
  train->add_option("--lr-g", tr.cfg.generator_optimizer.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--beta1", tr.cfg.generator_optimizer.beta1)->capture_default_str();
  train->add_option("--beta2", tr.cfg.generator_optimizer.beta2)->capture_default_str();
  train->add_option("--adam-eps", tr.cfg.generator_optimizer.eps)->capture_default_str();
  train->add_option("--lr-d", tr.cfg.discriminator_optimizer.lr, "Discriminator SGD learning rate")->capture_default_str();
  train->add_option("--precision", tr.precision)->capture_default_str()->check(CLI::IsMember({"single", "double"}));
  train->add_flag("--harden-fake", tr.cfg.harden_fake, "Feed argmax one-hot fakes to the discriminator");
  train->add_flag("--dropout-at-eval", tr.cfg.dropout_at_eval);
  train->add_option("--evaluate-train", tr.cfg.evaluate_train, "Score the train split every epoch")
      ->capture_default_str();
  train->add_option("--target-train-f1", tr.cfg.target_train_macro_f1, "Stop at this train macro-F1; 0 disables")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  train->add_flag("--resume", tr.resume, "Continue from last.ckpt in the run directory");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score checkpoints on a split")->configurable();
  eval->add_option("--checkpoint", ev.checkpoints, "Checkpoint (repeatable)")->required();
  eval->add_option("--name", ev.names, "Model name per checkpoint (default CGAN/CNN)");
  eval->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ev.split)->capture_default_str()->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--out", ev.out, "Report directory (default: run directory)");

  PredictArgs pd;
  auto* predict = app.add_subcommand("predict", "Write class maps and renders")->configurable();
  predict->add_option("--checkpoint", pd.checkpoints, "Checkpoint (repeatable)")->required();
  predict->add_option("--tile", pd.tiles, "Image tile (repeatable)");
  predict->add_option("--manifest", pd.manifest, "Predict every tile of a manifest")->check(CLI::ExistingFile);
  predict->add_option("--split", pd.split, "Restrict --manifest to one split")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  predict->add_option("--taxonomy", pd.taxonomy, "Taxonomy JSON for colors");
  predict->add_option("--out", pd.out, "Output directory (default: run directory)");
  predict->add_flag("--composite", pd.composite, "Write RGB | NIR | truth | model A | model B sheets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // A subcommand may come from the command line or from a --config section.
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : {synth, prepare, train, eval, predict}) {
    if (s->parsed()) {
      if (sub) {
        std::cerr << "exactly one subcommand is required\n";
        return 2;
      }
      sub = s;
    }
  }
  if (!sub) {
    std::cerr << "a subcommand is required\n" << app.help();
    return 2;
  }
  const fs::path run_dir = resolve_run_dir(g, sub->get_name());
  try {
    write_resolved_config(app, run_dir);
    if (sub == synth) return run_synth(sy, g, run_dir);
    if (sub == prepare) return run_prepare(pr, run_dir);
    if (sub == train) return run_train(tr, g, run_dir);
    if (sub == eval) return run_eval(ev, run_dir);
    return run_predict(pd, run_dir);
  } catch (const UsageError& e) {
    std::cerr << "lcgan: " << e.what() << '\n';
    return 2;
  } catch (const lcgan::ConfigError& e) {
    std::cerr << "lcgan: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lcgan: " << e.what() << '\n';
    return 1;
  }
}
