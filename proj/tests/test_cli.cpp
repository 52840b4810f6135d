#include <gtest/gtest.h>
#include <sys/wait.h>

#include "support.hpp"

namespace fs = std::filesystem;
using testing_support::lines;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run lcgan_run(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string("'") + LCGAN_CLI + "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> without_wall(const fs::path& p) {
  std::vector<std::string> out;
  for (const auto& l : lines(p)) {
    auto j = nlohmann::json::parse(l);
    j.erase("wall_ms");
    out.push_back(j.dump());
  }
  return out;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// One corpus and one short run per mode, shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir("cli");
    auto r = lcgan_run("--seed 1 synth -n 8 --out " + q(corpus()), root());
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* mode : {"cgan", "cnn"}) {
      r = lcgan_run("--seed 3 --width-mult 0.125 --run-dir " + q(root() / mode) + " train --manifest " +
                        q(manifest()) + " --mode " + mode + " --batch-size 2 --max-epochs 1",
                    root());
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static fs::path root() { return root_->path(); }
  static fs::path corpus() { return root() / "corpus"; }
  static fs::path manifest() { return corpus() / "manifest.tsv"; }
  static fs::path checkpoint(const char* mode) { return root() / mode / "best.ckpt"; }

  static TempDir* root_;
};

TempDir* Cli::root_ = nullptr;

}  // namespace

TEST_F(Cli, SynthIsByteIdentical) {
  TempDir a("synth_a");
  TempDir b("synth_b");
  ASSERT_EQ(lcgan_run("--seed 1 synth -n 8 --out " + q(a.path()), a.path()).code, 0);
  ASSERT_EQ(lcgan_run("--seed 1 synth -n 8 --out " + q(b.path()), b.path()).code, 0);
  const auto m = lcgan::load_manifest((a / "manifest.tsv").string());
  EXPECT_EQ(m.size(), 8u);
  EXPECT_EQ(slurp(a / "manifest.tsv"), slurp(b / "manifest.tsv"));
  for (const auto& rec : m.records()) {
    EXPECT_EQ(slurp(a / rec.image), slurp(b / rec.image));
    EXPECT_EQ(slurp(a / rec.label), slurp(b / rec.label));
  }
}

TEST_F(Cli, UsageErrorsExitTwo) {
  TempDir d("usage");
  EXPECT_EQ(lcgan_run("synth -n 0 --out " + q(d.path()), d.path()).code, 2);
  auto r = lcgan_run("--run-dir " + q(d / "bad") + " train --manifest " + q(manifest()) + " --mode gan", d.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mode"), std::string::npos);
  EXPECT_EQ(lcgan_run("", d.path()).code, 2);
  EXPECT_EQ(lcgan_run("--run-dir " + q(d.path()) + " synth train", d.path()).code, 2);
}

TEST_F(Cli, SeededTrainingRepeats) {
  TempDir d("seeded");
  for (const char* name : {"a", "b"}) {
    const auto r = lcgan_run("--seed 7 --width-mult 0.125 --run-dir " + q(d / name) + " train --manifest " +
                                 q(manifest()) + " --batch-size 2 --max-epochs 1",
                             d.path());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(without_wall(d / "a" / "train_log.jsonl"), without_wall(d / "b" / "train_log.jsonl"));
  EXPECT_FALSE(lines(d / "a" / "train_log.jsonl").empty());
  const auto cfg = nlohmann::json::parse(slurp(d / "a" / "train_config.json"));
  EXPECT_EQ(cfg["seed"], 7);
}

TEST_F(Cli, ModesShareTheGeneratorSpec) {
  const auto a = lcgan::load_generator<float>(checkpoint("cgan").string());
  const auto b = lcgan::load_generator<float>(checkpoint("cnn").string());
  EXPECT_EQ(a.net->spec(), b.net->spec());
  EXPECT_EQ(a.config.mode, lcgan::TrainMode::kCgan);
  EXPECT_EQ(b.config.mode, lcgan::TrainMode::kCnn);
}

TEST_F(Cli, EvalWritesComparisonTable) {
  TempDir d("eval");
  const std::string args = "--run-dir " + q(d.path()) + " eval --checkpoint " + q(checkpoint("cgan")) +
                           " --checkpoint " + q(checkpoint("cnn")) + " --manifest " + q(manifest());
  const auto r = lcgan_run(args, d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* token : {"CGAN", "CNN", "Developed", "Cultivated", "Water"}) {
    EXPECT_NE(r.out.find(token), std::string::npos) << token;
  }
  EXPECT_EQ(slurp(d / "table.txt"), r.out);
  const auto first = slurp(d / "report_CGAN.json");
  ASSERT_EQ(lcgan_run(args, d.path()).code, 0);
  EXPECT_EQ(slurp(d / "report_CGAN.json"), first);
  const auto report = lcgan::report_parse(first);
  EXPECT_EQ(report.split, "test");
}

TEST_F(Cli, EvalRejectsEmptyAndLeakingSplits) {
  TempDir d("evalbad");
  ASSERT_EQ(lcgan_run("--seed 2 synth -n 6 --n-test 0 --out " + q(d / "c"), d.path()).code, 0);
  auto r = lcgan_run("--run-dir " + q(d / "r") + " eval --checkpoint " + q(checkpoint("cgan")) +
                         " --manifest " + q(d / "c" / "manifest.tsv"),
                     d.path());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("zero tiles"), std::string::npos) << r.err;

  // Same tiles, but the held-out rows now carry a region the checkpoint was fit on.
  const auto m = lcgan::load_manifest(manifest().string());
  const auto fit_region = *m.fit_regions().begin();
  std::ofstream tsv(corpus() / "leaky.tsv");
  tsv << "# lcgan manifest v1\n";
  for (const auto& rec : m.records()) {
    const bool test = rec.split == lcgan::Split::kTest;
    tsv << rec.image << '\t' << rec.label << '\t' << (test ? fit_region : "elsewhere") << '\t'
        << lcgan::split_name(rec.split) << '\n';
  }
  tsv.close();
  r = lcgan_run("--run-dir " + q(d / "r") + " eval --checkpoint " + q(checkpoint("cgan")) + " --manifest " +
                    q(corpus() / "leaky.tsv"),
                d.path());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("leakage"), std::string::npos) << r.err;
  r = lcgan_run("--run-dir " + q(d / "r") + " eval --checkpoint " + q(checkpoint("cgan")) + " --manifest " +
                    q(manifest()) + " --split validation",
                d.path());
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, PredictOneTile) {
  TempDir d("predict");
  const auto m = lcgan::load_manifest(manifest().string());
  const auto tile = corpus() / m.records().front().image;
  const auto r = lcgan_run("--run-dir " + q(d.path()) + " predict --checkpoint " + q(checkpoint("cgan")) +
                               " --tile " + q(tile),
                           d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t maps = 0;
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(d.path())) {
    const auto name = e.path().filename().string();
    maps += name.ends_with(".lbl.lct");
    pngs += name.ends_with(".png");
  }
  EXPECT_EQ(maps, 1u);
  EXPECT_EQ(pngs, 1u);
}

TEST_F(Cli, PredictComposite) {
  TempDir d("composite");
  const auto m = lcgan::load_manifest(manifest().string());
  const auto tile = corpus() / m.records().front().image;
  const auto r = lcgan_run("--run-dir " + q(d.path()) + " predict --checkpoint " + q(checkpoint("cgan")) +
                               " --checkpoint " + q(checkpoint("cnn")) + " --tile " + q(tile) + " --composite",
                           d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  fs::path sheet;
  for (const auto& e : fs::directory_iterator(d.path())) {
    if (e.path().filename().string().ends_with(".composite.png")) sheet = e.path();
  }
  ASSERT_FALSE(sheet.empty());
  const auto img = lcgan::read_png(sheet.string());
  EXPECT_EQ(img.w, 5 * lcgan::kTileSize + 4 * 4);
  EXPECT_EQ(img.h, lcgan::kTileSize);
}

TEST_F(Cli, PredictMissingCheckpointNamesIt) {
  TempDir d("missing");
  const auto m = lcgan::load_manifest(manifest().string());
  const auto gone = d / "nowhere.ckpt";
  const auto r = lcgan_run("--run-dir " + q(d.path()) + " predict --checkpoint " + q(gone) + " --tile " +
                               q(corpus() / m.records().front().image),
                           d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(gone.string()), std::string::npos) << r.err;
}

TEST_F(Cli, PrepareIsRepeatable) {
  TempDir d("prepare");
  ASSERT_EQ(lcgan_run("--seed 4 synth -n 2 --scenes --out " + q(d / "scenes"), d.path()).code, 0);
  const auto scenes = d / "scenes" / "scenes.tsv";
  auto r = lcgan_run("--run-dir " + q(d / "a") + " prepare --scenes " + q(scenes), d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_GT(summary["kept"].get<int>(), 0);
  EXPECT_GT(summary["dropped"].get<int>(), 0);
  EXPECT_NE(r.err.find("dropped"), std::string::npos);
  ASSERT_EQ(lcgan_run("--run-dir " + q(d / "b") + " prepare --scenes " + q(scenes), d.path()).code, 0);
  EXPECT_EQ(slurp(d / "a" / "manifest.tsv"), slurp(d / "b" / "manifest.tsv"));
  EXPECT_EQ(slurp(d / "a" / "distribution.json"), slurp(d / "b" / "distribution.json"));
  EXPECT_TRUE(fs::exists(d / "a" / "distribution.png"));

  std::ofstream(d / "empty.tsv") << "";
  r = lcgan_run("--run-dir " + q(d / "c") + " prepare --scenes " + q(d / "empty.tsv"), d.path());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("no tiles"), std::string::npos) << r.err;
}

TEST_F(Cli, ResolvedConfigReplays) {
  TempDir d("replay");
  const auto first = d / "first";
  auto r = lcgan_run("--seed 5 --width-mult 0.125 --run-dir " + q(first) + " train --manifest " + q(manifest()) +
                         " --mode cnn --batch-size 2 --max-epochs 1",
                     d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  auto resolved = nlohmann::json::parse(slurp(first / "resolved_config.json"));
  EXPECT_EQ(resolved["train"]["mode"], "cnn");
  EXPECT_EQ(resolved["lcgan_version"], lcgan::kVersion);
  resolved["run-dir"] = (d / "second").string();
  std::ofstream(d / "replay.json") << resolved.dump(2);
  r = lcgan_run("--config " + q(d / "replay.json"), d.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(without_wall(first / "train_log.jsonl"), without_wall(d / "second" / "train_log.jsonl"));
  EXPECT_EQ(slurp(first / "train_config.json"), slurp(d / "second" / "train_config.json"));
}
