#include <gtest/gtest.h>

#include "support.hpp"

using namespace lcgan;
using testing_support::random_labels;
using testing_support::TempDir;

namespace {

// Recomputes per-class F1 (x100) from the confusion matrix.
std::array<double, kNumClasses> f1_from_matrix(const ConfusionMatrix& m) {
  std::array<double, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    double tp = static_cast<double>(m[c][c]);
    double row = 0.0;
    double col = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += static_cast<double>(m[c][k]);
      col += static_cast<double>(m[k][c]);
    }
    // F1 = 2TP / (2TP + FP + FN) = 2TP / (row + col).
    out[c] = row + col > 0 && tp > 0 ? 100.0 * 2.0 * tp / (row + col) : 0.0;
  }
  return out;
}

}  // namespace

TEST(Decode, OneHotRoundTrip) {
  std::mt19937_64 gen(1);
  for (int i = 0; i < 10; ++i) {
    const auto m = random_labels(9, 4, gen);
    EXPECT_EQ(decode(one_hot<double>(m)).v, m.v);
  }
}

TEST(Decode, UniformTiesGoToClassZero) {
  Tensor<float> t(Shape{1, 6, 2, 2});
  t.fill(1.0f / 6);
  for (auto v : decode(t).v) EXPECT_EQ(v, 0);
  Tensor<float> u(Shape{1, 6, 1, 1});
  u.vec() = {0.1f, 0.3f, 0.1f, 0.3f, 0.1f, 0.1f};
  EXPECT_EQ(decode(u).v[0], 1);
}

TEST(F1, PerfectPredictionScoresHundred) {
  LabelMap m(2, 3);
  m.v = {0, 1, 2, 2, 1, 0};
  const std::vector<LabelMap> p{m};
  const auto r = f1_scores(p, p);
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(r.scores[c].f1, 100.0);
  for (int c = 3; c < 6; ++c) {
    EXPECT_EQ(r.scores[c].f1, 0.0);
    EXPECT_TRUE(r.scores[c].undefined);
  }
}

TEST(F1, DisjointClassScoresZero) {
  LabelMap truth(1, 4, 2);
  LabelMap pred(1, 4, 3);
  const auto r = f1_scores(std::vector<LabelMap>{pred}, std::vector<LabelMap>{truth});
  EXPECT_EQ(r.scores[2].f1, 0.0);
  EXPECT_EQ(r.scores[3].f1, 0.0);
}

TEST(F1, HandCountedClass) {
  // Class 1: TP=2, FP=1, FN=1.
  LabelMap truth(1, 5);
  LabelMap pred(1, 5);
  truth.v = {1, 1, 1, 0, 0};
  pred.v = {1, 1, 0, 1, 0};
  const auto r = f1_scores(std::vector<LabelMap>{pred}, std::vector<LabelMap>{truth});
  EXPECT_NEAR(r.scores[1].precision, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.scores[1].recall, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.scores[1].f1, 66.667, 1e-3);
}

TEST(F1, PooledOverTilesNotAveraged) {
  // Tile a is all class 0 predicted right; tile b misses its class-0 pixel.
  LabelMap ta(1, 3, 0);
  LabelMap pa = ta;
  LabelMap tb(1, 1, 0);
  LabelMap pb(1, 1, 1);
  const std::vector<LabelMap> pred{pa, pb};
  const std::vector<LabelMap> truth{ta, tb};
  const auto r = f1_scores(pred, truth, true);
  // Pooled: TP=3, FN=1, FP=0 -> 2*3/(2*3+1) = 6/7.
  EXPECT_NEAR(r.scores[0].f1, 600.0 / 7.0, 1e-9);
  ASSERT_TRUE(r.per_tile_mean_f1.has_value());
  EXPECT_NEAR((*r.per_tile_mean_f1)[0], 50.0, 1e-9);
}

TEST(F1, ConfusionIdentities) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabelMap> pred;
    std::vector<LabelMap> truth;
    for (int k = 0; k < 3; ++k) {
      pred.push_back(random_labels(5, 6, gen));
      truth.push_back(random_labels(5, 6, gen));
    }
    const auto m = confusion(pred, truth);
    std::uint64_t total = 0;
    for (const auto& row : m)
      for (auto v : row) total += v;
    EXPECT_EQ(total, 90u);
    const auto r = f1_scores(pred, truth);
    const auto f = f1_from_matrix(m);
    for (int c = 0; c < kNumClasses; ++c) EXPECT_NEAR(r.scores[c].f1, f[c], 1e-9);
    const auto via = scores_from_confusion(m);
    for (int c = 0; c < kNumClasses; ++c) EXPECT_NEAR(via[c].f1, r.scores[c].f1, 1e-9);
  }
}

TEST(F1, PerfectPredictionGivesDiagonalMatrix) {
  std::mt19937_64 gen(3);
  const std::vector<LabelMap> p{random_labels(6, 6, gen)};
  const auto m = confusion(p, p);
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j)
      if (i != j) EXPECT_EQ(m[i][j], 0u);
}

TEST(F1, EmptyPredictionSetIsError) {
  const std::vector<LabelMap> none;
  EXPECT_THROW(f1_scores(none, none), Error);
  EXPECT_THROW(comparison_table(std::vector<MetricsReport>{}), Error);
}

TEST(Report, RoundTripAndColumnOrder) {
  std::mt19937_64 gen(4);
  std::vector<LabelMap> pred{random_labels(8, 8, gen)};
  std::vector<LabelMap> truth{random_labels(8, 8, gen)};
  auto r = f1_scores(pred, truth, true);
  r.model = "CGAN";
  r.split = "test";
  const auto text = report_emit(r);
  EXPECT_EQ(report_parse(text), r);
  const auto table = comparison_table(std::vector<MetricsReport>{r, r});
  const std::vector<std::string> cols = {"Open Water", "Developed", "Forest", "Grass", "Pasture", "Cultivated"};
  std::size_t at = 0;
  for (const auto& c : cols) {
    const auto pos = table.find(c, at);
    ASSERT_NE(pos, std::string::npos) << c;
    at = pos + c.size();
  }
  EXPECT_NE(table.find("test        CGAN"), std::string::npos);
}

TEST(Render, SolidWaterAndInverse) {
  const auto tax = ClassTaxonomy::nlcd2016();
  const auto img = render(LabelMap(3, 3, 0), tax.colormap());
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(img.pixel(y, x), (Rgb{0, 0, 139}));
  std::mt19937_64 gen(5);
  const auto m = random_labels(12, 7, gen);
  EXPECT_EQ(inverse_render(render(m, tax.colormap()), tax.colormap()).v, m.v);
}

TEST(Render, CompositeLayoutAndPng) {
  TempDir dir("render");
  const auto tax = ClassTaxonomy::nlcd2016();
  RawImage raw(4, 8, 8);
  for (auto& v : raw.v) v = 2000;
  std::vector<RgbImage> panels = {raw_panel(raw, false), raw_panel(raw, true),
                                  render(LabelMap(8, 8, 0), tax.colormap()),
                                  render(LabelMap(8, 8, 1), tax.colormap()),
                                  render(LabelMap(8, 8, 2), tax.colormap())};
  const auto sheet = composite(panels, 4);
  EXPECT_EQ(sheet.w, 5 * 8 + 4 * 4);
  EXPECT_EQ(sheet.h, 8);
  EXPECT_EQ(sheet.pixel(0, 8), (Rgb{255, 255, 255}));
  EXPECT_EQ(sheet.pixel(0, 2 * 12), tax.class_color(0));
  EXPECT_EQ(sheet.pixel(0, 4 * 12), tax.class_color(2));
  const auto path = (dir / "sheet.png").string();
  write_png(path, sheet);
  const auto back = read_png(path);
  EXPECT_EQ(back.rgb, sheet.rgb);
  EXPECT_THROW(read_png((dir / "missing.png").string()), IoError);
}
