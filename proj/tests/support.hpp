#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "lcgan.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("lcgan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

template <typename T>
lcgan::Tensor<T> random_tensor(lcgan::Shape s, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  lcgan::Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(u(gen));
  return t;
}

/// Random per-pixel probability vectors over the channel axis.
inline lcgan::Tensor<double> random_simplex(lcgan::Shape s, std::mt19937_64& gen, double floor = 0.02) {
  std::uniform_real_distribution<double> u(floor, 1.0);
  lcgan::Tensor<double> t(s);
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double sum = 0.0;
        for (int c = 0; c < s.c; ++c) sum += (t.at(n, c, y, x) = u(gen));
        for (int c = 0; c < s.c; ++c) t.at(n, c, y, x) /= sum;
      }
    }
  }
  return t;
}

inline lcgan::LabelMap random_labels(int h, int w, std::mt19937_64& gen, int classes = lcgan::kNumClasses) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  lcgan::LabelMap m(h, w);
  for (auto& v : m.v) v = static_cast<std::uint8_t>(u(gen));
  return m;
}

/// Random weights that are positive and sum to 1.
inline std::vector<double> random_weights(int c, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(c);
  double sum = 0.0;
  for (auto& v : w) sum += (v = u(gen));
  for (auto& v : w) v /= sum;
  return w;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)});
}

}  // namespace testing_support
