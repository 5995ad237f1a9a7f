#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "sersal/data.hpp"
#include "sersal/model.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sersal_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(SERSAL_TEST_DATA) / name;
}

// All-numerical schema x1..xF with label "y", positive class "1".
inline sersal::FeatureSchema numeric_schema(std::size_t f) {
  sersal::FeatureSchema s;
  for (std::size_t j = 0; j < f; ++j) s.columns.push_back({"x" + std::to_string(j + 1)});
  s.label_column = "y";
  s.positive_class_name = "1";
  s.task_description = "the positive outcome";
  return s;
}

// Smallest |pre-activation| over the hidden units for an embedded input;
// finite differences are only valid away from the ReLU kinks.
inline double kink_margin(const sersal::SmallModel& m, const sersal::Matrix& input) {
  sersal::ForwardCache cache;
  m.forward_input(input, cache);
  const auto p = m.parameters();
  double margin = 1e300;
  for (std::size_t l = 0; l + 1 < m.layers().size(); ++l) {
    const auto& L = m.layers()[l];
    for (std::size_t r = 0; r < input.rows(); ++r)
      for (std::size_t j = 0; j < L.out; ++j) {
        double a = p[L.bias_offset + j];
        for (std::size_t k = 0; k < L.in; ++k)
          a += p[L.weight_offset + j * L.in + k] * cache.activations[l](r, k);
        margin = std::min(margin, std::abs(a));
      }
  }
  return margin;
}

}  // namespace testing
