#pragma once

#include <cstdint>
#include <vector>

#include "sersal/data.hpp"
#include "sersal/simulated_oracle.hpp"

namespace sersal {

// Logistic benchmark: features ~ N(0, 1), gold ~ Bernoulli(sigmoid(w.x + b))
// with |w| = signal. Only the first `informative` features carry weight (all
// of them when 0). The matching oracle config shares w and b.
struct SyntheticConfig {
  std::size_t rows = 2000;
  std::size_t features = 10;
  std::size_t informative = 0;
  double signal = 3.0;
  double bias = 0.0;
  double flip_rate = 0.0;
  double confidence_noise_sd = 0.0;
  double finetune_blend_rate = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
  Dataset data;  // carries gold labels
  SimulatedOracleConfig oracle;
};

SyntheticBenchmark make_synthetic(const SyntheticConfig& config);

}  // namespace sersal
