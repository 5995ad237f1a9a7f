#include "sersal/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "sersal/error.hpp"
#include "sersal/rng.hpp"

namespace sersal {

SyntheticBenchmark make_synthetic(const SyntheticConfig& config) {
  if (config.rows < 4 || config.features < 1) throw ConfigError("synthetic: too few rows or features");
  const std::size_t n = config.rows, f = config.features;

  auto schema = std::make_shared<FeatureSchema>();
  for (std::size_t j = 0; j < f; ++j)
    schema->columns.push_back({"x" + std::to_string(j + 1), FeatureKind::Numerical, std::nullopt});
  schema->label_column = "y";
  schema->positive_class_name = "1";
  schema->task_description = "the positive outcome";

  std::vector<double> w(f);
  double norm = 0.0;
  const std::size_t k = config.informative == 0 ? f : std::min(config.informative, f);
  for (std::size_t j = 0; j < k; ++j) {
    w[j] = keyed_normal(config.seed, j, 1);
    norm += w[j] * w[j];
  }
  norm = std::sqrt(norm);
  for (auto& v : w) v *= config.signal / norm;

  Matrix values(n, f);
  std::vector<std::string> text(n * f);
  std::vector<std::uint64_t> ids(n);
  std::vector<int> gold(n);
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    double z = config.bias;
    for (std::size_t j = 0; j < f; ++j) {
      // Round to the rendered precision so prompt text and values agree.
      std::snprintf(buf, sizeof buf, "%.4f", keyed_normal(config.seed, i * f + j, 2));
      values(i, j) = std::strtod(buf, nullptr);
      text[i * f + j] = buf;
      z += w[j] * values(i, j);
    }
    ids[i] = i;
    gold[i] = keyed_uniform(config.seed, i, 3) < sigmoid(z) ? 1 : 0;
  }

  SyntheticBenchmark out;
  out.data = Dataset(schema, std::move(values), std::move(text), std::vector<std::vector<std::string>>(f),
                     std::move(ids), std::move(gold));
  out.oracle.ground_truth_weights = w;
  out.oracle.ground_truth_weights.push_back(config.bias);
  out.oracle.flip_rate = config.flip_rate;
  out.oracle.confidence_noise_sd = config.confidence_noise_sd;
  out.oracle.finetune_blend_rate = config.finetune_blend_rate;
  out.oracle.seed = mix_seed(config.seed, 0x0AC1E);
  return out;
}

}  // namespace sersal
