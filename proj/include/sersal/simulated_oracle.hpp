#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <unordered_map>
#include <vector>

#include "sersal/annotator.hpp"

namespace sersal {

struct SimulatedOracleConfig {
  // F feature weights followed by the bias of the logistic ground truth.
  std::vector<double> ground_truth_weights;
  double flip_rate = 0.0;            // rows whose emitted confidence is inverted
  double confidence_noise_sd = 0.0;  // logit-space Gaussian jitter
  double finetune_blend_rate = 0.5;  // beta
  std::uint64_t seed = 0;
  // Rows that answer with an unparseable refusal (failure-path testing).
  double refuse_rate = 0.0;
  // Ridge strength of the surrogate fitted to each fine-tune corpus.
  double surrogate_l2 = 1e-2;

  nlohmann::json to_json() const;
  static SimulatedOracleConfig from_json(const nlohmann::json& j);
  static SimulatedOracleConfig load(const std::filesystem::path& path);
};

// Offline stand-in for a fine-tunable LLM. Emitted logit:
//   l0(x) = s * (w.x + b + noise_sd * e),  s = -1 on flipped rows
// where e and the flip draw depend only on (seed, row id). Each fine-tune
// adds one stage l_{k+1}(x) = (1 - beta) l_k(x) + beta c_k(x), with c_k the
// corpus logit for prompts seen in the corpus and a ridge-logistic surrogate
// fitted to the corpus elsewhere.
class SimulatedOracle final : public AnnotatorProvider {
 public:
  struct Stage {
    std::unordered_map<std::uint64_t, double> memorized;  // prompt hash -> logit
    std::vector<double> surrogate;                        // F weights + bias
  };

  explicit SimulatedOracle(SimulatedOracleConfig config, std::vector<Stage> stages = {});

  std::string identity() const override;
  bool can_score() const override { return true; }
  bool can_finetune() const override { return true; }
  std::string complete(const AnnotationQuery& query) const override;
  std::shared_ptr<AnnotatorProvider> finetune(const FinetuneCorpus& corpus) const override;
  nlohmann::json to_json() const override;
  static std::shared_ptr<SimulatedOracle> from_json(const nlohmann::json& j);

  double ground_truth_probability(std::span<const double> features) const;
  double base_logit(std::uint64_t row_id, std::span<const double> features) const;
  double probability(const AnnotationQuery& query) const;
  bool is_flipped(std::uint64_t row_id) const;

  const SimulatedOracleConfig& config() const { return config_; }
  std::size_t num_finetunes() const { return stages_.size(); }

 private:
  SimulatedOracleConfig config_;
  std::vector<Stage> stages_;
};

}  // namespace sersal
