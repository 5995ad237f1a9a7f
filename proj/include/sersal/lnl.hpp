#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sersal/annotator.hpp"
#include "sersal/data.hpp"
#include "sersal/model.hpp"

namespace sersal {

struct TrainConfig {
  // 1e-4 leaves the MLP student near 0.5 after early stopping, and reverse
  // sharpening then turns any small offset into one-sided annotator targets.
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  double tau = 0.9;     // clean-posterior threshold for the labeled partition
  double es_tau = 0.9;  // max-confidence threshold for the early-stopping set
  double lambda_u = 25.0;
  // lambda_u grows linearly over this many epochs after warmup; 0 disables.
  int lambda_u_rampup_epochs = 16;
  // Weight of the class-prior penalty sum_c pi_c log(pi_c / mean_p_c); pi is
  // the mean annotator confidence over the training rows.
  double lambda_r = 5.0;
  int patience = 5;
  std::vector<double> sharpen_temperatures = {0.5, 5.0, 10.0};
  double reverse_sharpen_temperature = 0.1;
  int warmup_epochs = 5;
  int max_epochs = 100;  // includes warmup
  double mixup_alpha = 4.0;
  std::uint64_t seed = 0;

  int gmm_max_iters = 100;
  double gmm_tol = 1e-6;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embedding_dim = 8;

  // Ablation switches.
  bool early_stopping = true;
  bool use_mixup = true;
  bool hard_labels = false;

  bool parallel_temperatures = true;

  // Throws ConfigError unless tau in (0.5, 1], temperatures > 0, lambda_u >= 0.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

// ---------------------------------------------------------------------------
// Two-component 1-D Gaussian mixture over per-sample losses.

struct GmmFit {
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  int clean_component = 0;  // lower-mean component
  int iterations_run = 0;
  double final_log_likelihood = 0.0;
  bool degenerate = false;
  // Log-likelihood after initialization and after every EM iteration.
  std::vector<double> log_likelihood_trace;
};

inline constexpr double kGmmVarianceFloor = 1e-6;

// EM from quartile initialization (means at the 25th/75th percentiles) until
// the log-likelihood gain drops below `tol` or `max_iters` is reached. Throws
// DataError when fewer than 4 losses are given. Identical losses give a
// degenerate fit whose posteriors are all 0.5.
GmmFit fit_gmm_1d(std::span<const double> losses, int max_iters = 100, double tol = 1e-6,
                  std::uint64_t seed = 0);

// Posterior of the clean component; 0.5 for a degenerate fit.
double clean_posterior(const GmmFit& gmm, double loss);

struct Partition {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<double> labeled_w;
  std::vector<double> unlabeled_w;
  // Set when no posterior reached the threshold and the top tenth was used.
  bool fallback = false;
};

Partition partition(std::span<const double> posteriors, double tau);

// ---------------------------------------------------------------------------
// Label manipulation

// p_c^(1/T) / sum_k p_k^(1/T), evaluated in log space.
Prob2 sharpen(const Prob2& p, double temperature);
// sharpen(w * label + (1 - w) * pred, T)
Prob2 co_refine(const Prob2& label, double w, const Prob2& pred, double temperature);
// sharpen of the mean of two predictions.
Prob2 co_guess(const Prob2& pred_a, const Prob2& pred_b, double temperature);

struct MixupResult {
  std::vector<double> x;
  Prob2 y;
  double lambda = 1.0;  // the dominant weight max(l, 1 - l)
};

// Draws l ~ Beta(alpha, alpha) and interpolates with max(l, 1 - l).
MixupResult mixup(std::span<const double> x1, const Prob2& y1, std::span<const double> x2,
                  const Prob2& y2, double alpha, std::mt19937_64& rng);
MixupResult mixup_with_lambda(std::span<const double> x1, const Prob2& y1,
                              std::span<const double> x2, const Prob2& y2, double lambda);
double sample_mixup_lambda(double alpha, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Early stopping set

struct EarlyStopSet {
  std::vector<std::size_t> rows;  // indices into the training set
  std::vector<std::uint64_t> ids;
  std::vector<int> labels;  // hard labels
  double tau = 0.9;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
};

EarlyStopSet select_early_stop_set(const SoftLabelSet& labels, std::span<const std::uint64_t> ids,
                                   double tau);

// ---------------------------------------------------------------------------
// Model pair

struct ModelPair {
  SmallModel a;
  SmallModel b;

  // Mean of the two networks' probabilities.
  Matrix predict(const Matrix& features) const;
  Matrix predict(const Dataset& ds) const { return predict(ds.values()); }
};

std::vector<Prob2> to_prob2(const Matrix& probs);

// Soft cross-entropy of each row against its label, min-max normalized to
// [0, 1]; all 0.5 when every raw loss is equal.
std::vector<double> per_sample_losses(const SmallModel& model, const Matrix& features,
                                      const SoftLabelSet& labels);
std::vector<double> min_max_normalize(std::span<const double> raw);

// Mean hard-label cross-entropy and accuracy of the ensemble on D_es.
double early_stop_loss(const ModelPair& pair, const Matrix& features, const EarlyStopSet& es);
double early_stop_accuracy(const ModelPair& pair, const Matrix& features, const EarlyStopSet& es);

// Semi-supervised objective on one mixed batch. Rows flagged labeled use
// cross-entropy (L_x, mean over labeled rows); the rest use mean squared error
// (L_u, mean over rows and classes). Inputs are mixed as
//   h'_i = lambda h_i + (1 - lambda) h_perm[i]
// in the embedded representation. A prior penalty
//   L_r = sum_c pi_c log(pi_c / mean_i p_ic)
// keeps the batch-mean prediction near `prior`; total = L_x + lambda_u L_u
// + lambda_r L_r. Gradients are accumulated into `grad` when it is non-empty.
struct BatchLoss {
  double lx = 0.0;
  double lu = 0.0;
  double lr = 0.0;
  double total = 0.0;
};
struct LossWeights {
  double lambda_u = 25.0;
  double lambda_r = 5.0;
  Prob2 prior{0.5, 0.5};
};
BatchLoss semi_supervised_loss(const SmallModel& model, const Matrix& features,
                               std::span<const Prob2> targets, std::span<const bool> labeled,
                               std::span<const std::size_t> perm, double lambda,
                               const LossWeights& weights, std::span<double> grad);

struct EpochDiagnostics {
  int epoch = 0;
  bool warmup = false;
  std::size_t labeled_a = 0, unlabeled_a = 0, labeled_b = 0, unlabeled_b = 0;
  bool fallback_a = false, fallback_b = false;
  double lx_a = 0.0, lu_a = 0.0, lx_b = 0.0, lu_b = 0.0;
  double lr_a = 0.0, lr_b = 0.0;
  double des_loss = 0.0;
  bool gmm_degenerate = false;
};

struct PairOptimizers {
  AdamState a;
  AdamState b;
  explicit PairOptimizers(double lr = 1e-4) : a(lr), b(lr) {}
};

// One pass of plain soft-label training for both networks.
EpochDiagnostics warmup_epoch(ModelPair& pair, PairOptimizers& opt, const Matrix& features,
                              const SoftLabelSet& labels, const TrainConfig& config, int epoch);

// One adapted-DivideMix epoch: each network is trained on the partition
// induced by the other network's per-sample losses.
EpochDiagnostics semi_supervised_epoch(ModelPair& pair, PairOptimizers& opt,
                                       const Matrix& features, const SoftLabelSet& labels,
                                       const TrainConfig& config, double temperature, int epoch);

// ---------------------------------------------------------------------------
// Teaching

struct BranchReport {
  double temperature = 0.0;
  std::vector<EpochDiagnostics> epochs;
  int best_epoch = 0;
  int stop_epoch = 0;
  double final_des_loss = 0.0;  // loss of the returned pair on D_es
  bool early_stopped = false;
};

struct TeachReport {
  std::vector<BranchReport> branches;
  double chosen_temperature = 0.0;
  std::size_t chosen_branch = 0;
  std::size_t des_size = 0;
  double des_tau = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t seed_a = 0, seed_b = 0;

  nlohmann::json to_json() const;
};

struct TeachResult {
  ModelPair pair;
  TeachReport report;
  EarlyStopSet des;
};

// Builds D_es, then for each candidate temperature warms up and trains a
// fresh pair with early stopping on D_es loss; keeps the temperature whose
// pair has the lowest D_es loss. Throws TrainingError on an empty D_es.
TeachResult teach(const Dataset& train, const SoftLabelSet& labels, const TrainConfig& config);

// Runs one temperature branch; exposed for tests.
std::pair<ModelPair, BranchReport> teach_branch(const Matrix& features, const SoftLabelSet& labels,
                                                const EarlyStopSet& des, const ModelSpec& spec,
                                                const TrainConfig& config, double temperature);

}  // namespace sersal
