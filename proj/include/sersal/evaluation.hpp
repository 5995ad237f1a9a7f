#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sersal/annotator.hpp"
#include "sersal/data.hpp"
#include "sersal/matrix.hpp"

namespace sersal {

// Mann-Whitney AUC via midranks; ties count half. Throws DataError unless
// both classes are present and sizes match.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ConfidenceBin {
  double lo = 0.0, hi = 0.0;
  bool closed_hi = false;  // true for the last bin
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // 0 when n == 0
};

// Default edges 0.5, 0.6, ..., 1.0. Every bin is [lo, hi) except the last,
// which is [lo, hi].
std::vector<double> default_confidence_edges();
std::vector<ConfidenceBin> confidence_bin_report(const SoftLabelSet& confidences,
                                                 std::span<const int> gold,
                                                 std::span<const double> edges);

struct EvalReport {
  double auc = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  std::vector<ConfidenceBin> confidence_bins;
  double baseline_auc = 0.0;
  std::uint64_t seed = 0;
  std::string provenance;

  nlohmann::json to_json() const;
};

// Scores are positive-class probabilities; `confidences` may be empty, in
// which case the bins are built from (1 - s, s).
EvalReport evaluate(std::span<const double> scores, std::span<const int> gold,
                    std::string provenance, std::uint64_t seed, int baseline_trials = 100,
                    const SoftLabelSet* confidences = nullptr);

// Mean AUC of uniform random scores over `trials` draws.
double random_guessing_baseline(std::span<const int> labels, std::uint64_t seed, int trials = 100);

// Positive-class probability for one feature row.
using ScalarModel = std::function<double(std::span<const double>)>;

struct ShapleyEstimate {
  std::vector<double> values;
  std::vector<double> standard_errors;
  std::vector<std::string> feature_names;
  int mc_samples = 0;
  std::uint64_t seed = 0;
  double prediction = 0.0;       // f(x)
  double background_mean = 0.0;  // mean of f over the background rows
  double sum_standard_error = 0.0;  // of the per-sample sum of contributions

  nlohmann::json to_json() const;
};

// Permutation-sampling Shapley values. Each sample draws one feature order
// and one background row and walks the order switching features from the
// background value to x's value. Samples run in parallel; each sample's
// randomness is keyed by (seed, sample index), so results do not depend on
// the thread count.
ShapleyEstimate mc_shapley(const ScalarModel& model, const Matrix& background,
                           std::span<const double> x, int mc_samples, std::uint64_t seed);

// Plot-data files (comma-separated, one header line):
//   confidence_bins.csv   lo,hi,n,accuracy
//   loop_metrics.csv      t,des_accuracy,des_loss,external_auc,student_test_auc,annotator_test_auc
//   shapley_loop<t>.csv   feature,value,std_error
// Empty metric fields mean "not measured".
struct LoopMetricsRow {
  int t = 0;
  double des_accuracy = 0.0;
  double des_loss = 0.0;
  std::optional<double> external_auc;
  std::optional<double> student_test_auc;
  std::optional<double> annotator_test_auc;
};

void emit_confidence_bins(const std::vector<ConfidenceBin>& bins, const std::filesystem::path& dir);
void emit_loop_metrics(const std::vector<LoopMetricsRow>& rows, const std::filesystem::path& dir);
void emit_shapley(const ShapleyEstimate& estimate, int loop, const std::filesystem::path& dir);

}  // namespace sersal
