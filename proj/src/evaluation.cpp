#include "sersal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "sersal/error.hpp"
#include "sersal/io.hpp"
#include "sersal/rng.hpp"

namespace sersal {

using nlohmann::json;

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DataError("auc: " + std::to_string(scores.size()) + " scores for " +
                    std::to_string(labels.size()) + " labels");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc is undefined with a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of positive midranks; ranks are 1-based so each tie group gets the
  // mean of its positions.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum += mid;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<double> default_confidence_edges() { return {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

std::vector<ConfidenceBin> confidence_bin_report(const SoftLabelSet& confidences,
                                                 std::span<const int> gold,
                                                 std::span<const double> edges) {
  if (edges.size() < 2) throw ConfigError("confidence bins need at least two edges");
  if (!std::is_sorted(edges.begin(), edges.end()))
    throw ConfigError("confidence bin edges must be increasing");
  if (gold.size() != confidences.size()) throw DataError("confidence bins: label count mismatch");
  std::vector<ConfidenceBin> bins(edges.size() - 1);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    bins[k].lo = edges[k];
    bins[k].hi = edges[k + 1];
    bins[k].closed_hi = k + 1 == bins.size();
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const Prob2& p = confidences.confidences[i];
    const double c = p.max();
    // Out-of-range confidences land in the nearest end bin.
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(edges.begin(), edges.end(), c) - edges.begin());
    k = k == 0 ? 0 : std::min(k - 1, bins.size() - 1);
    const int pred = i < confidences.hard_labels.size() ? confidences.hard_labels[i] : p.argmax();
    ++bins[k].n;
    bins[k].correct += pred == gold[i];
  }
  for (auto& b : bins)
    b.accuracy = b.n ? static_cast<double>(b.correct) / static_cast<double>(b.n) : 0.0;
  return bins;
}

double random_guessing_baseline(std::span<const int> labels, std::uint64_t seed, int trials) {
  if (trials < 1) throw ConfigError("random guessing baseline needs at least one trial");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(labels.size());
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    for (auto& s : scores) s = u(rng);
    total += auc(scores, labels);
  }
  return total / trials;
}

json EvalReport::to_json() const {
  json bins = json::array();
  for (const auto& b : confidence_bins)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"closed_hi", b.closed_hi}, {"n", b.n},
                    {"accuracy", b.accuracy}});
  return {{"auc", auc},
          {"n_pos", n_pos},
          {"n_neg", n_neg},
          {"baseline_auc", baseline_auc},
          {"seed", seed},
          {"provenance", provenance},
          {"confidence_bins", bins}};
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> gold,
                    std::string provenance, std::uint64_t seed, int baseline_trials,
                    const SoftLabelSet* confidences) {
  EvalReport r;
  r.auc = auc(scores, gold);
  for (int y : gold) (y == 1 ? r.n_pos : r.n_neg)++;
  r.baseline_auc = random_guessing_baseline(gold, seed, baseline_trials);
  r.seed = seed;
  r.provenance = std::move(provenance);
  const auto edges = default_confidence_edges();
  if (confidences) {
    r.confidence_bins = confidence_bin_report(*confidences, gold, edges);
  } else {
    r.confidence_bins = confidence_bin_report(SoftLabelSet::from_positive(scores), gold, edges);
  }
  return r;
}

json ShapleyEstimate::to_json() const {
  return {{"values", values},
          {"standard_errors", standard_errors},
          {"feature_names", feature_names},
          {"mc_samples", mc_samples},
          {"seed", seed},
          {"prediction", prediction},
          {"background_mean", background_mean},
          {"sum_standard_error", sum_standard_error}};
}

ShapleyEstimate mc_shapley(const ScalarModel& model, const Matrix& background,
                           std::span<const double> x, int mc_samples, std::uint64_t seed) {
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (background.rows() == 0) throw DataError("shapley: empty background");
  const std::size_t f = x.size();
  if (background.cols() != f) throw DataError("shapley: background width differs from the row");

  const auto m = static_cast<std::size_t>(mc_samples);
  Matrix contrib(m, f);
  const auto mi = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < mi; ++s) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(s), 0x5A));
    std::vector<std::size_t> order(f);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, background.rows() - 1)(rng);
    std::vector<double> z(background.row(b).begin(), background.row(b).end());
    double prev = model(z);
    for (std::size_t j : order) {
      z[j] = x[j];
      const double cur = model(z);
      contrib(static_cast<std::size_t>(s), j) = cur - prev;
      prev = cur;
    }
  }

  ShapleyEstimate est;
  est.mc_samples = mc_samples;
  est.seed = seed;
  est.values.assign(f, 0.0);
  est.standard_errors.assign(f, 0.0);
  std::vector<double> sums(m, 0.0);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t j = 0; j < f; ++j) {
      est.values[j] += contrib(s, j);
      sums[s] += contrib(s, j);
    }
  const double md = static_cast<double>(m);
  for (auto& v : est.values) v /= md;
  // Standard error of the mean; zero when a single sample gives no spread.
  auto std_error = [&](auto&& value_of, double mean) {
    if (m < 2) return 0.0;
    double ss = 0.0;
    for (std::size_t s = 0; s < m; ++s) ss += (value_of(s) - mean) * (value_of(s) - mean);
    return std::sqrt(ss / (md - 1.0) / md);
  };
  for (std::size_t j = 0; j < f; ++j)
    est.standard_errors[j] = std_error([&](std::size_t s) { return contrib(s, j); }, est.values[j]);
  const double sum_mean = std::accumulate(sums.begin(), sums.end(), 0.0) / md;
  est.sum_standard_error = std_error([&](std::size_t s) { return sums[s]; }, sum_mean);

  est.prediction = model(x);
  double bg = 0.0;
  for (std::size_t r = 0; r < background.rows(); ++r) bg += model(background.row(r));
  est.background_mean = bg / static_cast<double>(background.rows());
  return est;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StateError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

void emit_confidence_bins(const std::vector<ConfidenceBin>& bins, const std::filesystem::path& dir) {
  ensure_dir(dir);
  std::string out = "lo,hi,n,accuracy\n";
  for (const auto& b : bins)
    out += fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.n) + "," + fmt(b.accuracy) + "\n";
  write_file_atomic(dir / "confidence_bins.csv", out);
}

void emit_loop_metrics(const std::vector<LoopMetricsRow>& rows, const std::filesystem::path& dir) {
  ensure_dir(dir);
  std::string out = "t,des_accuracy,des_loss,external_auc,student_test_auc,annotator_test_auc\n";
  for (const auto& r : rows)
    out += std::to_string(r.t) + "," + fmt(r.des_accuracy) + "," + fmt(r.des_loss) + "," +
           fmt(r.external_auc) + "," + fmt(r.student_test_auc) + "," + fmt(r.annotator_test_auc) +
           "\n";
  write_file_atomic(dir / "loop_metrics.csv", out);
}

void emit_shapley(const ShapleyEstimate& est, int loop, const std::filesystem::path& dir) {
  ensure_dir(dir);
  std::string out = "feature,value,std_error\n";
  for (std::size_t j = 0; j < est.values.size(); ++j) {
    const std::string name =
        j < est.feature_names.size() ? est.feature_names[j] : "f" + std::to_string(j);
    out += name + "," + fmt(est.values[j]) + "," + fmt(est.standard_errors[j]) + "\n";
  }
  write_file_atomic(dir / ("shapley_loop" + std::to_string(loop) + ".csv"), out);
}

}  // namespace sersal
