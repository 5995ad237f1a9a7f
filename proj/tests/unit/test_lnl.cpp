#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sersal/error.hpp"
#include "sersal/evaluation.hpp"
#include "sersal/lnl.hpp"
#include "sersal/synthetic.hpp"

using namespace sersal;

namespace {

ModelSpec small_mixed_spec() {
  ModelSpec s;
  s.categorical = {false, true, false};
  s.cardinalities = {3};
  s.embedding_dim = 2;
  s.hidden = {6, 4};
  return s;
}

Matrix small_mixed_batch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, 0) = nd(rng);
    m(i, 1) = static_cast<double>(rng() % 3);
    m(i, 2) = nd(rng);
  }
  return m;
}

// Reference value of the objective computed from forward() alone.
double objective_reference(const SmallModel& m, const Matrix& features,
                           const std::vector<Prob2>& targets, const std::vector<bool>& labeled,
                           const std::vector<std::size_t>& perm, double lambda, const LossWeights& w) {
  const std::size_t n = features.rows();
  Matrix input;
  m.embed(features, input);
  Matrix mixed(n, input.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < input.cols(); ++k)
      mixed(i, k) = lambda * input(i, k) + (1 - lambda) * input(perm[i], k);
  ForwardCache c;
  m.forward_input(mixed, c);
  double lx = 0, lu = 0;
  std::size_t nl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q1 = lambda * targets[i].pos + (1 - lambda) * targets[perm[i]].pos;
    const double p1 = c.probs(i, 1), p0 = c.probs(i, 0);
    if (labeled[i]) {
      lx += -((1 - q1) * std::log(p0) + q1 * std::log(p1));
      ++nl;
    } else {
      lu += (p0 - (1 - q1)) * (p0 - (1 - q1)) + (p1 - q1) * (p1 - q1);
    }
  }
  lx /= static_cast<double>(nl);
  lu /= static_cast<double>(2 * (n - nl));
  const Matrix plain = forward(m, features);
  double mean1 = 0;
  for (std::size_t i = 0; i < n; ++i) mean1 += plain(i, 1) / static_cast<double>(n);
  const double lr = w.prior.neg * std::log(w.prior.neg / (1 - mean1)) +
                    w.prior.pos * std::log(w.prior.pos / mean1);
  return lx + w.lambda_u * lu + w.lambda_r * lr;
}

}  // namespace

TEST_CASE("train config validation and json round trip") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.tau == 0.9);
  CHECK(c.lambda_u == 25.0);
  CHECK(c.patience == 5);
  CHECK(c.sharpen_temperatures == std::vector<double>{0.5, 5.0, 10.0});
  CHECK(c.reverse_sharpen_temperature == 0.1);
  c.tau = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.sharpen_temperatures = {0.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda_u = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 3e-3;
  c.hard_labels = true;
  c.seed = 42;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.learning_rate == 3e-3);
  CHECK(back.hard_labels);
  CHECK(back.seed == 42);
}

TEST_CASE("per-sample losses are min-max normalized") {
  const auto n = min_max_normalize(std::vector<double>{1.0, 3.0, 2.0});
  CHECK(n == std::vector<double>{0.0, 1.0, 0.5});
  CHECK(min_max_normalize(std::vector<double>{2.0, 2.0}) == std::vector<double>{0.5, 0.5});

  // A zero network predicts (0.5, 0.5) everywhere: all raw losses tie.
  const SmallModel zero = SmallModel::zeros(small_mixed_spec());
  const auto labels = SoftLabelSet::from_positive(std::vector<double>{0.9, 0.2, 0.6, 0.5});
  const auto l = per_sample_losses(zero, small_mixed_batch(4, 1), labels);
  for (double v : l) CHECK(v == 0.5);

  // Otherwise the most surprising label gets 1 and the least gets 0.
  SmallModel m = SmallModel::init(small_mixed_spec(), 3);
  for (std::size_t k = 0; k < m.parameter_count(); ++k) m.parameters()[k] += 0.3 * std::sin(1.7 * k + 1.0);
  const Matrix batch = small_mixed_batch(4, 2);
  const Matrix p = forward(m, batch);
  const auto ls = per_sample_losses(m, batch, labels);
  std::vector<double> raw;
  for (std::size_t i = 0; i < 4; ++i) raw.push_back(soft_cross_entropy({p(i, 0), p(i, 1)}, labels.confidences[i]));
  const auto hi = std::max_element(raw.begin(), raw.end()) - raw.begin();
  const auto lo = std::min_element(raw.begin(), raw.end()) - raw.begin();
  CHECK(ls[hi] == 1.0);
  CHECK(ls[lo] == 0.0);
  CHECK_THROWS_AS(per_sample_losses(m, batch, SoftLabelSet::from_positive(std::vector<double>{0.5})), DataError);
}

TEST_CASE("gmm recovers two separated components and EM never lowers the likelihood") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> clean(0.1, 0.05), noisy(0.7, 0.1);
  std::vector<double> x;
  for (int i = 0; i < 700; ++i) x.push_back(clean(rng));
  for (int i = 0; i < 300; ++i) x.push_back(noisy(rng));
  const GmmFit g = fit_gmm_1d(x);
  const int c = g.clean_component, d = 1 - c;
  CHECK(g.means[c] == doctest::Approx(0.1).epsilon(0.1));
  CHECK(g.means[d] == doctest::Approx(0.7).epsilon(0.05));
  CHECK(std::sqrt(g.variances[c]) == doctest::Approx(0.05).epsilon(0.15));
  CHECK(g.weights[c] == doctest::Approx(0.7).epsilon(0.05));
  CHECK_FALSE(g.degenerate);
  for (std::size_t i = 1; i < g.log_likelihood_trace.size(); ++i)
    CHECK(g.log_likelihood_trace[i] >= g.log_likelihood_trace[i - 1] - 1e-9);

  CHECK(clean_posterior(g, 0.1) > 0.99);
  CHECK(clean_posterior(g, 0.8) < 0.01);
  CHECK_THROWS_AS(fit_gmm_1d(std::vector<double>{0.1, 0.2, 0.3}), DataError);
}

TEST_CASE("gmm on identical losses is degenerate with posterior one half") {
  const std::vector<double> x(50, 0.3);
  const GmmFit g = fit_gmm_1d(x);
  CHECK(g.degenerate);
  CHECK(clean_posterior(g, 0.3) == 0.5);
  CHECK(clean_posterior(g, 0.9) == 0.5);
}

TEST_CASE("clean posterior is one half midway between symmetric components") {
  GmmFit g;
  g.means = {0.2, 0.6};
  g.variances = {0.01, 0.01};
  g.weights = {0.5, 0.5};
  g.clean_component = 0;
  CHECK(clean_posterior(g, 0.4) == doctest::Approx(0.5));
  // Independent Bayes rule at loss 0.3.
  const double a = std::exp(-0.5 * 0.01 / 0.01), b = std::exp(-0.5 * 0.09 / 0.01);
  CHECK(clean_posterior(g, 0.3) == doctest::Approx(a / (a + b)));
}

TEST_CASE("partition by clean posterior") {
  const std::vector<double> w{0.95, 0.2, 0.91, 0.5, 0.9};
  const Partition p = partition(w, 0.9);
  CHECK(p.labeled == std::vector<std::size_t>{0, 2, 4});
  CHECK(p.unlabeled == std::vector<std::size_t>{1, 3});
  CHECK(p.labeled_w == std::vector<double>{0.95, 0.91, 0.9});
  CHECK_FALSE(p.fallback);

  // Nothing clears tau: the top tenth (rounded up) is labeled instead.
  std::vector<double> low;
  for (int i = 0; i < 25; ++i) low.push_back(0.01 * i);
  const Partition f = partition(low, 0.9);
  CHECK(f.fallback);
  CHECK(f.labeled == std::vector<std::size_t>{22, 23, 24});
  CHECK(f.unlabeled.size() == 22);
}

TEST_CASE("partition properties") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> w(1 + rng() % 60);
    for (auto& v : w) v = u(rng);
    const double tau = 0.5 + 0.5 * u(rng);
    const Partition p = partition(w, tau);
    CHECK(p.labeled.size() + p.unlabeled.size() == w.size());
    CHECK_FALSE(p.labeled.empty());
    std::vector<std::size_t> all = p.labeled;
    all.insert(all.end(), p.unlabeled.begin(), p.unlabeled.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    if (!p.fallback)
      for (auto i : p.labeled) CHECK(w[i] >= tau);
  }
}

TEST_CASE("sharpening") {
  // Oracle: 0.1^10 / (0.9^10 + 0.1^10) evaluated in exact rational arithmetic.
  const Prob2 s = sharpen({0.9, 0.1}, 0.1);
  CHECK(s.pos == doctest::Approx(2.867971989969915e-10).epsilon(1e-9));
  CHECK(s.neg + s.pos == doctest::Approx(1.0));

  const Prob2 id = sharpen({0.3, 0.7}, 1.0);
  CHECK(id.pos == doctest::Approx(0.7));

  // A saturated input stays finite.
  const Prob2 hard = sharpen({1.0, 0.0}, 0.1);
  CHECK(hard.neg == 1.0);
  CHECK(hard.pos == 0.0);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  for (int k = 0; k < 1000; ++k) {
    const double q = u(rng);
    const Prob2 p{1 - q, q};
    for (double t : {0.1, 0.5, 5.0, 10.0}) {
      const Prob2 r = sharpen(p, t);
      CHECK(r.neg + r.pos == doctest::Approx(1.0));
      if (q != 0.5) CHECK(r.argmax() == p.argmax());
      if (t < 1.0) CHECK(r.max() >= p.max() - 1e-12);
      if (t > 1.0) CHECK(r.max() <= p.max() + 1e-12);
    }
  }
}

TEST_CASE("co-refinement and co-guessing examples") {
  const Prob2 r = co_refine({0.0, 1.0}, 0.8, {0.5, 0.5}, 1.0);
  CHECK(r.neg == doctest::Approx(0.1));
  CHECK(r.pos == doctest::Approx(0.9));
  const Prob2 r2 = co_refine({0.0, 1.0}, 0.8, {0.5, 0.5}, 0.5);
  CHECK(r2.pos == doctest::Approx(0.81 / 0.82));
  const Prob2 g = co_guess({0.2, 0.8}, {0.4, 0.6}, 1.0);
  CHECK(g.neg == doctest::Approx(0.3));
  CHECK(g.pos == doctest::Approx(0.7));
  // w = 1 keeps the label, w = 0 keeps the prediction.
  CHECK(co_refine({0.3, 0.7}, 1.0, {0.9, 0.1}, 1.0).pos == doctest::Approx(0.7));
  CHECK(co_refine({0.3, 0.7}, 0.0, {0.9, 0.1}, 1.0).pos == doctest::Approx(0.1));
}

TEST_CASE("mixup keeps the dominant weight on the first sample") {
  std::mt19937_64 rng(10);
  const std::vector<double> x1{1.0, 0.0}, x2{0.0, 1.0};
  for (int k = 0; k < 500; ++k) {
    const auto m = mixup(x1, {1.0, 0.0}, x2, {0.0, 1.0}, 4.0, rng);
    CHECK(m.lambda >= 0.5);
    CHECK(m.lambda <= 1.0);
    CHECK(m.x[0] == doctest::Approx(m.lambda));
    CHECK(m.y.neg == doctest::Approx(m.lambda));
  }
  const auto one = mixup_with_lambda(x1, {0.2, 0.8}, x2, {0.9, 0.1}, 1.0);
  CHECK(one.x == x1);
  CHECK(one.y == Prob2{0.2, 0.8});
  const auto a = mixup_with_lambda(x1, {0.2, 0.8}, x2, {0.9, 0.1}, 0.3);
  const auto b = mixup_with_lambda(x1, {0.2, 0.8}, x2, {0.9, 0.1}, 0.7);
  CHECK(a.x == b.x);
  CHECK(a.lambda == 0.7);
}

TEST_CASE("early stopping set keeps confident rows") {
  const auto labels = SoftLabelSet::from_vectors({{0.95, 0.05}, {0.6, 0.4}, {0.1, 0.9}, {0.85, 0.15}});
  const std::vector<std::uint64_t> ids{10, 11, 12, 13};
  const EarlyStopSet es = select_early_stop_set(labels, ids, 0.9);
  CHECK(es.rows == std::vector<std::size_t>{0, 2});
  CHECK(es.ids == std::vector<std::uint64_t>{10, 12});
  CHECK(es.labels == std::vector<int>{0, 1});
}

TEST_CASE("semi-supervised objective value and gradient") {
  SmallModel m = SmallModel::init(small_mixed_spec(), 31);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& w : m.parameters()) w += nd(rng);
  const std::size_t n = 10;
  const Matrix batch = small_mixed_batch(n, 33);
  std::vector<Prob2> targets;
  std::uniform_real_distribution<double> u;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = u(rng);
    targets.push_back({1 - q, q});
  }
  const std::vector<bool> labeled_v{true, false, true, true, false, false, true, false, true, false};
  std::unique_ptr<bool[]> labeled(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) labeled[i] = labeled_v[i];
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 3 + 1) % n;
  const double lambda = 0.7;
  const LossWeights w{25.0, 5.0, {0.4, 0.6}};
  const std::span<const bool> lab(labeled.get(), n);

  Matrix input;
  m.embed(batch, input);
  Matrix mixed(n, input.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < input.cols(); ++k)
      mixed(i, k) = lambda * input(i, k) + (1 - lambda) * input(perm[i], k);
  REQUIRE(testing::kink_margin(m, input) > 1e-4);
  REQUIRE(testing::kink_margin(m, mixed) > 1e-4);

  std::vector<double> grad(m.parameter_count(), 0.0);
  const BatchLoss loss = semi_supervised_loss(m, batch, targets, lab, perm, lambda, w, grad);
  CHECK(loss.total == doctest::Approx(objective_reference(m, batch, targets, labeled_v, perm, lambda, w)));
  CHECK(loss.total == doctest::Approx(loss.lx + 25.0 * loss.lu + 5.0 * loss.lr));

  const double h = 1e-6;
  for (std::size_t k = 0; k < m.parameter_count(); ++k) {
    const double v = m.parameters()[k];
    m.parameters()[k] = v + h;
    const double up = semi_supervised_loss(m, batch, targets, lab, perm, lambda, w, {}).total;
    m.parameters()[k] = v - h;
    const double dn = semi_supervised_loss(m, batch, targets, lab, perm, lambda, w, {}).total;
    m.parameters()[k] = v;
    INFO("param ", k);
    CHECK(grad[k] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1e-3));
  }
}

TEST_CASE("lambda_u = 0 gives unlabeled rows no gradient") {
  SmallModel m = SmallModel::init(small_mixed_spec(), 5);
  for (std::size_t k = 0; k < m.parameter_count(); ++k) m.parameters()[k] += 0.2 * std::sin(1.3 * k);
  const Matrix batch = small_mixed_batch(6, 7);
  const std::vector<Prob2> targets(6, Prob2{0.2, 0.8});
  const bool lab[6] = {false, false, false, false, false, false};
  std::vector<std::size_t> perm{5, 4, 3, 2, 1, 0};
  std::vector<double> grad(m.parameter_count(), 0.0);
  const BatchLoss l = semi_supervised_loss(m, batch, targets, lab, perm, 0.8, {0.0, 0.0, {}}, grad);
  CHECK(l.lx == 0.0);
  CHECK(l.lu > 0.0);
  CHECK(l.total == 0.0);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("co-divide puts mostly clean rows in the labeled partition") {
  SyntheticConfig sc;
  sc.rows = 600;
  sc.features = 5;
  sc.seed = 3;
  const auto bench = make_synthetic(sc);
  const auto& gold = bench.data.gold_labels();
  std::mt19937_64 rng(9);
  std::vector<double> pos;
  std::vector<bool> flipped;
  for (int y : gold) {
    const bool f = rng() % 5 == 0;  // 20% flipped
    flipped.push_back(f);
    pos.push_back((f ? 1 - y : y) == 1 ? 0.9 : 0.1);
  }
  const auto labels = SoftLabelSet::from_positive(pos);
  TrainConfig c;
  c.seed = 1;
  const ModelSpec spec = ModelSpec::for_dataset(bench.data, c.hidden, c.embedding_dim);
  ModelPair pair{SmallModel::init(spec, 1), SmallModel::init(spec, 2)};
  PairOptimizers opt(c.learning_rate);
  const Matrix& x = bench.data.values();
  for (int e = 1; e <= 10; ++e) {
    if (e <= c.warmup_epochs) warmup_epoch(pair, opt, x, labels, c, e);
    else semi_supervised_epoch(pair, opt, x, labels, c, 0.5, e);
  }
  const auto losses = per_sample_losses(pair.a, x, labels);
  const GmmFit g = fit_gmm_1d(losses);
  std::vector<double> w;
  for (double l : losses) w.push_back(clean_posterior(g, l));
  const Partition p = partition(w, c.tau);
  std::size_t clean = 0;
  for (auto i : p.labeled) clean += !flipped[i];
  REQUIRE_FALSE(p.labeled.empty());
  const double purity = static_cast<double>(clean) / static_cast<double>(p.labeled.size());
  INFO("labeled ", p.labeled.size(), " purity ", purity);
  CHECK(purity >= 0.9);
  CHECK(p.labeled.size() >= 100);
}

TEST_CASE("early stopping halts after patience epochs without improvement and returns the best pair") {
  SyntheticConfig sc;
  sc.rows = 300;
  sc.features = 4;
  sc.seed = 5;
  const auto bench = make_synthetic(sc);
  std::vector<double> pos;
  std::mt19937_64 rng(2);
  for (int y : bench.data.gold_labels()) pos.push_back(rng() % 4 == 0 ? (y ? 0.05 : 0.95) : (y ? 0.95 : 0.05));
  const auto labels = SoftLabelSet::from_positive(pos);
  TrainConfig c;
  c.seed = 4;
  c.max_epochs = 60;
  c.learning_rate = 1e-2;
  const ModelSpec spec = ModelSpec::for_dataset(bench.data, c.hidden, c.embedding_dim);
  const EarlyStopSet des = select_early_stop_set(labels, bench.data.ids(), c.es_tau);
  const auto [pair, report] = teach_branch(bench.data.values(), labels, des, spec, c, 0.5);

  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : report.epochs)
    if (e.des_loss < best) {
      best = e.des_loss;
      best_epoch = e.epoch;
    }
  CHECK(report.best_epoch == best_epoch);
  CHECK(report.final_des_loss == best);
  CHECK(early_stop_loss(pair, bench.data.values(), des) == doctest::Approx(best).epsilon(1e-12));
  if (report.early_stopped) {
    CHECK(report.stop_epoch - report.best_epoch == c.patience);
    CHECK(report.stop_epoch > c.warmup_epochs);
  } else {
    CHECK(report.stop_epoch == c.max_epochs);
  }
  CHECK(report.early_stopped);

  c.early_stopping = false;
  const auto [last_pair, last] = teach_branch(bench.data.values(), labels, des, spec, c, 0.5);
  CHECK(last.stop_epoch == c.max_epochs);
  CHECK_FALSE(last.early_stopped);
  CHECK(last.final_des_loss == last.epochs.back().des_loss);
}

TEST_CASE("teach requires a non-empty early stopping set") {
  SyntheticConfig sc;
  sc.rows = 40;
  sc.features = 3;
  const auto bench = make_synthetic(sc);
  const auto labels = SoftLabelSet::from_positive(std::vector<double>(40, 0.6));
  CHECK_THROWS_AS(teach(bench.data, labels, TrainConfig{}), TrainingError);
  CHECK_THROWS_AS(teach(bench.data, SoftLabelSet::from_positive(std::vector<double>(3, 0.95)), TrainConfig{}),
                  DataError);
}

TEST_CASE("teach learns from noisy confident labels and is deterministic") {
  SyntheticConfig sc;
  sc.rows = 400;
  sc.features = 4;
  sc.seed = 12;
  const auto bench = make_synthetic(sc);
  const auto& gold = bench.data.gold_labels();
  std::mt19937_64 rng(3);
  std::vector<double> pos;
  for (int y : gold) pos.push_back(rng() % 10 < 2 ? (y ? 0.1 : 0.9) : (y ? 0.9 : 0.1));
  const auto labels = SoftLabelSet::from_positive(pos);
  TrainConfig c;
  c.seed = 8;
  c.max_epochs = 40;
  const TeachResult r = teach(bench.data, labels, c);
  const Matrix p = r.pair.predict(bench.data);
  std::vector<double> s;
  for (std::size_t i = 0; i < p.rows(); ++i) s.push_back(p(i, 1));
  CHECK(auc(s, gold) > 0.85);
  CHECK(r.report.branches.size() == 3);
  const auto& chosen = r.report.branches[r.report.chosen_branch];
  CHECK(r.report.chosen_temperature == chosen.temperature);
  for (const auto& b : r.report.branches) CHECK(chosen.final_des_loss <= b.final_des_loss);

  c.parallel_temperatures = false;
  const TeachResult again = teach(bench.data, labels, c);
  CHECK(again.pair.a == r.pair.a);
  CHECK(again.pair.b == r.pair.b);
}
