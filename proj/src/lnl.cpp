#include "sersal/lnl.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <numeric>

#include "sersal/error.hpp"
#include "sersal/rng.hpp"

namespace sersal {

using nlohmann::json;

namespace {

constexpr double kLogClamp = 1e-12;
constexpr double kLn2Pi = 1.8378770664093454835606594728112;

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  return std::mt19937_64(mix_seed(seed, static_cast<std::uint64_t>(epoch), stream));
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLn2Pi + std::log(var) + d * d / var);
}

double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Responsibilities of component 0 and the data log-likelihood.
double e_step(std::span<const double> x, const GmmFit& g, std::vector<double>& r0) {
  double ll = 0.0;
  const double lw0 = g.weights[0] > 0 ? std::log(g.weights[0]) : -std::numeric_limits<double>::infinity();
  const double lw1 = g.weights[1] > 0 ? std::log(g.weights[1]) : -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = lw0 + log_normal_pdf(x[i], g.means[0], g.variances[0]);
    const double b = lw1 + log_normal_pdf(x[i], g.means[1], g.variances[1]);
    const double t = log_add(a, b);
    r0[i] = std::exp(a - t);
    ll += t;
  }
  return ll;
}

void m_step(std::span<const double> x, const std::vector<double>& r0, GmmFit& g) {
  const double n = static_cast<double>(x.size());
  for (int k = 0; k < 2; ++k) {
    double nk = 0.0, sx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = k == 0 ? r0[i] : 1.0 - r0[i];
      nk += r;
      sx += r * x[i];
    }
    if (nk <= std::numeric_limits<double>::min()) {
      g.weights[k] = 0.0;
      continue;
    }
    const double mu = sx / nk;
    double sv = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = k == 0 ? r0[i] : 1.0 - r0[i];
      sv += r * (x[i] - mu) * (x[i] - mu);
    }
    g.means[k] = mu;
    g.variances[k] = std::max(sv / nk, kGmmVarianceFloor);
    g.weights[k] = nk / n;
  }
  const double s = g.weights[0] + g.weights[1];
  g.weights[0] /= s;
  g.weights[1] = 1.0 - g.weights[0];
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(tau > 0.5 && tau <= 1.0)) throw ConfigError("tau must lie in (0.5, 1]");
  if (!(es_tau > 0.5 && es_tau <= 1.0)) throw ConfigError("es_tau must lie in (0.5, 1]");
  if (sharpen_temperatures.empty()) throw ConfigError("no sharpening temperatures");
  for (double t : sharpen_temperatures)
    if (!(t > 0.0)) throw ConfigError("sharpening temperatures must be > 0");
  if (!(reverse_sharpen_temperature > 0.0))
    throw ConfigError("reverse sharpening temperature must be > 0");
  if (!(lambda_u >= 0.0)) throw ConfigError("lambda_u must be >= 0");
  if (!(lambda_r >= 0.0)) throw ConfigError("lambda_r must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs < 1 || warmup_epochs < 0 || patience < 1)
    throw ConfigError("epoch counts must be positive");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"tau", tau},
          {"es_tau", es_tau},
          {"lambda_u", lambda_u},
          {"lambda_r", lambda_r},
          {"lambda_u_rampup_epochs", lambda_u_rampup_epochs},
          {"patience", patience},
          {"sharpen_temperatures", sharpen_temperatures},
          {"reverse_sharpen_temperature", reverse_sharpen_temperature},
          {"warmup_epochs", warmup_epochs},
          {"max_epochs", max_epochs},
          {"mixup_alpha", mixup_alpha},
          {"seed", seed},
          {"gmm_max_iters", gmm_max_iters},
          {"gmm_tol", gmm_tol},
          {"hidden", hidden},
          {"embedding_dim", embedding_dim},
          {"early_stopping", early_stopping},
          {"use_mixup", use_mixup},
          {"hard_labels", hard_labels},
          {"parallel_temperatures", parallel_temperatures}};
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.tau = j.value("tau", c.tau);
    c.es_tau = j.value("es_tau", c.es_tau);
    c.lambda_u = j.value("lambda_u", c.lambda_u);
    c.lambda_r = j.value("lambda_r", c.lambda_r);
    c.lambda_u_rampup_epochs = j.value("lambda_u_rampup_epochs", c.lambda_u_rampup_epochs);
    c.patience = j.value("patience", c.patience);
    c.sharpen_temperatures = j.value("sharpen_temperatures", c.sharpen_temperatures);
    c.reverse_sharpen_temperature =
        j.value("reverse_sharpen_temperature", c.reverse_sharpen_temperature);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
    c.seed = j.value("seed", c.seed);
    c.gmm_max_iters = j.value("gmm_max_iters", c.gmm_max_iters);
    c.gmm_tol = j.value("gmm_tol", c.gmm_tol);
    c.hidden = j.value("hidden", c.hidden);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.early_stopping = j.value("early_stopping", c.early_stopping);
    c.use_mixup = j.value("use_mixup", c.use_mixup);
    c.hard_labels = j.value("hard_labels", c.hard_labels);
    c.parallel_temperatures = j.value("parallel_temperatures", c.parallel_temperatures);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// GMM

GmmFit fit_gmm_1d(std::span<const double> losses, int max_iters, double tol, std::uint64_t seed) {
  if (losses.size() < 4) throw DataError("GMM fit needs at least 4 losses");
  GmmFit g;
  const auto [mn, mx] = std::minmax_element(losses.begin(), losses.end());
  if (*mn == *mx) {
    g.degenerate = true;
    g.means = {*mn, *mn};
    g.variances = {kGmmVarianceFloor, kGmmVarianceFloor};
    g.weights = {0.5, 0.5};
    return g;
  }
  std::vector<double> v(losses.begin(), losses.end());
  double lo = quantile(v, 0.25), hi = quantile(v, 0.75);
  if (lo == hi) {
    // Quartiles coincide on heavily tied data; seed the upper mean from a
    // sample that differs from the lower one.
    std::mt19937_64 rng(seed);
    std::vector<double> other;
    for (double x : v)
      if (x != lo) other.push_back(x);
    hi = other[std::uniform_int_distribution<std::size_t>(0, other.size() - 1)(rng)];
  }
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var = std::max(var / static_cast<double>(v.size()), kGmmVarianceFloor);
  g.means = {lo, hi};
  g.variances = {var, var};
  g.weights = {0.5, 0.5};

  std::vector<double> r0(losses.size());
  double ll = e_step(losses, g, r0);
  g.log_likelihood_trace.push_back(ll);
  for (int it = 1; it <= max_iters; ++it) {
    m_step(losses, r0, g);
    const double next = e_step(losses, g, r0);
    g.log_likelihood_trace.push_back(next);
    g.iterations_run = it;
    const double gain = next - ll;
    ll = next;
    if (gain < tol) break;
  }
  g.final_log_likelihood = ll;
  g.clean_component = g.means[0] <= g.means[1] ? 0 : 1;
  return g;
}

double clean_posterior(const GmmFit& g, double loss) {
  if (g.degenerate) return 0.5;
  const int c = g.clean_component, o = 1 - c;
  if (g.weights[c] <= 0.0) return 0.0;
  if (g.weights[o] <= 0.0) return 1.0;
  const double a = std::log(g.weights[c]) + log_normal_pdf(loss, g.means[c], g.variances[c]);
  const double b = std::log(g.weights[o]) + log_normal_pdf(loss, g.means[o], g.variances[o]);
  return std::exp(a - log_add(a, b));
}

Partition partition(std::span<const double> w, double tau) {
  Partition p;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] >= tau) {
      p.labeled.push_back(i);
      p.labeled_w.push_back(w[i]);
    }
  }
  if (p.labeled.empty() && !w.empty()) {
    p.fallback = true;
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
    const std::size_t k = (w.size() + 9) / 10;
    order.resize(k);
    std::sort(order.begin(), order.end());
    for (auto i : order) {
      p.labeled.push_back(i);
      p.labeled_w.push_back(w[i]);
    }
  }
  std::vector<bool> in(w.size(), false);
  for (auto i : p.labeled) in[i] = true;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!in[i]) {
      p.unlabeled.push_back(i);
      p.unlabeled_w.push_back(w[i]);
    }
  return p;
}

// ---------------------------------------------------------------------------
// Label manipulation

Prob2 sharpen(const Prob2& p, double t) {
  const double a = p.neg > 0.0 ? std::log(p.neg) / t : -std::numeric_limits<double>::infinity();
  const double b = p.pos > 0.0 ? std::log(p.pos) / t : -std::numeric_limits<double>::infinity();
  if (a == b) return Prob2{0.5, 0.5};
  // Softmax over (a, b), written so the smaller term never underflows the
  // larger one's complement.
  if (a > b) {
    const double e = std::exp(b - a);
    const double pos = e / (1.0 + e);
    return Prob2{1.0 - pos, pos};
  }
  const double e = std::exp(a - b);
  const double neg = e / (1.0 + e);
  return Prob2{neg, 1.0 - neg};
}

Prob2 co_refine(const Prob2& label, double w, const Prob2& pred, double t) {
  return sharpen(Prob2{w * label.neg + (1.0 - w) * pred.neg, w * label.pos + (1.0 - w) * pred.pos},
                 t);
}

Prob2 co_guess(const Prob2& a, const Prob2& b, double t) {
  return sharpen(Prob2{0.5 * (a.neg + b.neg), 0.5 * (a.pos + b.pos)}, t);
}

double sample_mixup_lambda(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng), y = gamma(rng);
  const double l = x + y > 0.0 ? x / (x + y) : 0.5;
  return std::max(l, 1.0 - l);
}

MixupResult mixup_with_lambda(std::span<const double> x1, const Prob2& y1,
                              std::span<const double> x2, const Prob2& y2, double lambda) {
  const double l = std::max(lambda, 1.0 - lambda);
  MixupResult r;
  r.lambda = l;
  r.x.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) r.x[i] = l * x1[i] + (1.0 - l) * x2[i];
  r.y = Prob2{l * y1.neg + (1.0 - l) * y2.neg, l * y1.pos + (1.0 - l) * y2.pos};
  return r;
}

MixupResult mixup(std::span<const double> x1, const Prob2& y1, std::span<const double> x2,
                  const Prob2& y2, double alpha, std::mt19937_64& rng) {
  return mixup_with_lambda(x1, y1, x2, y2, sample_mixup_lambda(alpha, rng));
}

// ---------------------------------------------------------------------------
// Early stopping set and ensemble metrics

EarlyStopSet select_early_stop_set(const SoftLabelSet& labels, std::span<const std::uint64_t> ids,
                                   double tau) {
  EarlyStopSet es;
  es.tau = tau;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.confidences[i].max() >= tau) {
      es.rows.push_back(i);
      es.ids.push_back(i < ids.size() ? ids[i] : i);
      es.labels.push_back(labels.confidences[i].argmax());
    }
  }
  return es;
}

Matrix ModelPair::predict(const Matrix& features) const {
  Matrix pa = forward(a, features);
  const Matrix pb = forward(b, features);
  for (std::size_t i = 0; i < pa.size(); ++i) pa.data()[i] = 0.5 * (pa.data()[i] + pb.data()[i]);
  return pa;
}

std::vector<Prob2> to_prob2(const Matrix& probs) {
  std::vector<Prob2> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = Prob2{probs(r, 0), probs(r, 1)};
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> raw) {
  std::vector<double> out(raw.size(), 0.5);
  if (raw.empty()) return out;
  const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
  const double range = *mx - *mn;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *mn) / range;
  return out;
}

std::vector<double> per_sample_losses(const SmallModel& model, const Matrix& features,
                                      const SoftLabelSet& labels) {
  if (labels.size() != features.rows()) throw DataError("per-sample losses: label count mismatch");
  const Matrix probs = forward(model, features);
  std::vector<double> raw(features.rows());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = soft_cross_entropy(Prob2{probs(i, 0), probs(i, 1)}, labels.confidences[i]);
  return min_max_normalize(raw);
}

double early_stop_loss(const ModelPair& pair, const Matrix& features, const EarlyStopSet& es) {
  if (es.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Matrix probs = pair.predict(gather_rows(features, es.rows));
  double loss = 0.0;
  for (std::size_t i = 0; i < es.size(); ++i)
    loss -= std::log(std::max(probs(i, static_cast<std::size_t>(es.labels[i])), kLogClamp));
  return loss / static_cast<double>(es.size());
}

double early_stop_accuracy(const ModelPair& pair, const Matrix& features, const EarlyStopSet& es) {
  if (es.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Matrix probs = pair.predict(gather_rows(features, es.rows));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < es.size(); ++i) {
    const int pred = probs(i, 1) > probs(i, 0) ? 1 : 0;
    hit += pred == es.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(es.size());
}

// ---------------------------------------------------------------------------
// Objective

BatchLoss semi_supervised_loss(const SmallModel& model, const Matrix& features,
                               std::span<const Prob2> targets, std::span<const bool> labeled,
                               std::span<const std::size_t> perm, double lambda,
                               const LossWeights& weights, std::span<double> grad) {
  const double lambda_u = weights.lambda_u;
  const std::size_t n = features.rows();
  Matrix input;
  model.embed(features, input);
  const std::size_t d = input.cols();
  Matrix mixed(n, d);
  std::vector<Prob2> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = perm[i];
    for (std::size_t k = 0; k < d; ++k)
      mixed(i, k) = lambda * input(i, k) + (1.0 - lambda) * input(j, k);
    y[i] = Prob2{lambda * targets[i].neg + (1.0 - lambda) * targets[j].neg,
                 lambda * targets[i].pos + (1.0 - lambda) * targets[j].pos};
  }
  ForwardCache cache;
  model.forward_input(mixed, cache);

  const auto nl = static_cast<std::size_t>(std::count(labeled.begin(), labeled.end(), true));
  const std::size_t nu = n - nl;
  constexpr double kClasses = 2.0;
  Matrix dlogits(n, 2);
  BatchLoss out;
  for (std::size_t i = 0; i < n; ++i) {
    const Prob2 p{cache.probs(i, 0), cache.probs(i, 1)};
    if (labeled[i]) {
      out.lx += soft_cross_entropy(p, y[i]);
      const double ysum = y[i].neg + y[i].pos;
      dlogits(i, 0) = (p.neg * ysum - y[i].neg) / static_cast<double>(nl);
      dlogits(i, 1) = (p.pos * ysum - y[i].pos) / static_cast<double>(nl);
    } else {
      const double e0 = p.neg - y[i].neg, e1 = p.pos - y[i].pos;
      out.lu += e0 * e0 + e1 * e1;
      const double scale = lambda_u * 2.0 / (static_cast<double>(nu) * kClasses);
      const double g0 = scale * e0, g1 = scale * e1;
      const double dot = g0 * p.neg + g1 * p.pos;
      dlogits(i, 0) = p.neg * (g0 - dot);
      dlogits(i, 1) = p.pos * (g1 - dot);
    }
  }
  if (nl) out.lx /= static_cast<double>(nl);
  if (nu) out.lu /= static_cast<double>(nu) * kClasses;

  out.total = out.lx + lambda_u * out.lu;

  const bool has_embeddings = !model.spec().cardinalities.empty();
  Matrix dinput;
  if (!grad.empty()) {
    Matrix dmixed;
    model.backward_input(cache, dlogits, grad, has_embeddings ? &dmixed : nullptr);
    if (has_embeddings) {
      dinput.resize(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = perm[i];
        for (std::size_t k = 0; k < d; ++k) {
          dinput(i, k) += lambda * dmixed(i, k);
          dinput(j, k) += (1.0 - lambda) * dmixed(i, k);
        }
      }
    }
  }

  // The prior penalty looks at the unmixed rows: on mixed rows alone the
  // network can match the prior in the interior of the data while drifting
  // to one class on the rows themselves.
  if (weights.lambda_r > 0.0) {
    ForwardCache plain;
    model.forward_input(input, plain);
    const double nd = static_cast<double>(n);
    double mean[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      mean[0] += plain.probs(i, 0) / nd;
      mean[1] += plain.probs(i, 1) / nd;
    }
    const double pi[2] = {weights.prior.neg, weights.prior.pos};
    double g[2] = {0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
      if (pi[c] <= 0.0) continue;
      const double m = std::max(mean[c], kLogClamp);
      out.lr += pi[c] * std::log(pi[c] / m);
      g[c] = -weights.lambda_r * pi[c] / (m * nd);
    }
    out.total += weights.lambda_r * out.lr;
    if (!grad.empty()) {
      Matrix dl(n, 2);
      for (std::size_t i = 0; i < n; ++i) {
        const double p0 = plain.probs(i, 0), p1 = plain.probs(i, 1);
        const double dot = g[0] * p0 + g[1] * p1;
        dl(i, 0) = p0 * (g[0] - dot);
        dl(i, 1) = p1 * (g[1] - dot);
      }
      Matrix dplain;
      model.backward_input(plain, dl, grad, has_embeddings ? &dplain : nullptr);
      if (has_embeddings)
        for (std::size_t i = 0; i < dinput.size(); ++i) dinput.data()[i] += dplain.data()[i];
    }
  }
  if (!grad.empty() && has_embeddings) model.embed_backward(features, dinput, grad);
  return out;
}

// ---------------------------------------------------------------------------
// Epochs

EpochDiagnostics warmup_epoch(ModelPair& pair, PairOptimizers& opt, const Matrix& features,
                              const SoftLabelSet& labels, const TrainConfig& config, int epoch) {
  EpochDiagnostics diag;
  diag.epoch = epoch;
  diag.warmup = true;
  const std::size_t n = features.rows();
  SmallModel* nets[2] = {&pair.a, &pair.b};
  AdamState* opts[2] = {&opt.a, &opt.b};
  double* losses[2] = {&diag.lx_a, &diag.lx_b};
  for (int k = 0; k < 2; ++k) {
    auto rng = epoch_rng(config.seed, epoch, 10 + k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < n; s += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(config.batch_size, n - s));
      const Matrix xb = gather_rows(features, idx);
      std::vector<Prob2> tb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) tb[i] = labels.confidences[idx[i]];
      total += train_step(*nets[k], *opts[k], xb, tb) * static_cast<double>(idx.size());
    }
    *losses[k] = n ? total / static_cast<double>(n) : 0.0;
  }
  diag.labeled_a = diag.labeled_b = n;
  return diag;
}

namespace {

double ramped_lambda_u(const TrainConfig& config, int epoch) {
  if (config.lambda_u_rampup_epochs <= 0) return config.lambda_u;
  const double r = static_cast<double>(epoch - config.warmup_epochs) / config.lambda_u_rampup_epochs;
  return config.lambda_u * std::clamp(r, 0.0, 1.0);
}

struct NetEpochStats {
  double lx = 0.0, lu = 0.0, lr = 0.0;
};

NetEpochStats train_one_net(SmallModel& net, const SmallModel& peer, AdamState& opt,
                            const Matrix& features, const SoftLabelSet& labels,
                            const Partition& part, std::span<const double> posteriors,
                            const TrainConfig& config, const Prob2& prior, double temperature,
                            int epoch, std::mt19937_64& rng) {
  const LossWeights weights{ramped_lambda_u(config, epoch), config.lambda_r, prior};
  const std::size_t n = features.rows();
  std::vector<bool> is_labeled(n, false);
  for (auto i : part.labeled) is_labeled[i] = true;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  NetEpochStats stats;
  std::size_t batches = 0;
  std::vector<double> grad(net.parameter_count());
  for (std::size_t s = 0; s < n; s += config.batch_size) {
    const std::size_t b = std::min(config.batch_size, n - s);
    const std::span<const std::size_t> idx(order.data() + s, b);
    const Matrix xb = gather_rows(features, idx);
    const Matrix self_pred = forward(net, xb);
    bool any_unlabeled = false;
    for (auto i : idx) any_unlabeled |= !is_labeled[i];
    Matrix peer_pred;
    if (any_unlabeled) peer_pred = forward(peer, xb);

    std::vector<Prob2> targets(b);
    std::unique_ptr<bool[]> lab(new bool[b]);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t i = idx[r];
      const Prob2 mine{self_pred(r, 0), self_pred(r, 1)};
      lab[r] = is_labeled[i];
      if (lab[r]) {
        targets[r] = co_refine(labels.confidences[i], posteriors[i], mine, temperature);
      } else {
        targets[r] = co_guess(mine, Prob2{peer_pred(r, 0), peer_pred(r, 1)}, temperature);
      }
    }

    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double lambda = 1.0;
    if (config.use_mixup) {
      lambda = sample_mixup_lambda(config.mixup_alpha, rng);
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const BatchLoss loss = semi_supervised_loss(net, xb, targets, std::span<const bool>(lab.get(), b),
                                                perm, lambda, weights, grad);
    if (!std::isfinite(loss.total))
      throw TrainingError("non-finite semi-supervised loss (L_x=" + std::to_string(loss.lx) +
                          ", L_u=" + std::to_string(loss.lu) + ")");
    opt.apply(net.parameters(), grad);
    stats.lx += loss.lx;
    stats.lu += loss.lu;
    stats.lr += loss.lr;
    ++batches;
  }
  if (batches) {
    stats.lx /= static_cast<double>(batches);
    stats.lu /= static_cast<double>(batches);
    stats.lr /= static_cast<double>(batches);
  }
  return stats;
}

}  // namespace

EpochDiagnostics semi_supervised_epoch(ModelPair& pair, PairOptimizers& opt,
                                       const Matrix& features, const SoftLabelSet& labels,
                                       const TrainConfig& config, double temperature, int epoch) {
  EpochDiagnostics diag;
  diag.epoch = epoch;

  std::vector<double> w_a(features.rows()), w_b(features.rows());
  {
    const auto la = per_sample_losses(pair.a, features, labels);
    const auto lb = per_sample_losses(pair.b, features, labels);
    const GmmFit ga = fit_gmm_1d(la, config.gmm_max_iters, config.gmm_tol, config.seed);
    const GmmFit gb = fit_gmm_1d(lb, config.gmm_max_iters, config.gmm_tol, config.seed);
    diag.gmm_degenerate = ga.degenerate || gb.degenerate;
    for (std::size_t i = 0; i < la.size(); ++i) {
      w_a[i] = clean_posterior(ga, la[i]);
      w_b[i] = clean_posterior(gb, lb[i]);
    }
  }
  // Cross-partitioning: each network learns from the split the other one made.
  const Partition for_a = partition(w_b, config.tau);
  const Partition for_b = partition(w_a, config.tau);
  diag.labeled_a = for_a.labeled.size();
  diag.unlabeled_a = for_a.unlabeled.size();
  diag.labeled_b = for_b.labeled.size();
  diag.unlabeled_b = for_b.unlabeled.size();
  diag.fallback_a = for_a.fallback;
  diag.fallback_b = for_b.fallback;

  Prob2 prior{0.0, 0.0};
  for (const auto& q : labels.confidences) {
    prior.neg += q.neg;
    prior.pos += q.pos;
  }
  const double total = prior.neg + prior.pos;
  prior = total > 0.0 ? Prob2{prior.neg / total, prior.pos / total} : Prob2{};

  auto rng_a = epoch_rng(config.seed, epoch, 20);
  const auto sa = train_one_net(pair.a, pair.b, opt.a, features, labels, for_a, w_b, config, prior,
                                temperature, epoch, rng_a);
  auto rng_b = epoch_rng(config.seed, epoch, 21);
  const auto sb = train_one_net(pair.b, pair.a, opt.b, features, labels, for_b, w_a, config, prior,
                                temperature, epoch, rng_b);
  diag.lx_a = sa.lx;
  diag.lu_a = sa.lu;
  diag.lx_b = sb.lx;
  diag.lu_b = sb.lu;
  diag.lr_a = sa.lr;
  diag.lr_b = sb.lr;
  return diag;
}

// ---------------------------------------------------------------------------
// Teaching

json TeachReport::to_json() const {
  json branches_json = json::array();
  for (const auto& b : branches) {
    json epochs = json::array();
    for (const auto& e : b.epochs)
      epochs.push_back({{"epoch", e.epoch},
                        {"warmup", e.warmup},
                        {"labeled_a", e.labeled_a},
                        {"unlabeled_a", e.unlabeled_a},
                        {"labeled_b", e.labeled_b},
                        {"unlabeled_b", e.unlabeled_b},
                        {"fallback_a", e.fallback_a},
                        {"fallback_b", e.fallback_b},
                        {"lx_a", e.lx_a},
                        {"lu_a", e.lu_a},
                        {"lx_b", e.lx_b},
                        {"lu_b", e.lu_b},
                        {"lr_a", e.lr_a},
                        {"lr_b", e.lr_b},
                        {"des_loss", e.des_loss},
                        {"gmm_degenerate", e.gmm_degenerate}});
    branches_json.push_back({{"temperature", b.temperature},
                             {"best_epoch", b.best_epoch},
                             {"stop_epoch", b.stop_epoch},
                             {"early_stopped", b.early_stopped},
                             {"final_des_loss", b.final_des_loss},
                             {"epochs", epochs}});
  }
  return {{"chosen_temperature", chosen_temperature},
          {"chosen_branch", chosen_branch},
          {"des_size", des_size},
          {"des_tau", des_tau},
          {"seed", seed},
          {"seed_a", seed_a},
          {"seed_b", seed_b},
          {"branches", branches_json}};
}

std::pair<ModelPair, BranchReport> teach_branch(const Matrix& features, const SoftLabelSet& labels,
                                                const EarlyStopSet& des, const ModelSpec& spec,
                                                const TrainConfig& config, double temperature) {
  ModelPair pair{SmallModel::init(spec, mix_seed(config.seed, 0xA)),
                 SmallModel::init(spec, mix_seed(config.seed, 0xB))};
  PairOptimizers opt(config.learning_rate);
  BranchReport report;
  report.temperature = temperature;

  ModelPair best = pair;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochDiagnostics diag =
        epoch <= config.warmup_epochs
            ? warmup_epoch(pair, opt, features, labels, config, epoch)
            : semi_supervised_epoch(pair, opt, features, labels, config, temperature, epoch);
    diag.des_loss = early_stop_loss(pair, features, des);
    if (!std::isfinite(diag.des_loss))
      throw TrainingError("non-finite early-stopping loss at epoch " + std::to_string(epoch));
    report.epochs.push_back(diag);
    report.stop_epoch = epoch;
    if (diag.des_loss < best_loss) {
      best_loss = diag.des_loss;
      report.best_epoch = epoch;
      if (config.early_stopping) best = pair;
    }
    if (config.early_stopping && epoch > config.warmup_epochs &&
        epoch - report.best_epoch >= config.patience) {
      report.early_stopped = true;
      break;
    }
  }
  if (config.early_stopping) {
    report.final_des_loss = best_loss;
    return {std::move(best), std::move(report)};
  }
  report.final_des_loss = report.epochs.back().des_loss;
  return {std::move(pair), std::move(report)};
}

TeachResult teach(const Dataset& train, const SoftLabelSet& labels, const TrainConfig& config) {
  config.validate();
  if (labels.size() != train.size())
    throw DataError("teach: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(train.size()) + " rows");
  TeachResult result;
  result.des = select_early_stop_set(labels, train.ids(), config.es_tau);
  if (result.des.empty())
    throw TrainingError("early-stopping set is empty at tau=" + std::to_string(config.es_tau) +
                        "; lower the confidence threshold");
  const SoftLabelSet teaching = config.hard_labels ? labels.hardened() : labels;
  const ModelSpec spec = ModelSpec::for_dataset(train, config.hidden, config.embedding_dim);

  const std::size_t nb = config.sharpen_temperatures.size();
  std::vector<std::pair<ModelPair, BranchReport>> branches(nb);
  std::vector<std::exception_ptr> errors(nb);
  const auto nbi = static_cast<std::ptrdiff_t>(nb);
#pragma omp parallel for schedule(dynamic, 1) if (config.parallel_temperatures)
  for (std::ptrdiff_t t = 0; t < nbi; ++t) {
    try {
      branches[t] = teach_branch(train.values(), teaching, result.des, spec, config,
                                 config.sharpen_temperatures[t]);
    } catch (...) {
      errors[t] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t best = 0;
  for (std::size_t t = 1; t < nb; ++t)
    if (branches[t].second.final_des_loss < branches[best].second.final_des_loss) best = t;

  result.pair = branches[best].first;
  result.report.chosen_branch = best;
  result.report.chosen_temperature = config.sharpen_temperatures[best];
  result.report.des_size = result.des.size();
  result.report.des_tau = config.es_tau;
  result.report.seed = config.seed;
  result.report.seed_a = mix_seed(config.seed, 0xA);
  result.report.seed_b = mix_seed(config.seed, 0xB);
  for (auto& b : branches) result.report.branches.push_back(std::move(b.second));
  return result;
}

}  // namespace sersal
