#include "sersal/simulated_oracle.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sersal/rng.hpp"

namespace sersal {

namespace {

constexpr std::uint64_t kFlipStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kRefuseStream = 3;
// Corpus targets are clamped away from 0 and 1 to keep their logits finite.
constexpr double kTargetClamp = 1e-6;

double linear(std::span<const double> w, std::span<const double> x) {
  double z = w.back();
  for (std::size_t j = 0; j + 1 < w.size() && j < x.size(); ++j) z += w[j] * x[j];
  return z;
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Solves A x = b in place by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a[r * n + k]) > std::abs(a[piv * n + k])) piv = r;
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[k * n + c], a[piv * n + c]);
      std::swap(b[k], b[piv]);
    }
    const double d = a[k * n + k];
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = a[r * n + k] / d;
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) a[r * n + c] -= f * a[k * n + c];
      b[r] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t c = k + 1; c < n; ++c) s -= a[k * n + c] * x[c];
    x[k] = s / a[k * n + k];
  }
  return x;
}

// Ridge-penalized logistic regression on soft targets, Newton iterations.
// Minimizes mean cross-entropy + l2/2 * |w|^2 (bias unpenalized).
std::vector<double> fit_surrogate(const FinetuneCorpus& corpus, double l2) {
  const std::size_t n = corpus.records.size();
  const std::size_t f = n ? corpus.records.front().features.size() : 0;
  const std::size_t d = f + 1;
  std::vector<double> w(d, 0.0);
  if (n == 0) return w;
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<double> grad(d, 0.0), hess(d * d, 0.0);
    for (const auto& r : corpus.records) {
      const double p = sigmoid(linear(w, r.features));
      const double g = p - r.target;
      const double h = std::max(p * (1.0 - p), 1e-12);
      for (std::size_t a = 0; a < d; ++a) {
        const double xa = a < f ? r.features[a] : 1.0;
        grad[a] += g * xa;
        for (std::size_t b = 0; b <= a; ++b) {
          const double xb = b < f ? r.features[b] : 1.0;
          hess[a * d + b] += h * xa * xb;
        }
      }
    }
    for (std::size_t a = 0; a < d; ++a) {
      grad[a] /= static_cast<double>(n);
      for (std::size_t b = 0; b <= a; ++b) {
        hess[a * d + b] /= static_cast<double>(n);
        hess[b * d + a] = hess[a * d + b];
      }
      if (a < f) {
        grad[a] += l2 * w[a];
        hess[a * d + a] += l2;
      } else {
        hess[a * d + a] += 1e-9;
      }
    }
    const auto step = solve(hess, grad);
    double norm = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      w[a] -= step[a];
      norm = std::max(norm, std::abs(step[a]));
    }
    if (norm < 1e-10) break;
  }
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

nlohmann::json SimulatedOracleConfig::to_json() const {
  return {{"ground_truth_weights", ground_truth_weights},
          {"flip_rate", flip_rate},
          {"confidence_noise_sd", confidence_noise_sd},
          {"finetune_blend_rate", finetune_blend_rate},
          {"seed", seed},
          {"refuse_rate", refuse_rate},
          {"surrogate_l2", surrogate_l2}};
}

SimulatedOracleConfig SimulatedOracleConfig::from_json(const nlohmann::json& j) {
  SimulatedOracleConfig c;
  try {
    c.ground_truth_weights = j.at("ground_truth_weights").get<std::vector<double>>();
    c.flip_rate = j.value("flip_rate", 0.0);
    c.confidence_noise_sd = j.value("confidence_noise_sd", 0.0);
    c.finetune_blend_rate = j.value("finetune_blend_rate", 0.5);
    c.seed = j.value("seed", std::uint64_t{0});
    c.refuse_rate = j.value("refuse_rate", 0.0);
    c.surrogate_l2 = j.value("surrogate_l2", 1e-2);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulated oracle config: ") + e.what());
  }
  if (c.ground_truth_weights.size() < 2)
    throw ConfigError("simulated oracle config: need at least one weight plus a bias");
  if (c.flip_rate < 0.0 || c.flip_rate > 1.0 || c.refuse_rate < 0.0 || c.refuse_rate > 1.0)
    throw ConfigError("simulated oracle config: rates must lie in [0, 1]");
  if (c.confidence_noise_sd < 0.0)
    throw ConfigError("simulated oracle config: confidence_noise_sd must be >= 0");
  if (c.finetune_blend_rate < 0.0 || c.finetune_blend_rate > 1.0)
    throw ConfigError("simulated oracle config: finetune_blend_rate must lie in [0, 1]");
  return c;
}

SimulatedOracleConfig SimulatedOracleConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open oracle config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("oracle config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Oracle

SimulatedOracle::SimulatedOracle(SimulatedOracleConfig config, std::vector<Stage> stages)
    : config_(std::move(config)), stages_(std::move(stages)) {}

std::string SimulatedOracle::identity() const {
  return "simulated-oracle/seed" + std::to_string(config_.seed) + "/ft" +
         std::to_string(stages_.size());
}

double SimulatedOracle::ground_truth_probability(std::span<const double> features) const {
  return sigmoid(linear(config_.ground_truth_weights, features));
}

bool SimulatedOracle::is_flipped(std::uint64_t row_id) const {
  return config_.flip_rate > 0.0 &&
         keyed_uniform(config_.seed, row_id, kFlipStream) < config_.flip_rate;
}

double SimulatedOracle::base_logit(std::uint64_t row_id, std::span<const double> features) const {
  double z = linear(config_.ground_truth_weights, features);
  if (config_.confidence_noise_sd > 0.0)
    z += config_.confidence_noise_sd * keyed_normal(config_.seed, row_id, kNoiseStream);
  return is_flipped(row_id) ? -z : z;
}

double SimulatedOracle::probability(const AnnotationQuery& q) const {
  double l = base_logit(q.row_id, q.features);
  if (stages_.empty()) return sigmoid(l);
  const std::uint64_t key = q.prompt ? fnv1a64(q.prompt->text) : 0;
  const double beta = config_.finetune_blend_rate;
  for (const auto& st : stages_) {
    double c = 0.0;
    auto it = q.prompt ? st.memorized.find(key) : st.memorized.end();
    if (it != st.memorized.end())
      c = it->second;
    else
      c = linear(st.surrogate, q.features);
    l = (1.0 - beta) * l + beta * c;
  }
  return sigmoid(l);
}

std::string SimulatedOracle::complete(const AnnotationQuery& q) const {
  if (config_.refuse_rate > 0.0 &&
      keyed_uniform(config_.seed, q.row_id, kRefuseStream) < config_.refuse_rate)
    return "I cannot determine this.";
  return shortest(probability(q));
}

std::shared_ptr<AnnotatorProvider> SimulatedOracle::finetune(const FinetuneCorpus& corpus) const {
  Stage st;
  for (const auto& r : corpus.records) {
    const double t = std::clamp(r.target, kTargetClamp, 1.0 - kTargetClamp);
    st.memorized[fnv1a64(r.prompt.text)] = logit(t);
  }
  st.surrogate = fit_surrogate(corpus, config_.surrogate_l2);
  if (st.surrogate.size() != config_.ground_truth_weights.size())
    st.surrogate.assign(config_.ground_truth_weights.size(), 0.0);
  auto stages = stages_;
  stages.push_back(std::move(st));
  return std::make_shared<SimulatedOracle>(config_, std::move(stages));
}

nlohmann::json SimulatedOracle::to_json() const {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : stages_) {
    std::vector<std::pair<std::uint64_t, double>> mem(st.memorized.begin(), st.memorized.end());
    std::sort(mem.begin(), mem.end());
    nlohmann::json jm = nlohmann::json::array();
    for (const auto& [k, v] : mem) jm.push_back({k, v});
    stages.push_back({{"memorized", jm}, {"surrogate", st.surrogate}});
  }
  return {{"kind", "simulated"}, {"config", config_.to_json()}, {"stages", stages}};
}

std::shared_ptr<SimulatedOracle> SimulatedOracle::from_json(const nlohmann::json& j) {
  auto config = SimulatedOracleConfig::from_json(j.at("config"));
  std::vector<Stage> stages;
  if (j.contains("stages")) {
    for (const auto& js : j["stages"]) {
      Stage st;
      for (const auto& kv : js.at("memorized"))
        st.memorized.emplace(kv.at(0).get<std::uint64_t>(), kv.at(1).get<double>());
      st.surrogate = js.at("surrogate").get<std::vector<double>>();
      stages.push_back(std::move(st));
    }
  }
  return std::make_shared<SimulatedOracle>(std::move(config), std::move(stages));
}

}  // namespace sersal
