#include "sersal/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "sersal/error.hpp"
#include "sersal/io.hpp"
#include "sersal/kernels.hpp"
#include "sersal/rng.hpp"

namespace sersal {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'R', 'S', 'A', 'L', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kLogClamp = 1e-12;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw StateError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec

ModelSpec ModelSpec::for_dataset(const Dataset& ds, std::vector<std::size_t> hidden,
                                 std::size_t embedding_dim) {
  ModelSpec s;
  for (const auto& c : ds.schema().columns) s.categorical.push_back(c.kind == FeatureKind::Categorical);
  s.cardinalities = ds.categorical_cardinalities();
  s.hidden = std::move(hidden);
  s.embedding_dim = embedding_dim;
  return s;
}

std::size_t ModelSpec::num_numerical() const {
  return static_cast<std::size_t>(std::count(categorical.begin(), categorical.end(), false));
}

std::size_t ModelSpec::input_dim() const {
  return num_numerical() + cardinalities.size() * embedding_dim;
}

std::string ModelSpec::to_json() const {
  return nlohmann::json{{"categorical", categorical},
                        {"cardinalities", cardinalities},
                        {"embedding_dim", embedding_dim},
                        {"hidden", hidden},
                        {"num_classes", num_classes}}
      .dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.categorical = j.at("categorical").get<std::vector<bool>>();
    s.cardinalities = j.at("cardinalities").get<std::vector<std::size_t>>();
    s.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.num_classes = j.value("num_classes", std::size_t{2});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("checkpoint architecture header: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Model

void SmallModel::layout() {
  std::size_t off = 0;
  embedding_offsets_.clear();
  for (auto card : spec_.cardinalities) {
    embedding_offsets_.push_back(off);
    off += card * spec_.embedding_dim;
  }
  layers_.clear();
  std::size_t in = spec_.input_dim();
  auto add = [&](std::size_t out) {
    DenseLayer l{in, out, off, off + in * out};
    off += in * out + out;
    layers_.push_back(l);
    in = out;
  };
  for (auto h : spec_.hidden) add(h);
  add(spec_.num_classes);
  params_.assign(off, 0.0);
}

SmallModel SmallModel::zeros(const ModelSpec& spec) {
  SmallModel m;
  m.spec_ = spec;
  m.layout();
  return m;
}

SmallModel SmallModel::init(const ModelSpec& spec, std::uint64_t seed) {
  SmallModel m = zeros(spec);
  m.seed_ = seed;
  std::uint64_t key = 0;
  for (std::size_t e = 0; e < spec.cardinalities.size(); ++e) {
    const std::size_t n = spec.cardinalities[e] * spec.embedding_dim;
    for (std::size_t i = 0; i < n; ++i)
      m.params_[m.embedding_offsets_[e] + i] = keyed_normal(seed, key++, 7);
  }
  // He-uniform weights for the ReLU layers, zero biases; the output layer
  // starts at zero so every initial prediction is (0.5, 0.5).
  for (std::size_t k = 0; k + 1 < m.layers_.size(); ++k) {
    const auto& l = m.layers_[k];
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.in * l.out; ++i)
      m.params_[l.weight_offset + i] = bound * (2.0 * keyed_uniform(seed, key++, 8) - 1.0);
  }
  return m;
}

void SmallModel::embed(const Matrix& features, Matrix& input) const {
  if (features.cols() != spec_.num_features())
    throw DataError("model expects " + std::to_string(spec_.num_features()) + " features, got " +
                    std::to_string(features.cols()));
  const std::size_t d = spec_.embedding_dim, n_num = spec_.num_numerical();
  input.resize(features.rows(), spec_.input_dim());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto out = input.row(r);
    std::size_t num = 0, cat = 0;
    for (std::size_t c = 0; c < features.cols(); ++c) {
      const double v = features(r, c);
      if (!spec_.categorical[c]) {
        out[num++] = v;
        continue;
      }
      const auto card = spec_.cardinalities[cat];
      const auto idx = static_cast<std::size_t>(
          std::clamp(std::llround(v), 0LL, static_cast<long long>(card) - 1));
      const double* table = params_.data() + embedding_offsets_[cat] + idx * d;
      std::copy_n(table, d, out.begin() + n_num + cat * d);
      ++cat;
    }
  }
}

void SmallModel::embed_backward(const Matrix& features, const Matrix& dinput,
                                std::span<double> grad) const {
  if (spec_.cardinalities.empty()) return;
  const std::size_t d = spec_.embedding_dim, n_num = spec_.num_numerical();
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto g = dinput.row(r);
    std::size_t cat = 0;
    for (std::size_t c = 0; c < features.cols(); ++c) {
      if (!spec_.categorical[c]) continue;
      const auto card = spec_.cardinalities[cat];
      const auto idx = static_cast<std::size_t>(
          std::clamp(std::llround(features(r, c)), 0LL, static_cast<long long>(card) - 1));
      double* gt = grad.data() + embedding_offsets_[cat] + idx * d;
      for (std::size_t k = 0; k < d; ++k) gt[k] += g[n_num + cat * d + k];
      ++cat;
    }
  }
}

void SmallModel::forward_input(const Matrix& input, ForwardCache& cache) const {
  if (input.cols() != spec_.input_dim()) throw DataError("model input width mismatch");
  cache.activations.resize(layers_.size());
  cache.activations[0] = input;
  const std::span<const double> p = params_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const auto w = p.subspan(L.weight_offset, L.in * L.out);
    const auto b = p.subspan(L.bias_offset, L.out);
    const bool last = l + 1 == layers_.size();
    kernels::dense_forward(cache.activations[l], w, b, last ? cache.logits : cache.activations[l + 1],
                           !last);
  }
  kernels::softmax_rows(cache.logits, cache.probs);
}

void SmallModel::backward_input(const ForwardCache& cache, const Matrix& dlogits,
                                std::span<double> grad, Matrix* dinput) const {
  Matrix d = dlogits, dx;
  const std::span<const double> p = params_;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    kernels::dense_backward_params(cache.activations[l], d,
                                   grad.subspan(L.weight_offset, L.in * L.out),
                                   grad.subspan(L.bias_offset, L.out));
    if (l == 0 && !dinput) break;
    kernels::dense_backward_input(d, p.subspan(L.weight_offset, L.in * L.out), dx);
    if (l > 0) kernels::relu_backward(cache.activations[l], dx);
    std::swap(d, dx);
  }
  if (dinput) *dinput = std::move(d);
}

Matrix forward(const SmallModel& model, const Matrix& batch) {
  Matrix input;
  model.embed(batch, input);
  ForwardCache cache;
  model.forward_input(input, cache);
  return std::move(cache.probs);
}

Matrix predict_proba(const SmallModel& model, const Dataset& ds) {
  return forward(model, ds.values());
}

double soft_cross_entropy(const Prob2& pred, const Prob2& target) {
  return -(target.neg * std::log(std::max(pred.neg, kLogClamp)) +
           target.pos * std::log(std::max(pred.pos, kLogClamp)));
}

// ---------------------------------------------------------------------------
// Optimizer

void AdamState::apply(std::span<double> params, std::span<const double> grad) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const double step_size = learning_rate / c1;
  const double sqrt_c2 = std::sqrt(c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_c2 + epsilon);
  }
}

double train_step(SmallModel& model, AdamState& optimizer, const Matrix& batch,
                  std::span<const Prob2> targets) {
  if (targets.size() != batch.rows()) throw DataError("train_step: target count mismatch");
  Matrix input;
  model.embed(batch, input);
  ForwardCache cache;
  model.forward_input(input, cache);
  const std::size_t n = batch.rows();
  Matrix dlogits(n, 2);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const Prob2 p{cache.probs(r, 0), cache.probs(r, 1)};
    loss += soft_cross_entropy(p, targets[r]);
    const double tsum = targets[r].neg + targets[r].pos;
    dlogits(r, 0) = (p.neg * tsum - targets[r].neg) / static_cast<double>(n);
    dlogits(r, 1) = (p.pos * tsum - targets[r].pos) / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw TrainingError("non-finite training loss");
  std::vector<double> grad(model.parameter_count(), 0.0);
  Matrix dinput;
  model.backward_input(cache, dlogits, grad, model.spec().cardinalities.empty() ? nullptr : &dinput);
  model.embed_backward(batch, dinput, grad);
  optimizer.apply(model.parameters(), grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string serialize_model(const SmallModel& model, std::uint64_t schema_fingerprint) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, schema_fingerprint);
  const std::string spec = model.spec().to_json();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  put<std::uint64_t>(out, model.seed());
  put<std::uint64_t>(out, model.parameter_count());
  for (double v : model.parameters()) put<double>(out, v);
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

SmallModel deserialize_model(const std::string& bytes, std::uint64_t expected_fingerprint) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw StateError("not a model checkpoint");
  if (bytes.size() < 8 + 8) throw StateError("checkpoint truncated");
  std::size_t tail = bytes.size() - 8;
  std::size_t pos = tail;
  const auto checksum = take<std::uint64_t>(bytes, pos);
  if (fnv1a64(std::string_view(bytes).substr(0, tail)) != checksum)
    throw StateError("checkpoint checksum mismatch (truncated or corrupt)");
  pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version == 0 || version > kFormatVersion)
    throw StateError("unsupported checkpoint version " + std::to_string(version));
  const auto fp = take<std::uint64_t>(bytes, pos);
  if (expected_fingerprint != 0 && fp != expected_fingerprint)
    throw StateError("checkpoint was written for a different schema");
  const auto spec_len = take<std::uint32_t>(bytes, pos);
  if (pos + spec_len > tail) throw StateError("checkpoint truncated");
  const ModelSpec spec = ModelSpec::from_json(bytes.substr(pos, spec_len));
  pos += spec_len;
  const auto seed = take<std::uint64_t>(bytes, pos);
  const auto count = take<std::uint64_t>(bytes, pos);
  SmallModel m = SmallModel::zeros(spec);
  if (count != m.parameter_count()) throw StateError("checkpoint parameter count mismatch");
  if (pos + count * sizeof(double) != tail) throw StateError("checkpoint size mismatch");
  auto params = m.parameters();
  for (std::size_t i = 0; i < count; ++i) params[i] = take<double>(bytes, pos);
  SmallModel out = SmallModel::init(spec, seed);
  std::copy(params.begin(), params.end(), out.parameters().begin());
  return out;
}

void save_checkpoint(const SmallModel& model, std::uint64_t schema_fingerprint,
                     const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model, schema_fingerprint));
}

SmallModel load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_fingerprint) {
  return deserialize_model(read_file(path), expected_fingerprint);
}

}  // namespace sersal
