#include "sersal/loop.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sersal/error.hpp"
#include "sersal/evaluation.hpp"
#include "sersal/io.hpp"

namespace sersal {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Enums and small records

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::MetricBased: return "metric_based";
    case PolicyKind::ExternalValidation: return "external_validation";
    case PolicyKind::RuleBased: return "rule_based";
  }
  return "rule_based";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "metric_based") return PolicyKind::MetricBased;
  if (s == "external_validation") return PolicyKind::ExternalValidation;
  if (s == "rule_based") return PolicyKind::RuleBased;
  throw ConfigError("unknown policy kind '" + s + "'");
}

std::string to_string(LoopPhase phase) {
  switch (phase) {
    case LoopPhase::Annotate: return "annotate";
    case LoopPhase::Teach: return "teach";
    case LoopPhase::Decide: return "decide";
    case LoopPhase::Finetune: return "finetune";
    case LoopPhase::Done: return "done";
  }
  return "done";
}

LoopPhase loop_phase_from_string(const std::string& s) {
  if (s == "annotate") return LoopPhase::Annotate;
  if (s == "teach") return LoopPhase::Teach;
  if (s == "decide") return LoopPhase::Decide;
  if (s == "finetune") return LoopPhase::Finetune;
  if (s == "done") return LoopPhase::Done;
  throw StateError("unknown loop phase '" + s + "'");
}

json QualityControlPolicy::to_json() const {
  return {{"kind", to_string(kind)}, {"max_loops", max_loops}, {"epsilon", epsilon}};
}

QualityControlPolicy QualityControlPolicy::from_json(const json& j) {
  QualityControlPolicy p;
  try {
    p.kind = policy_kind_from_string(j.value("kind", std::string("rule_based")));
    p.max_loops = j.value("max_loops", p.max_loops);
    p.epsilon = j.value("epsilon", p.epsilon);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("policy: ") + e.what());
  }
  if (p.max_loops < 1) throw ConfigError("policy max_loops must be >= 1");
  if (!(p.epsilon >= 0.0)) throw ConfigError("policy epsilon must be >= 0");
  return p;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json LoopMetrics::to_json() const {
  return {{"t", t},
          {"des_accuracy", des_accuracy},
          {"des_loss", des_loss},
          {"des_size", des_size},
          {"chosen_temperature", chosen_temperature},
          {"failed_rows", failed_rows},
          {"provider_identity", provider_identity},
          {"external_auc", optional_json(external_auc)},
          {"student_test_auc", optional_json(student_test_auc)},
          {"annotator_test_auc", optional_json(annotator_test_auc)},
          {"decision", decision}};
}

LoopMetrics LoopMetrics::from_json(const json& j) {
  LoopMetrics m;
  m.t = j.at("t").get<int>();
  m.des_accuracy = j.at("des_accuracy").get<double>();
  m.des_loss = j.at("des_loss").get<double>();
  m.des_size = j.at("des_size").get<std::size_t>();
  m.chosen_temperature = j.at("chosen_temperature").get<double>();
  m.failed_rows = j.at("failed_rows").get<std::size_t>();
  m.provider_identity = j.at("provider_identity").get<std::string>();
  m.external_auc = optional_from(j, "external_auc");
  m.student_test_auc = optional_from(j, "student_test_auc");
  m.annotator_test_auc = optional_from(j, "annotator_test_auc");
  m.decision = j.value("decision", std::string());
  return m;
}

namespace {

bool same_labels(const SoftLabelSet& a, const SoftLabelSet& b) {
  return a.confidences == b.confidences && a.hard_labels == b.hard_labels &&
         a.source == b.source && a.loop == b.loop;
}

}  // namespace

bool LoopState::operator==(const LoopState& o) const {
  if (t != o.t || phase != o.phase || seed != o.seed || config_snapshot != o.config_snapshot ||
      failed_ids != o.failed_ids || teach_reports != o.teach_reports || metrics != o.metrics ||
      provider_states != o.provider_states || provider_identities != o.provider_identities ||
      annotate_calls != o.annotate_calls || finetune_calls != o.finetune_calls ||
      stop_reason != o.stop_reason || train_ids != o.train_ids || annotations.size() != o.annotations.size() ||
      checkpoints.size() != o.checkpoints.size())
    return false;
  for (std::size_t i = 0; i < annotations.size(); ++i)
    if (!same_labels(annotations[i], o.annotations[i])) return false;
  for (std::size_t i = 0; i < checkpoints.size(); ++i)
    if (!(checkpoints[i].a == o.checkpoints[i].a) || !(checkpoints[i].b == o.checkpoints[i].b))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// Policy

PolicyDecision evaluate_policy(const QualityControlPolicy& policy, const LoopState& state) {
  if (state.metrics.empty()) throw StateError("policy evaluated before any teach phase");
  const int t = static_cast<int>(state.metrics.size());
  const LoopMetrics& cur = state.metrics.back();
  char buf[256];

  if (policy.kind == PolicyKind::ExternalValidation && !cur.external_auc)
    throw ConfigError("external_validation control needs a labeled holdout");

  if (t >= policy.max_loops) {
    std::snprintf(buf, sizeof buf, "stop: loop %d reached max_loops %d", t, policy.max_loops);
    return {false, buf};
  }
  if (policy.kind == PolicyKind::RuleBased) {
    std::snprintf(buf, sizeof buf, "continue: loop %d < max_loops %d", t, policy.max_loops);
    return {true, buf};
  }

  const bool metric = policy.kind == PolicyKind::MetricBased;
  const char* name = metric ? "D_es accuracy" : "holdout AUC";
  const double now = metric ? cur.des_accuracy : *cur.external_auc;
  if (t == 1) {
    std::snprintf(buf, sizeof buf, "continue: first loop, %s %.6f has no predecessor", name, now);
    return {true, buf};
  }
  const LoopMetrics& prev = state.metrics[state.metrics.size() - 2];
  if (!metric && !prev.external_auc)
    throw ConfigError("external_validation control needs a labeled holdout");
  const double before = metric ? prev.des_accuracy : *prev.external_auc;
  const bool improved = now - before > policy.epsilon;
  std::snprintf(buf, sizeof buf, "%s: %s %.6f -> %.6f (epsilon %g)",
                improved ? "continue" : "stop", name, before, now, policy.epsilon);
  return {improved, buf};
}

SoftLabelSet reverse_targets(const ModelPair& pair, const Dataset& train, double temperature) {
  const Matrix probs = pair.predict(train);
  std::vector<Prob2> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    out[i] = sharpen(Prob2{probs(i, 0), probs(i, 1)}, temperature);
  return SoftLabelSet::from_vectors(std::move(out), "student");
}

// ---------------------------------------------------------------------------
// Persistence

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw StateError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class StateWriter {
 public:
  explicit StateWriter(fs::path dir) : dir_(std::move(dir)) {}
  void put(const std::string& rel, const std::string& bytes) {
    const fs::path p = dir_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw StateError("cannot create " + p.parent_path().string() + ": " + ec.message());
    // Skip rewriting files whose bytes are unchanged.
    if (!(fs::exists(p) && read_file(p) == bytes)) write_file_atomic(p, bytes);
    manifest_[rel] = sha256_hex(bytes);
  }
  const std::map<std::string, std::string>& manifest() const { return manifest_; }

 private:
  fs::path dir_;
  std::map<std::string, std::string> manifest_;
};

std::string loop_dir(std::size_t t) { return "loop_" + std::to_string(t) + "/"; }

}  // namespace

std::string annotations_to_csv(const SoftLabelSet& labels, std::span<const std::uint64_t> ids) {
  std::string out = "row_id,neg,pos,hard_label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += std::to_string(ids[i]) + "," + fmt17(labels.confidences[i].neg) + "," +
           fmt17(labels.confidences[i].pos) + "," + std::to_string(labels.hard_labels[i]) + "\n";
  }
  return out;
}

SoftLabelSet annotations_from_csv(const std::string& text, std::vector<std::uint64_t>& ids) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "row_id,neg,pos,hard_label")
    throw StateError("annotations file has an unexpected header");
  SoftLabelSet s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') ||
        !std::getline(ls, d))
      throw StateError("malformed annotations line: " + line);
    try {
      ids.push_back(std::stoull(a));
      s.confidences.push_back(Prob2{std::stod(b), std::stod(c)});
      s.hard_labels.push_back(std::stoi(d));
    } catch (const std::logic_error&) {
      throw StateError("malformed annotations line: " + line);
    }
  }
  return s;
}

void persist_state(const LoopState& s, const fs::path& dir, std::uint64_t schema_fingerprint) {
  StateWriter w(dir);
  w.put("config.json", s.config_snapshot.dump(2) + "\n");
  for (std::size_t k = 0; k < s.provider_states.size(); ++k)
    w.put(loop_dir(k + 1) + "provider.json", s.provider_states[k].dump(2) + "\n");
  for (std::size_t k = 0; k < s.annotations.size(); ++k) {
    const auto& a = s.annotations[k];
    if (a.size() != s.train_ids.size())
      throw StateError("annotation count does not match the training rows");
    w.put(loop_dir(k + 1) + "annotations.csv", annotations_to_csv(a, s.train_ids));
    json meta = {{"source", a.source}, {"loop", a.loop}, {"failed_ids", s.failed_ids[k]}};
    w.put(loop_dir(k + 1) + "annotations.json", meta.dump(2) + "\n");
  }
  for (std::size_t k = 0; k < s.checkpoints.size(); ++k) {
    w.put(loop_dir(k + 1) + "model_a.ckpt", serialize_model(s.checkpoints[k].a, schema_fingerprint));
    w.put(loop_dir(k + 1) + "model_b.ckpt", serialize_model(s.checkpoints[k].b, schema_fingerprint));
    w.put(loop_dir(k + 1) + "teach_report.json", s.teach_reports[k].dump(2) + "\n");
  }
  for (std::size_t k = 0; k < s.metrics.size(); ++k)
    w.put(loop_dir(k + 1) + "metrics.json", s.metrics[k].to_json().dump(2) + "\n");

  json st = {{"format_version", kStateFormatVersion},
             {"schema_fingerprint", schema_fingerprint},
             {"t", s.t},
             {"phase", to_string(s.phase)},
             {"seed", s.seed},
             {"annotate_calls", s.annotate_calls},
             {"finetune_calls", s.finetune_calls},
             {"stop_reason", s.stop_reason},
             {"provider_identities", s.provider_identities},
             {"train_ids", s.train_ids},
             {"num_annotations", s.annotations.size()},
             {"num_checkpoints", s.checkpoints.size()},
             {"num_metrics", s.metrics.size()},
             {"num_providers", s.provider_states.size()},
             {"files", w.manifest()}};
  write_file_atomic(dir / "state.json", st.dump(2) + "\n");
}

LoopState restore_state(const fs::path& dir, std::uint64_t schema_fingerprint) {
  json st;
  try {
    st = json::parse(read_file(dir / "state.json"));
  } catch (const json::exception& e) {
    throw StateError("state.json is unreadable: " + std::string(e.what()));
  }
  try {
    if (st.at("format_version").get<int>() != kStateFormatVersion)
      throw StateError("state format version " + st.at("format_version").dump() +
                       " differs from " + std::to_string(kStateFormatVersion));
    if (st.at("schema_fingerprint").get<std::uint64_t>() != schema_fingerprint)
      throw StateError("state directory was written for a different schema");

    const auto files = st.at("files").get<std::map<std::string, std::string>>();
    std::map<std::string, std::string> contents;
    for (const auto& [rel, digest] : files) {
      const fs::path p = dir / rel;
      if (!fs::exists(p)) throw StateError("missing state file " + rel);
      std::string bytes = read_file(p);
      if (sha256_hex(bytes) != digest) throw StateError("checksum mismatch for " + rel);
      contents.emplace(rel, std::move(bytes));
    }
    auto get = [&](const std::string& rel) -> const std::string& {
      const auto it = contents.find(rel);
      if (it == contents.end()) throw StateError("state manifest lacks " + rel);
      return it->second;
    };

    LoopState s;
    s.t = st.at("t").get<int>();
    s.phase = loop_phase_from_string(st.at("phase").get<std::string>());
    s.seed = st.at("seed").get<std::uint64_t>();
    s.annotate_calls = st.at("annotate_calls").get<int>();
    s.finetune_calls = st.at("finetune_calls").get<int>();
    s.stop_reason = st.at("stop_reason").get<std::string>();
    s.provider_identities = st.at("provider_identities").get<std::vector<std::string>>();
    s.config_snapshot = json::parse(get("config.json"));
    s.train_ids = st.at("train_ids").get<std::vector<std::uint64_t>>();
    const auto np = st.at("num_providers").get<std::size_t>();
    for (std::size_t k = 1; k <= np; ++k)
      s.provider_states.push_back(json::parse(get(loop_dir(k) + "provider.json")));
    const auto na = st.at("num_annotations").get<std::size_t>();
    for (std::size_t k = 1; k <= na; ++k) {
      std::vector<std::uint64_t> ids;
      SoftLabelSet labels = annotations_from_csv(get(loop_dir(k) + "annotations.csv"), ids);
      const json meta = json::parse(get(loop_dir(k) + "annotations.json"));
      if (ids != s.train_ids) throw StateError("annotation rows of loop " + std::to_string(k) +
                                               " do not match the training rows");
      labels.source = meta.at("source").get<std::string>();
      labels.loop = meta.at("loop").get<int>();
      s.annotations.push_back(std::move(labels));
      s.failed_ids.push_back(meta.at("failed_ids").get<std::vector<std::uint64_t>>());
    }
    const auto nc = st.at("num_checkpoints").get<std::size_t>();
    for (std::size_t k = 1; k <= nc; ++k) {
      s.checkpoints.push_back(
          ModelPair{deserialize_model(get(loop_dir(k) + "model_a.ckpt"), schema_fingerprint),
                    deserialize_model(get(loop_dir(k) + "model_b.ckpt"), schema_fingerprint)});
      s.teach_reports.push_back(json::parse(get(loop_dir(k) + "teach_report.json")));
    }
    const auto nm = st.at("num_metrics").get<std::size_t>();
    for (std::size_t k = 1; k <= nm; ++k)
      s.metrics.push_back(LoopMetrics::from_json(json::parse(get(loop_dir(k) + "metrics.json"))));
    return s;
  } catch (const json::exception& e) {
    throw StateError("state directory is inconsistent: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Lock

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StateError("cannot create " + dir.string() + ": " + ec.message());
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StateError("cannot open lock file " + path_.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw StateError("state directory " + dir.string() + " is in use by another process");
  }
}

DirectoryLock::~DirectoryLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

std::vector<double> positive_column(const Matrix& probs) {
  std::vector<double> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = probs(i, 1);
  return out;
}

json config_snapshot(const Split& split, const AnnotatorProvider& provider,
                     const LoopOptions& o) {
  const auto& ids = split.train.ids();
  std::string id_bytes(reinterpret_cast<const char*>(ids.data()), ids.size() * sizeof ids[0]);
  return {{"train", o.train.to_json()},
          {"policy", o.policy.to_json()},
          {"annotate",
           {{"retry_limit", o.annotate.retry_limit},
            {"max_in_flight", o.annotate.max_in_flight},
            {"backoff_ms", o.annotate.backoff_ms}}},
          {"initial_provider", provider.identity()},
          {"schema_fingerprint", split.train.schema().fingerprint()},
          {"train_rows", ids.size()},
          {"train_ids_sha256", sha256_hex(id_bytes)},
          {"holdout", o.holdout != nullptr}};
}

class Orchestrator {
 public:
  Orchestrator(const Split& split, std::shared_ptr<AnnotatorProvider> provider,
               const LoopOptions& options)
      : split_(split), provider_(std::move(provider)), o_(options),
        fingerprint_(split.train.schema().fingerprint()) {}

  LoopResult run() {
    if (!provider_) throw ConfigError("no annotator provider");
    o_.train.validate();
    if (o_.policy.max_loops < 1) throw ConfigError("policy max_loops must be >= 1");
    if (!provider_->can_score())
      throw ConfigError("annotator '" + provider_->identity() + "' cannot score rows");
    if (o_.policy.max_loops > 1 && !provider_->can_finetune())
      throw ConfigError("annotator '" + provider_->identity() +
                        "' cannot be fine-tuned; set max_loops to 1");
    if (o_.policy.kind == PolicyKind::ExternalValidation && o_.holdout == nullptr)
      throw ConfigError("external_validation control needs a labeled holdout");
    if (o_.holdout && o_.holdout->labels.size() != o_.holdout->data.size())
      throw ConfigError("holdout labels do not match the holdout rows");
    if (o_.test_gold && o_.test_gold->size() != split_.test.size())
      throw ConfigError("test labels do not match the test rows");
    if (split_.train.empty()) throw DataError("training split is empty");

    const json snapshot = config_snapshot(split_, *provider_, o_);
    if (o_.state_dir) {
      lock_.emplace(*o_.state_dir);
      if (fs::exists(*o_.state_dir / "state.json")) {
        if (!o_.resume)
          throw StateError("state directory " + o_.state_dir->string() +
                           " already holds a run; resume it or choose another directory");
        s_ = restore_state(*o_.state_dir, fingerprint_);
        if (s_.config_snapshot != snapshot)
          throw ConfigError("configuration differs from the run recorded in " +
                            o_.state_dir->string());
        if (s_.train_ids != split_.train.ids())
          throw StateError("training rows differ from the recorded run");
        provider_ = provider_from_json(s_.provider_states.at(s_.t - 1));
        log("resuming loop " + std::to_string(s_.t) + " at phase " + to_string(s_.phase));
      }
    }
    if (s_.provider_states.empty()) {
      s_.seed = o_.train.seed;
      s_.config_snapshot = snapshot;
      s_.train_ids = split_.train.ids();
      s_.provider_states.push_back(provider_->to_json());
      s_.provider_identities.push_back(provider_->identity());
      commit(nullptr);
    }

    while (s_.phase != LoopPhase::Done) {
      const int t = s_.t;
      const LoopPhase phase = s_.phase;
      switch (phase) {
        case LoopPhase::Annotate: annotate(); break;
        case LoopPhase::Teach: teach_phase(); break;
        case LoopPhase::Decide: decide(); break;
        case LoopPhase::Finetune: finetune_phase(); break;
        case LoopPhase::Done: break;
      }
      if (o_.interrupt_after && o_.interrupt_after(t, phase))
        throw LoopInterrupted("interrupted after loop " + std::to_string(t) + " phase " +
                              to_string(phase));
    }

    LoopResult result;
    if (s_.checkpoints.empty()) throw StateError("loop finished without a trained model");
    result.test_predictions = s_.checkpoints.back().predict(split_.test);
    result.state = s_;
    return result;
  }

 private:
  void log(const std::string& msg) const {
    if (o_.log) o_.log(msg);
  }

  void commit(const LoopMetrics* appended) {
    if (!o_.state_dir) return;
    if (appended) {
      const fs::path p = *o_.state_dir / "metrics.jsonl";
      std::ofstream out(p, std::ios::app);
      out << appended->to_json().dump() << "\n";
      if (!out) throw StateError("cannot append to " + p.string());
    }
    persist_state(s_, *o_.state_dir, fingerprint_);
  }

  void annotate() {
    AnnotateOptions opts = o_.annotate;
    opts.loop = s_.t;
    AnnotationResult r = annotate_dataset(*provider_, split_.train, opts);
    for (const auto& d : r.diagnostics) log(d);
    r.labels.loop = s_.t;
    s_.annotations.push_back(std::move(r.labels));
    s_.failed_ids.push_back(std::move(r.failed_ids));
    ++s_.annotate_calls;
    s_.phase = LoopPhase::Teach;
    log("loop " + std::to_string(s_.t) + ": annotated " + std::to_string(split_.train.size()) +
        " rows, " + std::to_string(s_.failed_ids.back().size()) + " failed");
    commit(nullptr);
  }

  void teach_phase() {
    const SoftLabelSet& labels = s_.annotations.at(s_.t - 1);
    TeachResult r = teach(split_.train, labels, o_.train);
    const Matrix& x = split_.train.values();

    LoopMetrics m;
    m.t = s_.t;
    m.des_accuracy = early_stop_accuracy(r.pair, x, r.des);
    m.des_loss = early_stop_loss(r.pair, x, r.des);
    m.des_size = r.des.size();
    m.chosen_temperature = r.report.chosen_temperature;
    m.failed_rows = s_.failed_ids.at(s_.t - 1).size();
    m.provider_identity = provider_->identity();
    if (o_.holdout)
      m.external_auc = auc(positive_column(r.pair.predict(o_.holdout->data)), o_.holdout->labels);
    if (o_.test_gold) {
      m.student_test_auc = auc(positive_column(r.pair.predict(split_.test)), *o_.test_gold);
      AnnotateOptions opts = o_.annotate;
      opts.loop = s_.t;
      const AnnotationResult tr = annotate_dataset(*provider_, split_.test, opts);
      m.annotator_test_auc = auc(tr.labels.positive(), *o_.test_gold);
    }

    s_.checkpoints.push_back(std::move(r.pair));
    s_.teach_reports.push_back(r.report.to_json());
    s_.metrics.push_back(m);
    s_.phase = LoopPhase::Decide;
    char buf[160];
    std::snprintf(buf, sizeof buf, "loop %d: T=%g, D_es %zu rows, accuracy %.4f, loss %.4f", m.t,
                  m.chosen_temperature, m.des_size, m.des_accuracy, m.des_loss);
    log(buf);
    commit(&s_.metrics.back());
  }

  void decide() {
    const PolicyDecision d = evaluate_policy(o_.policy, s_);
    s_.metrics.back().decision = d.rationale;
    if (d.continue_loop) {
      s_.phase = LoopPhase::Finetune;
    } else {
      s_.phase = LoopPhase::Done;
      s_.stop_reason = d.rationale;
    }
    log("loop " + std::to_string(s_.t) + ": " + d.rationale);
    commit(&s_.metrics.back());
  }

  void finetune_phase() {
    const SoftLabelSet targets = reverse_targets(s_.checkpoints.back(), split_.train,
                                                 o_.train.reverse_sharpen_temperature);
    const FinetuneCorpus corpus = build_finetune_corpus(split_.train, targets);
    std::shared_ptr<AnnotatorProvider> tuned;
    try {
      tuned = finetune(*provider_, corpus);
    } catch (const ProviderError& e) {
      // The last good loop stands; the run ends here.
      s_.phase = LoopPhase::Done;
      s_.stop_reason = std::string("fine-tuning failed: ") + e.what();
      log("loop " + std::to_string(s_.t) + ": " + s_.stop_reason);
      commit(nullptr);
      return;
    }
    ++s_.finetune_calls;
    provider_ = std::move(tuned);
    ++s_.t;
    s_.provider_states.push_back(provider_->to_json());
    s_.provider_identities.push_back(provider_->identity());
    s_.phase = LoopPhase::Annotate;
    log("fine-tuned annotator on " + std::to_string(corpus.size()) + " rows: " +
        provider_->identity());
    commit(nullptr);
  }

  const Split& split_;
  std::shared_ptr<AnnotatorProvider> provider_;
  const LoopOptions& o_;
  std::uint64_t fingerprint_;
  LoopState s_;
  std::optional<DirectoryLock> lock_;
};

}  // namespace

LoopResult run_loop(const Split& split, std::shared_ptr<AnnotatorProvider> provider,
                    const LoopOptions& options) {
  return Orchestrator(split, std::move(provider), options).run();
}

}  // namespace sersal
