#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sersal/annotator.hpp"
#include "sersal/data.hpp"
#include "sersal/lnl.hpp"

namespace sersal {

enum class PolicyKind { MetricBased, ExternalValidation, RuleBased };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

struct QualityControlPolicy {
  PolicyKind kind = PolicyKind::RuleBased;
  // Hard cap for every kind; rule_based continues while t < max_loops.
  int max_loops = 1;
  // Minimum improvement of the tracked metric over the previous loop.
  double epsilon = 1e-3;

  nlohmann::json to_json() const;
  static QualityControlPolicy from_json(const nlohmann::json& j);
};

// Labeled reference rows for external-validation control. Supplied by the
// operator; never derived from the split's gold labels.
struct Holdout {
  Dataset data;
  std::vector<int> labels;
};

struct LoopMetrics {
  int t = 0;
  double des_accuracy = 0.0;
  double des_loss = 0.0;
  std::size_t des_size = 0;
  double chosen_temperature = 0.0;
  std::size_t failed_rows = 0;
  std::string provider_identity;
  std::optional<double> external_auc;
  std::optional<double> student_test_auc;
  std::optional<double> annotator_test_auc;
  std::string decision;  // policy rationale, empty until decided

  nlohmann::json to_json() const;
  static LoopMetrics from_json(const nlohmann::json& j);
  bool operator==(const LoopMetrics&) const = default;
};

// The phase that runs next.
enum class LoopPhase { Annotate, Teach, Decide, Finetune, Done };
std::string to_string(LoopPhase phase);
LoopPhase loop_phase_from_string(const std::string& s);

struct LoopState {
  int t = 1;
  LoopPhase phase = LoopPhase::Annotate;
  std::uint64_t seed = 0;
  nlohmann::json config_snapshot;
  std::vector<std::uint64_t> train_ids;

  // Indexed by loop - 1.
  std::vector<SoftLabelSet> annotations;
  std::vector<std::vector<std::uint64_t>> failed_ids;
  std::vector<ModelPair> checkpoints;
  std::vector<nlohmann::json> teach_reports;
  std::vector<LoopMetrics> metrics;
  std::vector<nlohmann::json> provider_states;  // provider at the start of each loop
  std::vector<std::string> provider_identities;

  int annotate_calls = 0;
  int finetune_calls = 0;
  std::string stop_reason;

  bool operator==(const LoopState& o) const;
};

struct PolicyDecision {
  bool continue_loop = false;
  std::string rationale;
};

// Requires at least one completed teach phase. ConfigError when external
// validation is selected and no holdout metric was recorded.
PolicyDecision evaluate_policy(const QualityControlPolicy& policy, const LoopState& state);

// Thrown by run_loop when the interruption hook asks it to stop.
class LoopInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoopOptions {
  TrainConfig train;
  QualityControlPolicy policy;
  AnnotateOptions annotate;
  std::optional<std::filesystem::path> state_dir;
  bool resume = false;
  const Holdout* holdout = nullptr;
  // Gold labels of the test split, passed in by an evaluation context that
  // is allowed to read them. Enables per-loop test AUCs for the student and
  // the annotator.
  const std::vector<int>* test_gold = nullptr;
  // Called after every persisted phase with the loop and the phase that just
  // finished; returning true raises LoopInterrupted.
  std::function<bool(int t, LoopPhase finished)> interrupt_after;
  std::function<void(const std::string&)> log;
};

struct LoopResult {
  Matrix test_predictions;  // ensemble probabilities of the final pair
  LoopState state;
};

// Annotate, teach, decide, reverse-tune, repeat. With a state directory every
// phase is persisted before the next begins; with `resume` the run continues
// from the recorded phase.
LoopResult run_loop(const Split& split, std::shared_ptr<AnnotatorProvider> provider,
                    const LoopOptions& options);

// Sharpened ensemble predictions on the training rows (Algorithm targets for
// reverse tuning).
SoftLabelSet reverse_targets(const ModelPair& pair, const Dataset& train, double temperature);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kStateFormatVersion = 1;

// Layout:
//   state.json                 counters, phase, seed, fingerprint, and the
//                              SHA-256 of every file below except metrics.jsonl;
//                              written last, so it is the commit point
//   config.json                config snapshot
//   metrics.jsonl              one line per metrics update (append-only log)
//   loop_<t>/annotations.csv   row_id,neg,pos,hard_label
//   loop_<t>/annotations.json  source, failed ids
//   loop_<t>/provider.json     provider at the start of loop t
//   loop_<t>/model_a.ckpt, model_b.ckpt, teach_report.json, metrics.json
void persist_state(const LoopState& state, const std::filesystem::path& dir,
                   std::uint64_t schema_fingerprint);
LoopState restore_state(const std::filesystem::path& dir, std::uint64_t schema_fingerprint);

std::string sha256_hex(const std::string& bytes);

// "row_id,neg,pos,hard_label" with round-trip precision.
std::string annotations_to_csv(const SoftLabelSet& labels, std::span<const std::uint64_t> ids);
// Throws StateError on malformed text; row ids are appended to `ids`.
SoftLabelSet annotations_from_csv(const std::string& text, std::vector<std::uint64_t>& ids);

// Exclusive ownership of a state directory for one process.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace sersal
