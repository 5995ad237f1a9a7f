#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sersal/data.hpp"
#include "sersal/error.hpp"
#include "sersal/matrix.hpp"

namespace sersal {

struct PromptText {
  std::string text;
  bool operator==(const PromptText&) const = default;
};

// "<preamble>, please give a likelihood between 0 to 1 of <task>: [Name] value (unit); ..."
PromptText build_prompt(const Dataset& ds, std::size_t row);
PromptText build_prompt(std::span<const std::string> cells, const FeatureSchema& schema);

// Returns the first numeric literal in `response` whose value lies in [0, 1];
// literals followed by '%' are divided by 100 first. Throws ParseError when
// no such literal exists.
double parse_confidence(std::string_view response);

// Per-row class-probability vectors from one annotator pass.
struct SoftLabelSet {
  std::vector<Prob2> confidences;
  std::vector<int> hard_labels;
  std::string source;  // annotator identity
  int loop = 0;

  std::size_t size() const { return confidences.size(); }
  // (1 - p, p) per row with hard labels derived by argmax.
  static SoftLabelSet from_positive(std::span<const double> positive, std::string source = {},
                                    int loop = 0);
  static SoftLabelSet from_vectors(std::vector<Prob2> vectors, std::string source = {},
                                   int loop = 0);
  std::vector<double> positive() const;
  // One-hot copy of the hard labels.
  SoftLabelSet hardened() const;
  // Throws DataError when a vector leaves the simplex or a hard label
  // disagrees with its argmax.
  void validate() const;
};

// What the annotator is asked about one row. Network providers only read the
// prompt; the simulated oracle reads the id and the raw feature values.
struct AnnotationQuery {
  std::uint64_t row_id = 0;
  const PromptText* prompt = nullptr;
  std::span<const double> features;
};

struct FinetuneRecord {
  std::uint64_t row_id = 0;
  PromptText prompt;
  double target = 0.5;     // positive-class likelihood
  std::string completion;  // `target` rendered as text
  std::vector<double> features;
};

struct FinetuneCorpus {
  std::vector<FinetuneRecord> records;
  int epochs_max = 3;

  std::size_t size() const { return records.size(); }
  // One {"prompt", "completion"} object per line.
  std::string to_jsonl() const;
};

// Fixed four-decimal likelihood text, e.g. 0.9999.
std::string render_likelihood(double p);

class AnnotatorProvider {
 public:
  virtual ~AnnotatorProvider() = default;

  virtual std::string identity() const = 0;
  virtual bool can_score() const = 0;
  virtual bool can_finetune() const = 0;
  // Raw response text for one query. Must be safe to call concurrently.
  // Throws ProviderError when the provider cannot be reached.
  virtual std::string complete(const AnnotationQuery& query) const = 0;
  // Returns the tuned provider; `this` is left unchanged.
  virtual std::shared_ptr<AnnotatorProvider> finetune(const FinetuneCorpus& corpus) const = 0;
  // Enough state to rebuild the provider with provider_from_json.
  virtual nlohmann::json to_json() const = 0;
};

std::shared_ptr<AnnotatorProvider> provider_from_json(const nlohmann::json& j);

struct AnnotateOptions {
  int retry_limit = 3;
  int max_in_flight = 4;
  // Delay before retry k is backoff_ms * 2^(k-1).
  int backoff_ms = 0;
  int loop = 1;
};

struct AnnotationResult {
  SoftLabelSet labels;
  // Rows that never produced a parseable likelihood; assigned (0.5, 0.5).
  std::vector<std::uint64_t> failed_ids;
  std::vector<std::string> diagnostics;
};

// Thrown when the provider stays unreachable; carries what was collected.
class AnnotationAborted : public ProviderError {
 public:
  AnnotationAborted(const std::string& what, AnnotationResult partial,
                    std::vector<std::uint64_t> unreached_ids)
      : ProviderError(what), partial_(std::move(partial)), unreached_(std::move(unreached_ids)) {}
  const AnnotationResult& partial() const { return partial_; }
  const std::vector<std::uint64_t>& unreached_ids() const { return unreached_; }

 private:
  AnnotationResult partial_;
  std::vector<std::uint64_t> unreached_;
};

AnnotationResult annotate_dataset(const AnnotatorProvider& provider, const Dataset& ds,
                                  const AnnotateOptions& options = {});

// Pairs every training row's prompt with its sharpened positive-class target.
FinetuneCorpus build_finetune_corpus(const Dataset& ds, const SoftLabelSet& sharpened);

std::shared_ptr<AnnotatorProvider> finetune(const AnnotatorProvider& provider,
                                            const FinetuneCorpus& corpus);

}  // namespace sersal
