#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sersal/matrix.hpp"

namespace sersal {

enum class FeatureKind { Numerical, Categorical };

struct FeatureColumn {
  std::string name;
  FeatureKind kind = FeatureKind::Numerical;
  std::optional<std::string> unit;

  bool operator==(const FeatureColumn&) const = default;
};

struct FeatureSchema {
  std::vector<FeatureColumn> columns;
  std::string label_column;
  std::string positive_class_name;
  // Completes "... a likelihood between 0 to 1 of <task_description>".
  std::string task_description;
  std::string role_preamble =
      "You are a professional doctor, here are some clinical metrics of a patient";

  std::size_t num_features() const { return columns.size(); }
  std::size_t num_numerical() const;
  std::size_t num_categorical() const;
  // Throws DataError when column names repeat, the label column is also a
  // feature, or there are no features.
  void validate() const;
  std::uint64_t fingerprint() const;

  bool operator==(const FeatureSchema&) const = default;
};

FeatureSchema load_schema(const std::filesystem::path& path);
void save_schema(const FeatureSchema& schema, const std::filesystem::path& path);
std::string schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const std::string& text);

// Counts reads of gold labels across every dataset derived from one source.
// The loop must never read them; tests and the CLI audit the counter.
class GoldLabelLedger {
 public:
  std::size_t reads() const { return reads_.load(); }
  void record_read() { reads_.fetch_add(1); }
  void lock() { locked_.store(true); }
  void unlock() { locked_.store(false); }
  bool locked() const { return locked_.load(); }

 private:
  std::atomic<std::size_t> reads_{0};
  std::atomic<bool> locked_{false};
};

// Immutable tabular matrix. Numerical cells hold their (possibly
// standardized) value, categorical cells hold the vocabulary index. The
// original cell text is retained for prompt rendering.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::shared_ptr<const FeatureSchema> schema, Matrix values,
          std::vector<std::string> cell_text,
          std::vector<std::vector<std::string>> vocabularies,
          std::vector<std::uint64_t> ids, std::optional<std::vector<int>> gold,
          std::shared_ptr<GoldLabelLedger> ledger = nullptr);

  const FeatureSchema& schema() const { return *schema_; }
  std::shared_ptr<const FeatureSchema> schema_ptr() const { return schema_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t num_features() const { return values_.cols(); }

  const Matrix& values() const { return values_; }
  // Values as parsed from the source, before any standardization.
  const Matrix& raw_values() const { return raw_values_; }
  std::span<const double> row(std::size_t i) const { return values_.row(i); }
  const std::string& cell_text(std::size_t row, std::size_t col) const {
    return cell_text_[row * values_.cols() + col];
  }
  const std::vector<std::vector<std::string>>& vocabularies() const { return vocabularies_; }
  // Vocabulary size per categorical column, in schema order.
  std::vector<std::size_t> categorical_cardinalities() const;
  const std::vector<std::uint64_t>& ids() const { return ids_; }

  bool has_gold_labels() const { return gold_.has_value(); }
  // Every call is recorded in the ledger. Throws GoldLabelAccessError when the
  // ledger is locked or no labels exist.
  const std::vector<int>& gold_labels() const;
  const std::shared_ptr<GoldLabelLedger>& gold_ledger() const { return ledger_; }

  Dataset subset(std::span<const std::size_t> rows) const;
  // Replaces the model-facing values; raw values and text are kept.
  Dataset with_values(Matrix values) const;
  Dataset without_gold_labels() const;

 private:
  std::shared_ptr<const FeatureSchema> schema_;
  Matrix values_;
  Matrix raw_values_;
  std::vector<std::string> cell_text_;
  std::vector<std::vector<std::string>> vocabularies_;
  std::vector<std::uint64_t> ids_;
  std::optional<std::vector<int>> gold_;
  std::shared_ptr<GoldLabelLedger> ledger_;
};

struct Split {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  bool stratified = true;
};

// Rows with a missing feature or label (empty, NA, ?, nan) are dropped.
// Row ids are the 0-based data-row index within the file.
Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);

// Stratifies on gold labels when `stratify` is set, otherwise splits
// uniformly at random without touching them.
Split stratified_split(const Dataset& ds, double test_fraction, std::uint64_t seed,
                       bool stratify = true);

// Per-column mean and population std fitted on one dataset.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 0 marks a zero-variance column
  std::vector<bool> numerical;

  static FeatureScaler fit(const Dataset& ds);
  Dataset transform(const Dataset& ds) const;
};

// Standardizes numerical columns with train statistics. Zero-variance columns
// become constant 0 and produce a warning.
Split standardize(const Split& split, std::vector<std::string>* warnings = nullptr);

// Rows of `ds` whose ids appear in `ids`, in the order of `ids`. Throws
// DataError for unknown ids.
Dataset select_ids(const Dataset& ds, std::span<const std::uint64_t> ids);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);

}  // namespace sersal
