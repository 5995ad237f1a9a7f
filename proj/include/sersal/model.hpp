#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sersal/data.hpp"
#include "sersal/matrix.hpp"

namespace sersal {

// Architecture of the student: numerical inputs and one embedding per
// categorical column feed a ReLU MLP that emits two logits.
struct ModelSpec {
  std::vector<bool> categorical;           // per feature column, schema order
  std::vector<std::size_t> cardinalities;  // per categorical column
  std::size_t embedding_dim = 8;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t num_classes = 2;

  static ModelSpec for_dataset(const Dataset& ds, std::vector<std::size_t> hidden = {64, 64},
                               std::size_t embedding_dim = 8);
  std::size_t num_features() const { return categorical.size(); }
  std::size_t num_numerical() const;
  std::size_t input_dim() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
  bool operator==(const ModelSpec&) const = default;
};

// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> activations;  // [0] = input, then each hidden output
  Matrix logits;
  Matrix probs;
};

class SmallModel {
 public:
  struct DenseLayer {
    std::size_t in = 0, out = 0;
    std::size_t weight_offset = 0, bias_offset = 0;
  };

  SmallModel() = default;
  // Hidden layers are He-uniform, the output layer and all biases start at
  // zero (every initial prediction is 0.5); embeddings ~ N(0, 1).
  static SmallModel init(const ModelSpec& spec, std::uint64_t seed);
  static SmallModel zeros(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // Feature rows (dataset values) to the MLP input representation.
  void embed(const Matrix& features, Matrix& input) const;
  // Accumulates embedding-table gradients from d(input).
  void embed_backward(const Matrix& features, const Matrix& dinput, std::span<double> grad) const;
  void forward_input(const Matrix& input, ForwardCache& cache) const;
  // Accumulates parameter gradients from d(logits); optionally returns d(input).
  void backward_input(const ForwardCache& cache, const Matrix& dlogits, std::span<double> grad,
                      Matrix* dinput) const;

  bool operator==(const SmallModel& o) const { return spec_ == o.spec_ && params_ == o.params_; }

 private:
  void layout();

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
  std::vector<std::size_t> embedding_offsets_;
  std::vector<DenseLayer> layers_;
};

// Softmax probabilities for a batch of feature rows. Throws DataError on a
// column-count mismatch.
Matrix forward(const SmallModel& model, const Matrix& batch);
Matrix predict_proba(const SmallModel& model, const Dataset& ds);

// -sum_c q_c log p_c with the log argument clamped at 1e-12.
double soft_cross_entropy(const Prob2& pred, const Prob2& target);

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<double> m, v;

  explicit AdamState(double lr = 1e-4) : learning_rate(lr) {}
  void apply(std::span<double> params, std::span<const double> grad);
};

// One optimizer step of mean soft cross-entropy on a batch. Returns the
// pre-step loss; throws TrainingError when it is not finite.
double train_step(SmallModel& model, AdamState& optimizer, const Matrix& batch,
                  std::span<const Prob2> targets);

// Binary checkpoint, little-endian:
//   "SERSALCK" | u32 version | u64 schema fingerprint | u32 n | n bytes spec JSON
//   | u64 seed | u64 count | count x f64 parameters | u64 FNV-1a of all prior bytes
std::string serialize_model(const SmallModel& model, std::uint64_t schema_fingerprint);
SmallModel deserialize_model(const std::string& bytes, std::uint64_t expected_fingerprint);
void save_checkpoint(const SmallModel& model, std::uint64_t schema_fingerprint,
                     const std::filesystem::path& path);
SmallModel load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_fingerprint);

}  // namespace sersal
