#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sersal/annotator.hpp"
#include "sersal/lnl.hpp"
#include "sersal/loop.hpp"

namespace sersal {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitProvider = 3;
inline constexpr int kExitTraining = 4;

// One run, read from a JSON file. Relative paths resolve against the
// directory of that file.
//
//   {
//     "data": "heart.csv", "schema": "heart.schema.json",
//     "state_dir": "run", "output_dir": "run/out",
//     "seed": 0, "test_fraction": 0.2,
//     "provider": {"kind": "simulated", "oracle": "oracle.json"}
//              | {"kind": "network", "endpoint": "...", "model": "...",
//                 "api_key_env": "OPENAI_API_KEY"},
//     "train": {...}, "policy": {...},
//     "annotate": {"retry_limit": 3, "max_in_flight": 4, "backoff_ms": 0},
//     "evaluation": {"allow_gold_labels": false, "baseline_trials": 100,
//                    "shapley_samples": 1000, "holdout": "holdout.csv"}
//   }
struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path schema;
  std::filesystem::path state_dir = "sersal_state";
  std::filesystem::path output_dir;  // defaults to <state_dir>/out
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  nlohmann::json provider;  // paths inside are already resolved
  TrainConfig train;
  QualityControlPolicy policy;
  AnnotateOptions annotate;

  bool allow_gold_labels = false;
  int baseline_trials = 100;
  int shapley_samples = 1000;
  std::optional<std::filesystem::path> holdout;

  // Throws ConfigError for missing keys, bad values, or missing files.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
};

// Builds the annotator named by a provider block. Simulated providers read
// their oracle config from the file given under "oracle" or inline under
// "config"; network providers read the API key from the environment.
std::shared_ptr<AnnotatorProvider> make_provider(const nlohmann::json& block);

// Entry point of the command-line tool; returns the exit code.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace sersal
