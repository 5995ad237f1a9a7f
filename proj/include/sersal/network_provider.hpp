#pragma once

#include <string>

#include "sersal/annotator.hpp"

namespace sersal {

// Chat-completion style HTTP(S) endpoint with a fine-tuning job API.
struct NetworkProviderConfig {
  std::string endpoint;  // scheme://host[:port]
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int timeout_seconds = 60;
  int poll_interval_ms = 5000;
  int max_polls = 2000;
  int epochs_max = 3;

  nlohmann::json to_json() const;
  static NetworkProviderConfig from_json(const nlohmann::json& j);
};

// Metadata of the last fine-tune job, kept for reporting.
struct FinetuneJobInfo {
  std::string file_id;
  std::string job_id;
  std::string status;
  std::string fine_tuned_model;
};

class NetworkProvider final : public AnnotatorProvider {
 public:
  // The API key is read from the environment variable named in the config.
  explicit NetworkProvider(NetworkProviderConfig config);

  std::string identity() const override { return config_.model; }
  bool can_score() const override { return true; }
  bool can_finetune() const override { return true; }
  std::string complete(const AnnotationQuery& query) const override;
  std::shared_ptr<AnnotatorProvider> finetune(const FinetuneCorpus& corpus) const override;
  nlohmann::json to_json() const override;

  const NetworkProviderConfig& config() const { return config_; }
  const FinetuneJobInfo& last_job() const { return last_job_; }

  static nlohmann::json chat_request(const std::string& model, const std::string& prompt,
                                     double temperature);
  // Text of the first message choice; throws ProviderError on malformed bodies.
  static std::string chat_response_text(const std::string& body);

 private:
  NetworkProviderConfig config_;
  std::string api_key_;
  FinetuneJobInfo last_job_;
};

}  // namespace sersal
