#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "sersal/network_provider.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "sersal/simulated_oracle.hpp"

namespace sersal {

using nlohmann::json;

namespace {

httplib::Headers auth_headers(const std::string& key) {
  httplib::Headers h;
  if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
  return h;
}

std::unique_ptr<httplib::Client> make_client(const NetworkProviderConfig& c) {
  auto cli = std::make_unique<httplib::Client>(c.endpoint);
  if (!cli->is_valid()) throw ProviderError("invalid provider endpoint '" + c.endpoint + "'");
  cli->set_connection_timeout(c.timeout_seconds, 0);
  cli->set_read_timeout(c.timeout_seconds, 0);
  cli->set_write_timeout(c.timeout_seconds, 0);
  return cli;
}

json checked_json(const httplib::Result& res, const std::string& what) {
  if (!res) throw ProviderError(what + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw ProviderError(what + ": HTTP " + std::to_string(res->status) + ": " + res->body);
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ProviderError(what + ": malformed response body: " + e.what());
  }
}

}  // namespace

json NetworkProviderConfig::to_json() const {
  return {{"endpoint", endpoint},
          {"model", model},
          {"api_key_env", api_key_env},
          {"temperature", temperature},
          {"timeout_seconds", timeout_seconds},
          {"poll_interval_ms", poll_interval_ms},
          {"max_polls", max_polls},
          {"epochs_max", epochs_max}};
}

NetworkProviderConfig NetworkProviderConfig::from_json(const json& j) {
  NetworkProviderConfig c;
  try {
    c.endpoint = j.at("endpoint").get<std::string>();
    c.model = j.at("model").get<std::string>();
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.poll_interval_ms = j.value("poll_interval_ms", c.poll_interval_ms);
    c.max_polls = j.value("max_polls", c.max_polls);
    c.epochs_max = j.value("epochs_max", c.epochs_max);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network provider config: ") + e.what());
  }
  return c;
}

NetworkProvider::NetworkProvider(NetworkProviderConfig config) : config_(std::move(config)) {
  if (!config_.api_key_env.empty())
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

json NetworkProvider::chat_request(const std::string& model, const std::string& prompt,
                                   double temperature) {
  return {{"model", model},
          {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", temperature}};
}

std::string NetworkProvider::chat_response_text(const std::string& body) {
  try {
    const json j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed chat completion: ") + e.what());
  }
}

std::string NetworkProvider::complete(const AnnotationQuery& query) const {
  auto cli = make_client(config_);
  const json req = chat_request(config_.model, query.prompt ? query.prompt->text : std::string(),
                                config_.temperature);
  auto res = cli->Post("/v1/chat/completions", auth_headers(api_key_), req.dump(),
                       "application/json");
  if (!res) throw ProviderError("chat completion: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw ProviderError("chat completion: HTTP " + std::to_string(res->status));
  return chat_response_text(res->body);
}

std::shared_ptr<AnnotatorProvider> NetworkProvider::finetune(const FinetuneCorpus& corpus) const {
  auto cli = make_client(config_);
  const auto headers = auth_headers(api_key_);
  FinetuneJobInfo job;

  httplib::MultipartFormDataItems items = {
      {"purpose", "fine-tune", "", ""},
      {"file", corpus.to_jsonl(), "corpus.jsonl", "application/jsonl"},
  };
  const json file = checked_json(cli->Post("/v1/files", headers, items), "file upload");
  job.file_id = file.at("id").get<std::string>();

  const json create{{"training_file", job.file_id},
                    {"model", config_.model},
                    {"hyperparameters", {{"n_epochs", std::min(config_.epochs_max, corpus.epochs_max)}}}};
  json status = checked_json(
      cli->Post("/v1/fine_tuning/jobs", headers, create.dump(), "application/json"),
      "fine-tune job creation");
  job.job_id = status.at("id").get<std::string>();

  for (int poll = 0;; ++poll) {
    job.status = status.value("status", std::string());
    if (job.status == "succeeded" || job.status == "failed" || job.status == "cancelled") break;
    if (poll >= config_.max_polls)
      throw ProviderError("fine-tune job " + job.job_id + " did not finish after " +
                          std::to_string(poll) + " polls (last status '" + job.status + "')");
    std::this_thread::sleep_for(std::chrono::milliseconds(config_.poll_interval_ms));
    status = checked_json(cli->Get("/v1/fine_tuning/jobs/" + job.job_id, headers),
                          "fine-tune job status");
  }
  if (job.status != "succeeded") {
    std::string detail = status.contains("error") ? status["error"].dump() : std::string();
    throw ProviderError("fine-tune job " + job.job_id + " ended with status '" + job.status +
                        "' " + detail);
  }
  job.fine_tuned_model = status.at("fine_tuned_model").get<std::string>();

  NetworkProviderConfig next = config_;
  next.model = job.fine_tuned_model;
  auto tuned = std::make_shared<NetworkProvider>(next);
  tuned->last_job_ = job;
  return tuned;
}

json NetworkProvider::to_json() const {
  json j{{"kind", "network"}, {"config", config_.to_json()}};
  if (!last_job_.job_id.empty())
    j["last_job"] = {{"file_id", last_job_.file_id},
                     {"job_id", last_job_.job_id},
                     {"status", last_job_.status},
                     {"fine_tuned_model", last_job_.fine_tuned_model}};
  return j;
}

std::shared_ptr<AnnotatorProvider> provider_from_json(const json& j) {
  const auto kind = j.value("kind", std::string());
  if (kind == "simulated") return SimulatedOracle::from_json(j);
  if (kind == "network")
    return std::make_shared<NetworkProvider>(NetworkProviderConfig::from_json(j.at("config")));
  throw ConfigError("unknown provider kind '" + kind + "'");
}

}  // namespace sersal
