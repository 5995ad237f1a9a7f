#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "doctest.h"

#include <cstdlib>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "sersal/network_provider.hpp"
#include "sersal/synthetic.hpp"

using namespace sersal;
using nlohmann::json;

namespace {

// Local stand-in for a chat-completion service with a fine-tuning API.
class MockService {
 public:
  std::mutex mu;
  std::vector<std::string> auth_seen;
  std::vector<json> chat_requests;
  std::string uploaded;
  json job_request;
  int polls_until_done = 2;
  std::string final_status = "succeeded";
  int chat_status = 200;
  std::string reply = "Likelihood: 0.8";

  MockService() {
    svr_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu);
      auth_seen.push_back(req.get_header_value("Authorization"));
      chat_requests.push_back(json::parse(req.body));
      res.status = chat_status;
      const json body{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", reply}}}}})}};
      res.set_content(body.dump(), "application/json");
    });
    svr_.Post("/v1/files", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu);
      uploaded = req.get_file_value("file").content;
      res.set_content(json{{"id", "file-1"}}.dump(), "application/json");
    });
    svr_.Post("/v1/fine_tuning/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu);
      job_request = json::parse(req.body);
      res.set_content(json{{"id", "ftjob-1"}, {"status", "queued"}}.dump(), "application/json");
    });
    svr_.Get("/v1/fine_tuning/jobs/ftjob-1", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu);
      json body{{"id", "ftjob-1"}, {"status", "running"}};
      if (--polls_until_done <= 0) {
        body["status"] = final_status;
        if (final_status == "succeeded") body["fine_tuned_model"] = "ft:base:tuned";
        else body["error"] = {{"message", "bad corpus"}};
      }
      res.set_content(body.dump(), "application/json");
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~MockService() {
    svr_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server svr_;
  int port_ = 0;
  std::thread thread_;
};

NetworkProviderConfig config_for(const MockService& s) {
  NetworkProviderConfig c;
  c.endpoint = s.endpoint();
  c.model = "base";
  c.api_key_env = "SERSAL_TEST_API_KEY";
  c.poll_interval_ms = 1;
  c.timeout_seconds = 5;
  return c;
}

}  // namespace

TEST_CASE("chat completion request and response shapes") {
  const json req = NetworkProvider::chat_request("m", "hello", 0.0);
  CHECK(req.at("model") == "m");
  CHECK(req.at("messages").at(0).at("content") == "hello");
  CHECK(req.at("temperature") == 0.0);
  CHECK(NetworkProvider::chat_response_text(R"({"choices":[{"message":{"content":"0.4"}}]})") == "0.4");
  CHECK_THROWS_AS(NetworkProvider::chat_response_text("{}"), ProviderError);
  CHECK_THROWS_AS(NetworkProvider::chat_response_text("not json"), ProviderError);
}

TEST_CASE("network provider annotates through the chat endpoint with the key from the environment") {
  MockService svc;
  ::setenv("SERSAL_TEST_API_KEY", "sk-test", 1);
  const NetworkProvider p(config_for(svc));
  SyntheticConfig sc;
  sc.rows = 12;
  sc.features = 2;
  const auto bench = make_synthetic(sc);
  const AnnotationResult r = annotate_dataset(p, bench.data);
  CHECK(r.failed_ids.empty());
  for (const auto& c : r.labels.confidences) CHECK(c.pos == 0.8);
  std::lock_guard lock(svc.mu);
  REQUIRE(svc.chat_requests.size() == 12);
  for (const auto& a : svc.auth_seen) CHECK(a == "Bearer sk-test");
  CHECK(svc.chat_requests[0].at("model") == "base");
  CHECK(svc.chat_requests[0].at("messages").at(0).at("content").get<std::string>().find("[x1]") !=
        std::string::npos);
  // The key never appears in the serialized provider.
  CHECK(p.to_json().dump().find("sk-test") == std::string::npos);
  ::unsetenv("SERSAL_TEST_API_KEY");
}

TEST_CASE("fine-tune uploads the corpus, polls the job and returns the tuned model") {
  MockService svc;
  const NetworkProvider p(config_for(svc));
  FinetuneCorpus corpus;
  corpus.records.push_back({1, {"prompt one"}, 0.9999, "0.9999", {}});
  corpus.records.push_back({2, {"prompt two"}, 0.0001, "0.0001", {}});
  const auto tuned = finetune(p, corpus);
  CHECK(tuned->identity() == "ft:base:tuned");
  CHECK(p.identity() == "base");
  std::lock_guard lock(svc.mu);
  CHECK(svc.uploaded == corpus.to_jsonl());
  CHECK(svc.job_request.at("training_file") == "file-1");
  CHECK(svc.job_request.at("hyperparameters").at("n_epochs") == 3);
  const json state = tuned->to_json();
  CHECK(state.at("last_job").at("job_id") == "ftjob-1");
  CHECK(provider_from_json(state)->identity() == "ft:base:tuned");
}

TEST_CASE("failed fine-tune jobs and transport errors surface as ProviderError") {
  MockService svc;
  svc.final_status = "failed";
  const NetworkProvider p(config_for(svc));
  FinetuneCorpus corpus;
  corpus.records.push_back({1, {"p"}, 0.5, "0.5000", {}});
  try {
    finetune(p, corpus);
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    CHECK(std::string(e.what()).find("bad corpus") != std::string::npos);
  }

  svc.chat_status = 500;
  const std::string prompt_text = "x";
  const PromptText prompt{prompt_text};
  CHECK_THROWS_AS(p.complete({0, &prompt, {}}), ProviderError);

  NetworkProviderConfig dead = config_for(svc);
  dead.endpoint = "http://127.0.0.1:1";
  dead.timeout_seconds = 1;
  CHECK_THROWS_AS(NetworkProvider(dead).complete({0, &prompt, {}}), ProviderError);
}

TEST_CASE("unparseable replies are retried then marked failed") {
  MockService svc;
  svc.reply = "I cannot determine this.";
  const NetworkProvider p(config_for(svc));
  SyntheticConfig sc;
  sc.rows = 4;
  sc.features = 2;
  const auto bench = make_synthetic(sc);
  AnnotateOptions o;
  o.retry_limit = 2;
  const AnnotationResult r = annotate_dataset(p, bench.data, o);
  CHECK(r.failed_ids.size() == 4);
  std::lock_guard lock(svc.mu);
  CHECK(svc.chat_requests.size() == 8);
}
