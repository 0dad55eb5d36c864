#pragma once

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/protocol.hpp"

namespace sce {

struct HttpGatewayOptions {
  std::string base_url;              // e.g. "http://127.0.0.1:8080"
  std::optional<std::string> bearer_token;
  int attempts = 3;                  // transport errors only
  std::chrono::milliseconds backoff{200};  // doubled after every failed attempt
  std::chrono::seconds timeout{120};
  int max_inflight = 8;
};

// Reads GATEWAY_URL; throws UsageError when it is unset.
inline std::string gateway_url_from_env() {
  const char* url = std::getenv("GATEWAY_URL");
  if (!url || !*url) throw UsageError("no gateway URL configured and GATEWAY_URL is unset");
  return url;
}

// Client for the gateway wire protocol. Every reply is schema-checked before
// it is returned; protocol violations surface as ProtocolError and are never
// retried.
class HttpGateway final : public Gateway {
 public:
  explicit HttpGateway(HttpGatewayOptions options)
      : options_(std::move(options)), inflight_(options_.max_inflight < 1 ? 1 : options_.max_inflight) {
    if (options_.base_url.empty()) throw ArgumentError("gateway base URL is empty");
    while (!options_.base_url.empty() && options_.base_url.back() == '/') options_.base_url.pop_back();
    if (options_.attempts < 1) options_.attempts = 1;
  }

  const std::string& base_url() const noexcept { return options_.base_url; }

  ModelInfo model_info() override {
    std::lock_guard lock(info_mutex_);
    if (!info_) info_ = protocol::parse_model_info(call(protocol::kModelInfo, std::nullopt));
    return *info_;
  }

  Generation generate(const std::string& prompt, const GenParams& params) override {
    params.validate();
    return protocol::parse_generation(call(protocol::kGenerate, protocol::generate_request(prompt, params)));
  }

  LayerStates hidden_states(const std::string& prompt, const std::string& response,
                            const LayerSelection& layers) override {
    const auto info = model_info();
    const auto requested = layers.resolve(info.n_layers);
    auto states = protocol::parse_layer_states(
        call(protocol::kHiddenStates, protocol::hidden_states_request(prompt, response, layers)));
    check::hidden_states(states, requested, info.hidden_dim);
    return states;
  }

  CandidateProbs token_choice_prob(const std::string& prompt,
                                   const std::vector<std::string>& candidates) override {
    check::candidates(candidates);
    auto probs = protocol::parse_probs(
        call(protocol::kTokenChoiceProb, protocol::token_choice_prob_request(prompt, candidates)));
    check::probs(probs, candidates);
    return probs;
  }

  NliLabel nli(const std::string& premise, const std::string& hypothesis) override {
    check::non_empty(premise, "premise");
    check::non_empty(hypothesis, "hypothesis");
    return protocol::parse_nli(call(protocol::kNli, protocol::nli_request(premise, hypothesis)));
  }

  Grade grade(const std::string& question, const std::string& target,
              const std::string& predicted) override {
    check::non_empty(question, "question");
    check::non_empty(target, "target");
    check::non_empty(predicted, "predicted answer");
    return protocol::parse_grade_reply(
        call(protocol::kGrade, protocol::grade_request(question, target, predicted)));
  }

 private:
  // GET when body is empty, POST otherwise.
  nlohmann::json call(const char* path, const std::optional<nlohmann::json>& body) {
    struct Slot {
      std::counting_semaphore<>& s;
      explicit Slot(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
      ~Slot() { s.release(); }
    } slot(inflight_);

    httplib::Headers headers;
    if (options_.bearer_token) headers.emplace("Authorization", "Bearer " + *options_.bearer_token);

    auto delay = options_.backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
      httplib::Client client(options_.base_url);
      client.set_connection_timeout(options_.timeout);
      client.set_read_timeout(options_.timeout);
      client.set_write_timeout(options_.timeout);
      auto res = body ? client.Post(path, headers, body->dump(), "application/json")
                      : client.Get(path, headers);
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error&) {
          throw ProtocolError(std::string(path) + ": reply is not valid JSON");
        }
      } else if (res->status >= 400 && res->status < 500) {
        throw ArgumentError(std::string(path) + ": " + error_message(res->body, res->status));
      } else {
        last_error = error_message(res->body, res->status);
      }
      if (attempt < options_.attempts) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    throw TransportError(std::string(path) + " failed after " + std::to_string(options_.attempts) +
                         " attempts: " + last_error);
  }

  static std::string error_message(const std::string& body, int status) {
    try {
      auto j = nlohmann::json::parse(body);
      if (j.is_object() && j.contains("error") && j["error"].is_string())
        return "HTTP " + std::to_string(status) + ": " + j["error"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    return "HTTP " + std::to_string(status);
  }

  HttpGatewayOptions options_;
  std::counting_semaphore<> inflight_;
  std::mutex info_mutex_;
  std::optional<ModelInfo> info_;
};

}  // namespace sce
