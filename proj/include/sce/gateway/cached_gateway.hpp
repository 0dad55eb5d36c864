#pragma once

// Disk cache in front of any gateway. Entries live at
// `<cache_dir>/<operation>/<sha256>.json`, keyed by the hash of
// "<operation>\n<canonical request>" where the canonical request is the wire
// body with sorted keys and no whitespace. Each entry stores the request next
// to the reply; an entry that fails to parse or whose request does not match
// is treated as a miss and rewritten.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "sce/core/digest.hpp"
#include "sce/core/records.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/protocol.hpp"

namespace sce {

class CachedGateway final : public Gateway {
 public:
  CachedGateway(Gateway& inner, std::filesystem::path cache_dir)
      : inner_(inner), dir_(std::move(cache_dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& directory() const noexcept { return dir_; }

  ModelInfo model_info() override {
    return through("model_info", nlohmann::json::object(), protocol::parse_model_info,
                   [&] { return protocol::encode_model_info(inner_.model_info()); });
  }

  Generation generate(const std::string& prompt, const GenParams& params) override {
    return through("generate", protocol::generate_request(prompt, params), protocol::parse_generation,
                   [&] { return protocol::encode_generation(inner_.generate(prompt, params)); });
  }

  LayerStates hidden_states(const std::string& prompt, const std::string& response,
                            const LayerSelection& layers) override {
    return through("hidden_states", protocol::hidden_states_request(prompt, response, layers),
                   protocol::parse_layer_states, [&] {
                     return protocol::encode_layer_states(inner_.hidden_states(prompt, response, layers));
                   });
  }

  CandidateProbs token_choice_prob(const std::string& prompt,
                                   const std::vector<std::string>& candidates) override {
    auto decode = [&](const nlohmann::json& j) {
      auto probs = protocol::parse_probs(j);
      check::probs(probs, candidates);
      return probs;
    };
    return through("token_choice_prob", protocol::token_choice_prob_request(prompt, candidates), decode,
                   [&] { return protocol::encode_probs(inner_.token_choice_prob(prompt, candidates)); });
  }

  NliLabel nli(const std::string& premise, const std::string& hypothesis) override {
    return through("nli", protocol::nli_request(premise, hypothesis), protocol::parse_nli,
                   [&] { return protocol::encode_nli(inner_.nli(premise, hypothesis)); });
  }

  Grade grade(const std::string& question, const std::string& target,
              const std::string& predicted) override {
    return through("grade", protocol::grade_request(question, target, predicted),
                   protocol::parse_grade_reply,
                   [&] { return protocol::encode_grade(inner_.grade(question, target, predicted)); });
  }

  static std::string cache_key(const std::string& op, const nlohmann::json& request) {
    return sha256_hex(op + "\n" + request.dump());
  }

 private:
  // A stored reply that no longer decodes counts as corruption: the live
  // call is made and the entry rewritten.
  template <class Decode, class Live>
  auto through(const std::string& op, const nlohmann::json& request, Decode decode, Live live)
      -> decltype(decode(std::declval<const nlohmann::json&>())) {
    const auto canonical = request.dump();  // nlohmann::json keeps keys sorted
    const auto key = cache_key(op, request);
    const auto path = dir_ / op / (key + ".json");
    std::lock_guard lock(stripe(key));
    if (auto hit = read_entry(path, canonical)) {
      try {
        return decode(*hit);
      } catch (const Error&) {
      }
    }
    nlohmann::json reply = live();
    auto value = decode(reply);
    nlohmann::json entry{{"operation", op}, {"request", canonical}, {"reply", reply}};
    write_file_atomic(path, entry.dump() + "\n");
    return value;
  }

  static std::optional<nlohmann::json> read_entry(const std::filesystem::path& path,
                                                  const std::string& canonical) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
      auto entry = nlohmann::json::parse(read_file(path));
      if (!entry.is_object() || entry.value("request", std::string()) != canonical ||
          !entry.contains("reply"))
        return std::nullopt;
      return entry.at("reply");
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  std::mutex& stripe(const std::string& key) {
    return stripes_[std::hash<std::string>{}(key) % stripes_.size()];
  }

  Gateway& inner_;
  std::filesystem::path dir_;
  std::array<std::mutex, 64> stripes_;
};

}  // namespace sce
