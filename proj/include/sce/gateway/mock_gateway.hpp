#pragma once

// Deterministic scripted gateway. Scripted replies are looked up by exact
// request; anything unscripted falls back to a fixed policy derived from a
// hash of the request, so the mock never needs a network and never varies.
//
// Script file layout (JSON):
//   {
//     "model_info": {"name": "mock", "n_layers": 4, "hidden_dim": 8},
//     "generate": [{"prompt": str, "mode": "greedy"|"sample", "seed": int?,
//                   "text": str, "token_logprobs": [num]}],
//     "default_generation": {"text": str, "token_logprobs": [num]},      (optional)
//     "hidden_states": [{"prompt": str, "response": str, "layers": {"<idx>": [num]}}],
//     "token_choice_prob": [{"prompt": str, "probs": {"<cand>": num}}],
//     "nli": [{"premise": str, "hypothesis": str, "label": str}],
//     "nli_classes": {"<text>": "<class>"},   entailment iff both texts share a class
//     "nli_default": "neutral",
//     "grade": [{"question": str, "target": str, "predicted": str, "grade": "A"|"B"|"C"}],
//     "grade_default": "C"
//   }
// A "sample" entry without a seed matches any seed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <utility>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/records.hpp"
#include "sce/core/rng.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/protocol.hpp"

namespace sce {

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct MockScript {
  ModelInfo info{"mock", 4, 8};

  std::map<std::string, Generation> greedy;                                // prompt
  std::map<std::pair<std::string, std::int64_t>, Generation> sampled;      // (prompt, seed)
  std::map<std::string, Generation> sampled_any_seed;                      // prompt
  std::optional<Generation> default_generation;

  std::map<std::pair<std::string, std::string>, LayerStates> hidden;       // (prompt, response)
  std::map<std::string, CandidateProbs> choice_probs;                      // prompt

  std::map<std::pair<std::string, std::string>, NliLabel> nli;             // (premise, hypothesis)
  std::map<std::string, std::string> nli_classes;
  NliLabel nli_default = NliLabel::neutral;

  std::map<std::tuple<std::string, std::string, std::string>, Grade> grades;
  Grade grade_default = Grade::C;

  static MockScript from_json(const nlohmann::json& j);
  static MockScript load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
};

inline MockScript MockScript::from_json(const nlohmann::json& j) {
  MockScript s;
  auto gen = [](const nlohmann::json& e) {
    return Generation{e.at("text").get<std::string>(), e.at("token_logprobs").get<std::vector<double>>()};
  };
  try {
    if (j.contains("model_info")) {
      const auto& m = j.at("model_info");
      s.info = {m.at("name").get<std::string>(), m.at("n_layers").get<int>(), m.at("hidden_dim").get<int>()};
    }
    for (const auto& e : j.value("generate", nlohmann::json::array())) {
      const auto prompt = e.at("prompt").get<std::string>();
      const auto mode = e.value("mode", std::string("greedy"));
      if (mode == "greedy")
        s.greedy[prompt] = gen(e);
      else if (mode != "sample")
        throw ParseError("generate entry has unknown mode '" + mode + "'");
      else if (e.contains("seed"))
        s.sampled[{prompt, e.at("seed").get<std::int64_t>()}] = gen(e);
      else
        s.sampled_any_seed[prompt] = gen(e);
    }
    if (j.contains("default_generation")) s.default_generation = gen(j.at("default_generation"));
    for (const auto& e : j.value("hidden_states", nlohmann::json::array()))
      s.hidden[{e.at("prompt").get<std::string>(), e.at("response").get<std::string>()}] =
          protocol::parse_layer_states(e);
    for (const auto& e : j.value("token_choice_prob", nlohmann::json::array()))
      s.choice_probs[e.at("prompt").get<std::string>()] = e.at("probs").get<CandidateProbs>();
    auto label = [](const std::string& name) {
      auto l = parse_nli_label(name);
      if (!l) throw ParseError("unknown NLI label '" + name + "'");
      return *l;
    };
    for (const auto& e : j.value("nli", nlohmann::json::array()))
      s.nli[{e.at("premise").get<std::string>(), e.at("hypothesis").get<std::string>()}] =
          label(e.at("label").get<std::string>());
    if (j.contains("nli_classes"))
      s.nli_classes = j.at("nli_classes").get<std::map<std::string, std::string>>();
    if (j.contains("nli_default")) s.nli_default = label(j.at("nli_default").get<std::string>());
    auto grade = [](const std::string& letter) {
      auto g = parse_grade(letter);
      if (!g) throw ParseError("unknown grade '" + letter + "'");
      return *g;
    };
    for (const auto& e : j.value("grade", nlohmann::json::array()))
      s.grades[{e.at("question").get<std::string>(), e.at("target").get<std::string>(),
                e.at("predicted").get<std::string>()}] = grade(e.at("grade").get<std::string>());
    if (j.contains("grade_default")) s.grade_default = grade(j.at("grade_default").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mock script: ") + e.what());
  }
  return s;
}

class MockGateway final : public Gateway {
 public:
  explicit MockGateway(MockScript script) : script_(std::move(script)) {}

  MockScript& script() { return script_; }

  // Number of calls per operation name, and in total.
  std::map<std::string, int> calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }
  int calls(const std::string& op) const {
    std::lock_guard lock(mutex_);
    auto it = calls_.find(op);
    return it == calls_.end() ? 0 : it->second;
  }
  int total_calls() const {
    std::lock_guard lock(mutex_);
    int n = 0;
    for (const auto& [op, c] : calls_) n += c;
    return n;
  }
  void reset_calls() {
    std::lock_guard lock(mutex_);
    calls_.clear();
  }

  ModelInfo model_info() override {
    record("model_info");
    check::model_info(script_.info);
    return script_.info;
  }

  Generation generate(const std::string& prompt, const GenParams& params) override {
    params.validate();
    record("generate");
    Generation g = lookup_generation(prompt, params);
    check::generation(g);
    return g;
  }

  LayerStates hidden_states(const std::string& prompt, const std::string& response,
                            const LayerSelection& layers) override {
    record("hidden_states");
    const auto requested = layers.resolve(script_.info.n_layers);
    LayerStates out;
    auto it = script_.hidden.find({prompt, response});
    for (int l : requested) {
      if (it != script_.hidden.end()) {
        auto v = it->second.find(l);
        if (v != it->second.end()) {
          out[l] = v->second;
          continue;
        }
      }
      out[l] = synthetic_state(prompt, response, l);
    }
    check::hidden_states(out, requested, script_.info.hidden_dim);
    return out;
  }

  CandidateProbs token_choice_prob(const std::string& prompt,
                                   const std::vector<std::string>& candidates) override {
    check::candidates(candidates);
    record("token_choice_prob");
    CandidateProbs out;
    auto it = script_.choice_probs.find(prompt);
    for (const auto& c : candidates) {
      if (it != script_.choice_probs.end() && it->second.count(c))
        out[c] = it->second.at(c);
      else
        out[c] = 1.0 / static_cast<double>(candidates.size());
    }
    check::probs(out, candidates);
    return out;
  }

  NliLabel nli(const std::string& premise, const std::string& hypothesis) override {
    check::non_empty(premise, "premise");
    check::non_empty(hypothesis, "hypothesis");
    record("nli");
    if (auto it = script_.nli.find({premise, hypothesis}); it != script_.nli.end()) return it->second;
    auto a = script_.nli_classes.find(premise);
    auto b = script_.nli_classes.find(hypothesis);
    if (a != script_.nli_classes.end() && b != script_.nli_classes.end())
      return a->second == b->second ? NliLabel::entailment : NliLabel::contradiction;
    return script_.nli_default;
  }

  Grade grade(const std::string& question, const std::string& target,
              const std::string& predicted) override {
    check::non_empty(question, "question");
    check::non_empty(target, "target");
    check::non_empty(predicted, "predicted answer");
    record("grade");
    if (auto it = script_.grades.find({question, target, predicted}); it != script_.grades.end())
      return it->second;
    return script_.grade_default;
  }

 private:
  void record(const char* op) {
    std::lock_guard lock(mutex_);
    ++calls_[op];
  }

  Generation lookup_generation(const std::string& prompt, const GenParams& params) const {
    if (params.is_greedy()) {
      if (auto it = script_.greedy.find(prompt); it != script_.greedy.end()) return it->second;
    } else {
      if (auto it = script_.sampled.find({prompt, params.seed}); it != script_.sampled.end())
        return it->second;
      if (auto it = script_.sampled_any_seed.find(prompt); it != script_.sampled_any_seed.end())
        return it->second;
      // Unscripted samples repeat the scripted greedy answer.
      if (auto it = script_.greedy.find(prompt); it != script_.greedy.end()) return it->second;
    }
    if (script_.default_generation) return *script_.default_generation;
    std::uint64_t h = fnv1a64(prompt);
    if (!params.is_greedy()) h = fnv1a64(std::to_string(params.seed), h);
    static constexpr char hex[] = "0123456789abcdef";
    std::string text = "mock-";
    for (int i = 0; i < 8; ++i) text += hex[(h >> (4 * i)) & 0xF];
    return {text, {-0.25, -0.5}};
  }

  std::vector<float> synthetic_state(const std::string& prompt, const std::string& response,
                                     int layer) const {
    std::uint64_t h = fnv1a64(prompt);
    h = fnv1a64(std::string_view("\0", 1), h);
    h = fnv1a64(response, h);
    h = fnv1a64(std::to_string(layer), h);
    Rng rng(h);
    std::vector<float> v(static_cast<std::size_t>(script_.info.hidden_dim));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
  }

  MockScript script_;
  mutable std::mutex mutex_;
  std::map<std::string, int> calls_;
};

}  // namespace sce
