#pragma once

// JSON bodies of the gateway wire protocol. Requests are built here for the
// HTTP client and for cache keys; replies are decoded here for the client and
// for cache hits, and encoded here for the reference server.
//
//   GET  /v1/model_info        -> {"name", "n_layers", "hidden_dim"}
//   POST /v1/generate          {"prompt","temperature","top_p","top_k","max_tokens","seed"}
//                              -> {"text", "token_logprobs": [num]}
//   POST /v1/hidden_states     {"prompt","response","layers": "all"|[int],"position":"last"}
//                              -> {"layers": {"<idx>": [num]}}
//   POST /v1/token_choice_prob {"prompt","candidates": [str]} -> {"probs": {"<cand>": num}}
//   POST /v1/nli               {"premise","hypothesis"} -> {"label"}
//   POST /v1/grade             {"question","target","predicted"} -> {"grade": "A"|"B"|"C"}

#include <charconv>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/types.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::protocol {

using json = nlohmann::json;

inline constexpr const char* kModelInfo = "/v1/model_info";
inline constexpr const char* kGenerate = "/v1/generate";
inline constexpr const char* kHiddenStates = "/v1/hidden_states";
inline constexpr const char* kTokenChoiceProb = "/v1/token_choice_prob";
inline constexpr const char* kNli = "/v1/nli";
inline constexpr const char* kGrade = "/v1/grade";

// ---- requests ---------------------------------------------------------------

inline json generate_request(const std::string& prompt, const GenParams& p) {
  return {{"prompt", prompt},   {"temperature", p.temperature}, {"top_p", p.top_p},
          {"top_k", p.top_k},   {"max_tokens", p.max_tokens},   {"seed", p.seed}};
}

inline json hidden_states_request(const std::string& prompt, const std::string& response,
                                  const LayerSelection& layers) {
  json j{{"prompt", prompt}, {"response", response}, {"position", "last"}};
  if (layers.is_all())
    j["layers"] = "all";
  else
    j["layers"] = layers.layers();
  return j;
}

inline json token_choice_prob_request(const std::string& prompt,
                                      const std::vector<std::string>& candidates) {
  return {{"prompt", prompt}, {"candidates", candidates}};
}

inline json nli_request(const std::string& premise, const std::string& hypothesis) {
  return {{"premise", premise}, {"hypothesis", hypothesis}};
}

inline json grade_request(const std::string& question, const std::string& target,
                          const std::string& predicted) {
  return {{"question", question}, {"target", target}, {"predicted", predicted}};
}

// Server-side request decoding. Malformed requests are argument errors (4xx).

namespace detail {
template <class T>
T req(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw ArgumentError(std::string("request is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ArgumentError(std::string("request field '") + key + "' has the wrong type");
  }
}

template <class T>
T rep(const json& j, const char* key, const char* op) {
  if (!j.is_object() || !j.contains(key))
    throw ProtocolError(std::string(op) + ": reply is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(std::string(op) + ": reply field '" + key + "' has the wrong type");
  }
}
}  // namespace detail

inline GenParams parse_generate_params(const json& j) {
  GenParams p;
  p.temperature = detail::req<double>(j, "temperature");
  p.top_p = detail::req<double>(j, "top_p");
  p.top_k = detail::req<int>(j, "top_k");
  p.max_tokens = detail::req<int>(j, "max_tokens");
  p.seed = detail::req<std::int64_t>(j, "seed");
  p.validate();
  return p;
}

inline LayerSelection parse_layer_selection(const json& j) {
  if (!j.is_object() || !j.contains("layers")) throw ArgumentError("request is missing 'layers'");
  if (j.contains("position") && j.at("position") != "last")
    throw ArgumentError("only position \"last\" is supported");
  const auto& l = j.at("layers");
  if (l.is_string()) {
    if (l.get<std::string>() != "all") throw ArgumentError("layers must be \"all\" or a list");
    return LayerSelection::all();
  }
  if (!l.is_array()) throw ArgumentError("layers must be \"all\" or a list");
  std::vector<int> layers;
  for (const auto& v : l) {
    if (!v.is_number_integer()) throw ArgumentError("layer indices must be integers");
    layers.push_back(v.get<int>());
  }
  return LayerSelection::of(std::move(layers));
}

// ---- replies ----------------------------------------------------------------

inline json encode_model_info(const ModelInfo& m) {
  return {{"name", m.name}, {"n_layers", m.n_layers}, {"hidden_dim", m.hidden_dim}};
}

inline ModelInfo parse_model_info(const json& j) {
  ModelInfo m;
  m.name = detail::rep<std::string>(j, "name", "model_info");
  m.n_layers = detail::rep<int>(j, "n_layers", "model_info");
  m.hidden_dim = detail::rep<int>(j, "hidden_dim", "model_info");
  check::model_info(m);
  return m;
}

inline json encode_generation(const Generation& g) {
  return {{"text", g.text}, {"token_logprobs", g.token_logprobs}};
}

inline Generation parse_generation(const json& j) {
  Generation g;
  g.text = detail::rep<std::string>(j, "text", "generate");
  g.token_logprobs = detail::rep<std::vector<double>>(j, "token_logprobs", "generate");
  check::generation(g);
  return g;
}

inline json encode_layer_states(const LayerStates& states) {
  json layers = json::object();
  for (const auto& [idx, vec] : states) layers[std::to_string(idx)] = vec;
  return {{"layers", layers}};
}

inline LayerStates parse_layer_states(const json& j) {
  const auto layers = detail::rep<json>(j, "layers", "hidden_states");
  if (!layers.is_object()) throw ProtocolError("hidden_states: 'layers' must be an object");
  LayerStates out;
  for (const auto& [key, value] : layers.items()) {
    int idx = 0;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
    if (ec != std::errc() || ptr != key.data() + key.size())
      throw ProtocolError("hidden_states: layer key '" + key + "' is not an integer");
    try {
      out[idx] = value.get<std::vector<float>>();
    } catch (const json::exception&) {
      throw ProtocolError("hidden_states: layer '" + key + "' is not a numeric array");
    }
  }
  return out;
}

inline json encode_probs(const CandidateProbs& probs) { return {{"probs", probs}}; }

inline CandidateProbs parse_probs(const json& j) {
  return detail::rep<CandidateProbs>(j, "probs", "token_choice_prob");
}

inline json encode_nli(NliLabel l) { return {{"label", std::string(to_string(l))}}; }

inline NliLabel parse_nli(const json& j) {
  const auto s = detail::rep<std::string>(j, "label", "nli");
  const auto l = parse_nli_label(s);
  if (!l) throw ProtocolError("nli: unknown label '" + s + "'");
  return *l;
}

inline json encode_grade(Grade g) { return {{"grade", std::string(1, grade_letter(g))}}; }

inline Grade parse_grade_reply(const json& j) {
  const auto s = detail::rep<std::string>(j, "grade", "grade");
  const auto g = parse_grade(s);
  if (!g) throw ProtocolError("grade: reply '" + s + "' is not one of A, B, C");
  return *g;
}

}  // namespace sce::protocol
