#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/core/types.hpp"

namespace sce {

struct ModelInfo {
  std::string name;
  int n_layers = 0;
  int hidden_dim = 0;
  bool operator==(const ModelInfo&) const = default;
};

enum class NliLabel { entailment, neutral, contradiction };

inline std::string_view to_string(NliLabel l) {
  switch (l) {
    case NliLabel::entailment: return "entailment";
    case NliLabel::neutral: return "neutral";
    case NliLabel::contradiction: return "contradiction";
  }
  return "?";
}

inline std::optional<NliLabel> parse_nli_label(std::string_view s) {
  if (s == "entailment") return NliLabel::entailment;
  if (s == "neutral") return NliLabel::neutral;
  if (s == "contradiction") return NliLabel::contradiction;
  return std::nullopt;
}

struct Generation {
  std::string text;
  std::vector<double> token_logprobs;
  bool operator==(const Generation&) const = default;
};

// Either every layer of the served model or an explicit list.
class LayerSelection {
 public:
  static LayerSelection all() { return LayerSelection(std::nullopt); }
  static LayerSelection of(std::vector<int> layers) { return LayerSelection(std::move(layers)); }

  bool is_all() const noexcept { return !layers_; }
  const std::vector<int>& layers() const { return *layers_; }

  std::vector<int> resolve(int n_layers) const {
    if (!layers_) {
      std::vector<int> out(static_cast<std::size_t>(n_layers));
      for (int i = 0; i < n_layers; ++i) out[static_cast<std::size_t>(i)] = i;
      return out;
    }
    for (int l : *layers_)
      if (l < 0 || l >= n_layers)
        throw ArgumentError("layer " + std::to_string(l) + " outside 0.." +
                            std::to_string(n_layers - 1));
    return *layers_;
  }

 private:
  explicit LayerSelection(std::optional<std::vector<int>> layers) : layers_(std::move(layers)) {}
  std::optional<std::vector<int>> layers_;
};

using LayerStates = std::map<int, std::vector<float>>;
using CandidateProbs = std::map<std::string, double>;

// The single channel to a language model. Implementations: HttpGateway (wire
// protocol), MockGateway (scripted), CachedGateway (decorator). Hidden states
// are always taken at the last token of prompt + response.
//
// Implementations must be safe to call from several threads at once.
class Gateway {
 public:
  virtual ~Gateway() = default;

  virtual ModelInfo model_info() = 0;
  virtual Generation generate(const std::string& prompt, const GenParams& params) = 0;
  virtual LayerStates hidden_states(const std::string& prompt, const std::string& response,
                                    const LayerSelection& layers) = 0;
  virtual CandidateProbs token_choice_prob(const std::string& prompt,
                                           const std::vector<std::string>& candidates) = 0;
  virtual NliLabel nli(const std::string& premise, const std::string& hypothesis) = 0;
  virtual Grade grade(const std::string& question, const std::string& target,
                      const std::string& predicted) = 0;
};

// ---- argument checks (before any request) -------------------------------------

namespace check {

inline void non_empty(const std::string& value, const char* what) {
  if (value.empty()) throw ArgumentError(std::string(what) + " must be non-empty");
}

inline void candidates(const std::vector<std::string>& cands) {
  if (cands.empty()) throw ArgumentError("candidate list is empty");
  for (const auto& c : cands) non_empty(c, "candidate");
}

// ---- reply checks (everything that reaches a caller passes through these) ----

inline void model_info(const ModelInfo& info) {
  if (info.name.empty()) throw ProtocolError("model_info: empty model name");
  if (info.n_layers <= 0) throw ProtocolError("model_info: n_layers must be positive");
  if (info.hidden_dim <= 0) throw ProtocolError("model_info: hidden_dim must be positive");
}

inline void generation(const Generation& g) {
  for (double lp : g.token_logprobs) {
    if (!std::isfinite(lp)) throw ProtocolError("generate: non-finite token log-probability");
    if (lp > 0.0) throw ProtocolError("generate: token log-probability above 0");
  }
}

inline void hidden_states(const LayerStates& states, const std::vector<int>& requested,
                          std::optional<int> hidden_dim) {
  if (states.size() != requested.size())
    throw ProtocolError("hidden_states: reply layer count does not match the request");
  std::optional<std::size_t> dim;
  if (hidden_dim) dim = static_cast<std::size_t>(*hidden_dim);
  for (int l : requested) {
    auto it = states.find(l);
    if (it == states.end())
      throw ProtocolError("hidden_states: layer " + std::to_string(l) + " missing from reply");
    if (it->second.empty()) throw ProtocolError("hidden_states: empty vector");
    if (!dim) dim = it->second.size();
    if (it->second.size() != *dim)
      throw ProtocolError("hidden_states: vector length does not match hidden_dim");
    for (float v : it->second)
      if (!std::isfinite(v)) throw ProtocolError("hidden_states: non-finite activation");
  }
}

inline void probs(const CandidateProbs& probs, const std::vector<std::string>& requested) {
  for (const auto& c : requested) {
    auto it = probs.find(c);
    if (it == probs.end()) throw ProtocolError("token_choice_prob: missing candidate '" + c + "'");
    if (!(it->second >= 0.0 && it->second <= 1.0))
      throw ProtocolError("token_choice_prob: probability outside [0,1]");
  }
  const std::set<std::string> distinct(requested.begin(), requested.end());
  if (probs.size() != distinct.size())
    throw ProtocolError("token_choice_prob: reply contains unexpected candidates");
}

}  // namespace check

}  // namespace sce
