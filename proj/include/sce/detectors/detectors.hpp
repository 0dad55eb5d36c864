#pragma once

// Training-free error detectors. Every score is oriented so that a higher
// value means the response is more likely correct.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sce/consistency/consistency.hpp"
#include "sce/core/error.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/prompts.hpp"

namespace sce::detectors {

inline constexpr const char* kProbability = "probability";
inline constexpr const char* kPTrue = "p_true";
inline constexpr const char* kSemanticEntropy = "semantic_entropy";

struct DetectorConfig {
  int se_samples = 10;
  double se_temperature = 0.5;
  std::int64_t se_seed_base = 1000;  // sample j uses seed se_seed_base + j
  int max_tokens = 64;

  void validate() const {
    if (se_samples < 2) throw ArgumentError("se_samples must be >= 2");
    if (!(se_temperature > 0.0)) throw ArgumentError("se_temperature must be > 0");
    if (max_tokens <= 0) throw ArgumentError("max_tokens must be positive");
  }
};

// Mean token log-probability of the response.
inline double avg_logprob(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw ArgumentError("avg_logprob: no tokens");
  for (double lp : token_logprobs)
    if (!std::isfinite(lp) || lp > 0.0) throw ArgumentError("avg_logprob: log-probabilities must be <= 0");
  return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0) /
         static_cast<double>(token_logprobs.size());
}

// Probability the model assigns to "A" (= True) when asked to judge its own answer.
inline double p_true(const std::string& question, const std::string& response, Gateway& gw) {
  if (question.empty() || response.empty()) throw ArgumentError("p_true: inputs must be non-empty");
  const auto probs = gw.token_choice_prob(prompts::p_true(question, response), {"A", "B"});
  return probs.at("A");
}

// -sum_c p_c ln p_c over cluster proportions p_c = n_c / n.
inline double discrete_entropy(std::span<const int> cluster_sizes) {
  if (cluster_sizes.empty()) throw ArgumentError("discrete_entropy: no clusters");
  double n = 0.0;
  for (int c : cluster_sizes) {
    if (c <= 0) throw ArgumentError("discrete_entropy: cluster sizes must be positive");
    n += c;
  }
  double h = 0.0;
  for (int c : cluster_sizes) {
    const double p = c / n;
    h -= p * std::log(p);
  }
  return h + 0.0;  // no negative zero
}

struct SemanticEntropyResult {
  double entropy = 0.0;
  double score = 0.0;  // -entropy
  std::vector<std::string> samples;
  consistency::ClusterAssignment clusters;
};

// Draws cfg.se_samples responses to `prompt` from `model`, clusters them with
// NLI from `nli` and returns the entropy of the cluster-size distribution.
inline SemanticEntropyResult semantic_entropy(const std::string& question, const std::string& prompt,
                                              Gateway& model, Gateway& nli, const DetectorConfig& cfg,
                                              const consistency::EquivalenceOptions& eq = {}) {
  cfg.validate();
  SemanticEntropyResult out;
  for (int j = 1; j <= cfg.se_samples; ++j) {
    GenParams p;
    p.temperature = cfg.se_temperature;
    p.top_p = 1.0;
    p.top_k = -1;
    p.max_tokens = cfg.max_tokens;
    p.seed = cfg.se_seed_base + j;
    auto g = model.generate(prompt, p);
    if (g.text.empty()) throw ProtocolError("semantic_entropy: empty sample");
    out.samples.push_back(std::move(g.text));
  }
  out.clusters = consistency::cluster_by_entailment(question, out.samples, nli, eq);
  const auto sizes = out.clusters.sizes();
  out.entropy = discrete_entropy(sizes);
  out.score = 0.0 - out.entropy;
  return out;
}

}  // namespace sce::detectors
