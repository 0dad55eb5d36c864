#pragma once

// Semantic equivalence by mutual NLI entailment, clustering of responses, and
// the split of wrong answers into self-consistent and inconsistent errors.

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/core/types.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::consistency {

inline constexpr int kDefaultSamples = 15;

struct EquivalenceOptions {
  // Prefix both sides of every NLI query with the question text.
  bool question_context = true;
};

inline std::string with_context(std::string_view question, std::string_view answer,
                                const EquivalenceOptions& opt = {}) {
  if (!opt.question_context) return std::string(answer);
  std::string out(question);
  out += ' ';
  out += answer;
  return out;
}

// Directional NLI verdicts for one question, memoized per ordered pair.
class EntailmentOracle {
 public:
  EntailmentOracle(Gateway& gw, std::string question, EquivalenceOptions opt = {})
      : gw_(gw), question_(std::move(question)), opt_(opt) {}

  bool entails(const std::string& premise, const std::string& hypothesis) {
    const auto key = std::make_pair(premise, hypothesis);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    const bool ok = gw_.nli(with_context(question_, premise, opt_), with_context(question_, hypothesis, opt_)) ==
                    NliLabel::entailment;
    ++calls_;
    memo_.emplace(key, ok);
    return ok;
  }

  // Identical strings are equivalent without consulting NLI.
  bool equivalent(const std::string& a, const std::string& b) {
    if (a == b) return true;
    return entails(a, b) && entails(b, a);
  }

  int nli_calls() const noexcept { return calls_; }

 private:
  Gateway& gw_;
  std::string question_;
  EquivalenceOptions opt_;
  std::map<std::pair<std::string, std::string>, bool> memo_;
  int calls_ = 0;
};

inline bool mutual_entailment(const std::string& question, const std::string& a, const std::string& b,
                              Gateway& gw, const EquivalenceOptions& opt = {}) {
  if (a.empty() || b.empty()) throw ArgumentError("mutual_entailment: responses must be non-empty");
  EntailmentOracle oracle(gw, question, opt);
  return oracle.equivalent(a, b);
}

struct ClusterAssignment {
  std::vector<std::vector<int>> clusters;  // response indices; first member is the representative

  std::size_t size() const noexcept { return clusters.size(); }
  int representative(std::size_t c) const { return clusters.at(c).front(); }
  std::vector<int> sizes() const {
    std::vector<int> out;
    for (const auto& c : clusters) out.push_back(static_cast<int>(c.size()));
    return out;
  }
};

// In input order, each response joins the first cluster whose representative
// it mutually entails, otherwise it opens a new cluster.
inline ClusterAssignment cluster_by_entailment(const std::vector<std::string>& responses,
                                               EntailmentOracle& oracle) {
  if (responses.empty()) throw ArgumentError("cluster_by_entailment: no responses");
  ClusterAssignment out;
  for (int i = 0; i < static_cast<int>(responses.size()); ++i) {
    bool placed = false;
    for (auto& cluster : out.clusters) {
      if (oracle.equivalent(responses[static_cast<std::size_t>(cluster.front())],
                            responses[static_cast<std::size_t>(i)])) {
        cluster.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) out.clusters.push_back({i});
  }
  return out;
}

inline ClusterAssignment cluster_by_entailment(const std::string& question,
                                               const std::vector<std::string>& responses, Gateway& gw,
                                               const EquivalenceOptions& opt = {}) {
  EntailmentOracle oracle(gw, question, opt);
  return cluster_by_entailment(responses, oracle);
}

// Length of the longest prefix of `samples` that, together with `greedy`, is
// pairwise equivalent. Pairs are tested in growing-prefix order and testing
// stops at the first failure.
inline int consistent_prefix(const std::string& greedy, const std::vector<std::string>& samples,
                             EntailmentOracle& oracle) {
  std::vector<const std::string*> seen{&greedy};
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (const auto* other : seen)
      if (!oracle.equivalent(*other, samples[k])) return static_cast<int>(k);
    seen.push_back(&samples[k]);
  }
  return static_cast<int>(samples.size());
}

struct ClassifyOptions {
  int k = kDefaultSamples;
  EquivalenceOptions equivalence;
};

// A wrong greedy answer is self-consistent when it and all k samples are
// pairwise mutually entailing. Correct answers are not errors and trigger no
// NLI calls.
inline ErrorClassRecord classify_error(std::string question_id, const std::string& question,
                                       const std::string& greedy, const std::vector<std::string>& samples,
                                       int z, Gateway& gw, const ClassifyOptions& opt = {}) {
  if (z != 0 && z != 1) throw ArgumentError("classify_error: z must be 0 or 1");
  if (static_cast<int>(samples.size()) != opt.k)
    throw ArgumentError("classify_error: expected " + std::to_string(opt.k) + " samples, got " +
                        std::to_string(samples.size()));
  ErrorClassRecord rec;
  rec.question_id = std::move(question_id);
  rec.k_used = opt.k;
  if (z == 1) {
    rec.error_class = ErrorClass::not_error;
    rec.cluster_count = 1;
    return rec;
  }
  if (greedy.empty()) throw ArgumentError("classify_error: empty greedy response");
  for (const auto& s : samples)
    if (s.empty()) throw ArgumentError("classify_error: empty sample");
  EntailmentOracle oracle(gw, question, opt.equivalence);
  const bool all_equivalent = consistent_prefix(greedy, samples, oracle) == opt.k;
  std::vector<std::string> all{greedy};
  all.insert(all.end(), samples.begin(), samples.end());
  rec.cluster_count = static_cast<int>(cluster_by_entailment(all, oracle).size());
  rec.error_class = all_equivalent ? ErrorClass::self_consistent : ErrorClass::inconsistent;
  return rec;
}

// result[k-1] is 1 iff greedy plus the first k samples are pairwise
// equivalent, for k = 1..|samples|. Non-increasing by construction.
inline std::vector<int> frequency_by_k(const std::string& question, const std::string& greedy,
                                       const std::vector<std::string>& samples, int z, Gateway& gw,
                                       const EquivalenceOptions& opt = {}) {
  if (z != 0) throw ArgumentError("frequency_by_k: only defined for errors (z = 0)");
  EntailmentOracle oracle(gw, question, opt);
  const int prefix = consistent_prefix(greedy, samples, oracle);
  std::vector<int> out(samples.size(), 0);
  for (int k = 1; k <= static_cast<int>(samples.size()); ++k) out[static_cast<std::size_t>(k - 1)] = k <= prefix;
  return out;
}

}  // namespace sce::consistency
