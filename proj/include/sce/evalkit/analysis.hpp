#pragma once

// Error-frequency tables, the consistency-vs-k curve, and the overlap of a
// verifier's self-consistent errors with those of the response model.

#include <map>
#include <string>
#include <vector>

#include "sce/consistency/consistency.hpp"
#include "sce/consistency/sampling.hpp"
#include "sce/core/error.hpp"
#include "sce/core/parallel.hpp"
#include "sce/core/types.hpp"
#include "sce/evalkit/csv.hpp"
#include "sce/evalkit/labeling.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::evalkit {

struct FrequencyRow {
  std::string model;
  int n_self_consistent = 0;
  int n_inconsistent = 0;
  bool operator==(const FrequencyRow&) const = default;
};

// One row per model, ordered by model name.
inline std::vector<FrequencyRow> frequency_report(const std::map<std::string, std::vector<ErrorClassRecord>>& by_model) {
  std::vector<FrequencyRow> out;
  for (const auto& [model, records] : by_model) {
    FrequencyRow row{model};
    for (const auto& r : records) {
      if (r.error_class == ErrorClass::self_consistent) ++row.n_self_consistent;
      if (r.error_class == ErrorClass::inconsistent) ++row.n_inconsistent;
    }
    out.push_back(row);
  }
  return out;
}

inline CsvTable frequency_table(const std::vector<FrequencyRow>& rows) {
  CsvTable t({"model", "n_self_consistent", "n_inconsistent"});
  for (const auto& r : rows) t.add({r.model, std::to_string(r.n_self_consistent), std::to_string(r.n_inconsistent)});
  return t;
}

struct KCurvePoint {
  int k = 0;
  int n_self_consistent = 0;
  int n_errors = 0;
  double fraction() const { return n_errors ? static_cast<double>(n_self_consistent) / n_errors : 0.0; }
  bool operator==(const KCurvePoint&) const = default;
};

// Sums per-error frequency_by_k vectors into counts per k.
inline std::vector<KCurvePoint> k_curve(const std::vector<std::vector<int>>& per_error) {
  std::vector<KCurvePoint> out;
  if (per_error.empty()) return out;
  const auto k_max = per_error.front().size();
  for (const auto& v : per_error)
    if (v.size() != k_max) throw ArgumentError("k curves of different lengths");
  for (std::size_t k = 0; k < k_max; ++k) {
    KCurvePoint p{static_cast<int>(k + 1), 0, static_cast<int>(per_error.size())};
    for (const auto& v : per_error) p.n_self_consistent += v[k];
    out.push_back(p);
  }
  return out;
}

inline CsvTable k_curve_table(const std::string& model, const std::vector<KCurvePoint>& curve) {
  CsvTable t({"model", "k", "n_self_consistent", "n_errors", "fraction"});
  for (const auto& p : curve)
    t.add({model, std::to_string(p.k), std::to_string(p.n_self_consistent), std::to_string(p.n_errors),
           format_number(p.fraction())});
  return t;
}

struct OverlapItem {
  QuestionRecord question;
  std::string prompt;
  std::string response_m;  // the response model's self-consistent error
};

struct OverlapReport {
  std::string verifier_name;
  int total_ce = 0;
  int overlapping = 0;
  double percent = 0.0;
  std::vector<std::string> overlapping_ids;
  std::vector<ItemFailure> failures;
};

struct OverlapOptions {
  consistency::SamplingPlan plan;
  consistency::EquivalenceOptions equivalence;
  int workers = 1;
};

// For each self-consistent error of M, the verifier answers the same prompt
// (greedy plus k samples); the question counts when the verifier's answer is
// graded wrong, is itself a self-consistent error, and is equivalent to M's.
// `judge` serves grading and NLI.
inline OverlapReport overlap_analysis(const std::vector<OverlapItem>& items, Gateway& verifier, Gateway& judge,
                                      const OverlapOptions& opt = {}) {
  opt.plan.validate();
  std::vector<int> hit(items.size(), 0);
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), opt.workers, [&](std::size_t i) {
    try {
      const auto& it = items[i];
      const auto responses = consistency::draw_responses(verifier, it.prompt, opt.plan);
      const auto grade = judge.grade(it.question.question, gold_target(it.question.reference_answers),
                                     responses.greedy.text);
      if (grade != Grade::B) return;
      consistency::ClassifyOptions copt{opt.plan.k, opt.equivalence};
      const auto cls = consistency::classify_error(it.question.id, it.question.question, responses.greedy.text,
                                                   responses.sample_texts(), 0, judge, copt);
      if (cls.error_class != ErrorClass::self_consistent) return;
      consistency::EntailmentOracle oracle(judge, it.question.question, opt.equivalence);
      hit[i] = oracle.equivalent(responses.greedy.text, it.response_m) ? 1 : 0;
    } catch (const Error& e) {
      errors[i] = e.what();
      hit[i] = -1;
    }
  });
  OverlapReport out;
  out.verifier_name = verifier.model_info().name;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (hit[i] < 0) {
      out.failures.push_back({items[i].question.id, errors[i]});
      continue;
    }
    ++out.total_ce;
    if (hit[i] == 1) {
      ++out.overlapping;
      out.overlapping_ids.push_back(items[i].question.id);
    }
  }
  out.percent = out.total_ce ? 100.0 * out.overlapping / out.total_ce : 0.0;
  return out;
}

inline CsvTable overlap_table(const OverlapReport& r) {
  CsvTable t({"verifier", "total_ce", "overlapping", "percent"});
  t.add({r.verifier_name, std::to_string(r.total_ce), std::to_string(r.overlapping), format_number(r.percent)});
  return t;
}

}  // namespace sce::evalkit
