#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/core/types.hpp"
#include "sce/evalkit/auroc.hpp"
#include "sce/evalkit/csv.hpp"
#include "sce/evalkit/subsets.hpp"

namespace sce::evalkit {

namespace detail {

using ScoreTable = std::map<std::string, std::map<std::string, double>>;  // detector -> id -> score

inline ScoreTable index_scores(const std::vector<DetectionScore>& scores) {
  ScoreTable out;
  for (const auto& s : scores) {
    s.validate();
    if (!out[s.detector].emplace(s.question_id, s.score).second)
      throw ArgumentError("duplicate score for '" + s.question_id + "' from detector " + s.detector);
  }
  return out;
}

}  // namespace detail

// AUROC of every detector on the test split of both subsets, scored with
// `ce_scores` on CE and `ie_scores` on IE (trained detectors differ per
// subset). Both rows of a detector carry delta = auroc(IE) - auroc(CE).
// Detectors appear in name order, CE before IE.
inline std::vector<EvalResult> evaluate(const std::vector<DetectionScore>& ce_scores,
                                        const std::vector<DetectionScore>& ie_scores, const SubsetPair& subsets) {
  const auto tables = std::map<Subset, detail::ScoreTable>{{Subset::CE, detail::index_scores(ce_scores)},
                                                           {Subset::IE, detail::index_scores(ie_scores)}};
  std::set<std::string> detectors;
  for (const auto& [subset, t] : tables)
    for (const auto& [name, _] : t) detectors.insert(name);
  std::vector<EvalResult> out;
  for (const auto& detector : detectors) {
    EvalResult rows[2];
    for (Subset subset : {Subset::CE, Subset::IE}) {
      const auto& all = tables.at(subset);
      auto t = all.find(detector);
      if (t == all.end())
        throw ArgumentError("detector " + detector + " has no scores for subset " + std::string(to_string(subset)));
      const auto view = split_view(subsets, subset, SplitPart::test);
      std::vector<double> s;
      for (const auto& id : view.ids) {
        auto it = t->second.find(id);
        if (it == t->second.end())
          throw ArgumentError("detector " + detector + " has no score for test item '" + id + "'");
        s.push_back(it->second);
      }
      auto& r = rows[subset == Subset::CE ? 0 : 1];
      r.detector = detector;
      r.subset = subset;
      r.auroc = auroc(s, view.z);
      for (int z : view.z) (z ? r.n_pos : r.n_neg) += 1;
    }
    const double d = delta_gap(rows[0].auroc, rows[1].auroc);
    for (auto& r : rows) {
      r.delta = d;
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<EvalResult> evaluate(const std::vector<DetectionScore>& scores, const SubsetPair& subsets) {
  return evaluate(scores, scores, subsets);
}

inline CsvTable eval_table(const std::vector<EvalResult>& results) {
  CsvTable t({"detector", "subset", "auroc", "n_pos", "n_neg", "delta"});
  for (const auto& r : results)
    t.add({r.detector, std::string(to_string(r.subset)), format_number(r.auroc), std::to_string(r.n_pos),
           std::to_string(r.n_neg), r.delta ? format_number(*r.delta) : std::string()});
  return t;
}

}  // namespace sce::evalkit
