#pragma once

// Correctness labels from the grading endpoint. Grade C (not attempted)
// keeps its record but carries no z and never reaches a downstream set.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/parallel.hpp"
#include "sce/core/types.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::evalkit {

// Reference answers as a JSON-style list: ["a", "b"].
inline std::string gold_target(const std::vector<std::string>& reference_answers) {
  if (reference_answers.empty()) throw ArgumentError("gold target needs at least one reference answer");
  std::string out = "[";
  for (std::size_t i = 0; i < reference_answers.size(); ++i) {
    if (i) out += ", ";
    out += nlohmann::json(reference_answers[i]).dump();
  }
  out += "]";
  return out;
}

struct LabelItem {
  QuestionRecord question;
  std::string greedy;
};

struct ItemFailure {
  std::string question_id;
  std::string message;
  bool operator==(const ItemFailure&) const = default;
};

struct LabelOutcome {
  std::vector<CorrectnessRecord> records;  // input order, failed items omitted
  std::vector<ItemFailure> failures;
  int not_attempted = 0;
  std::vector<std::string> warnings;

  // Question ids with a usable label (grade A or B).
  std::vector<std::string> labeled_ids() const {
    std::vector<std::string> out;
    for (const auto& r : records)
      if (r.z()) out.push_back(r.question_id);
    return out;
  }
};

inline LabelOutcome label_dataset(const std::vector<LabelItem>& items, Gateway& grader, int workers = 1) {
  std::vector<std::optional<Grade>> grades(items.size());
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    try {
      const auto& q = items[i].question;
      if (items[i].greedy.empty()) throw ArgumentError("empty greedy response");
      grades[i] = grader.grade(q.question, gold_target(q.reference_answers), items[i].greedy);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  LabelOutcome out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!grades[i]) {
      out.failures.push_back({items[i].question.id, errors[i]});
      continue;
    }
    out.records.push_back({items[i].question.id, *grades[i]});
    if (*grades[i] == Grade::C) ++out.not_attempted;
  }
  if (!out.failures.empty())
    out.warnings.push_back(std::to_string(out.failures.size()) + " item(s) failed to grade and were skipped");
  if (out.not_attempted > 0)
    out.warnings.push_back(std::to_string(out.not_attempted) + " item(s) graded NOT_ATTEMPTED were filtered");
  if (out.labeled_ids().empty()) out.warnings.push_back("no labeled items remain after filtering");
  return out;
}

}  // namespace sce::evalkit
