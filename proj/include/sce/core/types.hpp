#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sce/core/error.hpp"

namespace sce {

struct QuestionRecord {
  std::string id;
  std::string question;
  std::vector<std::string> reference_answers;

  void validate() const {
    if (id.empty()) throw ArgumentError("question id is empty");
    if (question.empty()) throw ArgumentError("question '" + id + "' has empty text");
    if (reference_answers.empty())
      throw ArgumentError("question '" + id + "' has no reference answers");
  }
  bool operator==(const QuestionRecord&) const = default;
};

// Decoding parameters. top_k = -1 disables top-k truncation; temperature 0
// means greedy decoding, which gateways must serve deterministically.
struct GenParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int top_k = -1;
  int max_tokens = 64;
  std::int64_t seed = 0;

  bool is_greedy() const noexcept { return temperature == 0.0; }

  void validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
      throw ArgumentError("temperature must be finite and >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ArgumentError("top_p must lie in (0, 1]");
    if (top_k < -1 || top_k == 0) throw ArgumentError("top_k must be -1 or positive");
    if (max_tokens <= 0) throw ArgumentError("max_tokens must be positive");
  }
  bool operator==(const GenParams&) const = default;
};

// Greedy response or the j-th stochastic sample (j >= 1).
class ResponseKind {
 public:
  static ResponseKind greedy() { return ResponseKind(0); }
  static ResponseKind sample(int index) {
    if (index < 1) throw ArgumentError("sample index must be >= 1");
    return ResponseKind(index);
  }
  bool is_greedy() const noexcept { return index_ == 0; }
  int sample_index() const noexcept { return index_; }
  bool operator==(const ResponseKind&) const = default;

 private:
  explicit ResponseKind(int index) : index_(index) {}
  int index_;
};

struct GenerationRecord {
  std::string question_id;
  ResponseKind kind = ResponseKind::greedy();
  std::string text;
  std::vector<double> token_logprobs;
  GenParams params;
  std::string model_name;

  void validate() const {
    if (question_id.empty()) throw ArgumentError("generation without question id");
    for (double lp : token_logprobs)
      if (!std::isfinite(lp) || lp > 0.0)
        throw ArgumentError("token log-probability must be finite and <= 0");
    if (kind.is_greedy() && !params.is_greedy())
      throw ArgumentError("greedy generation must use temperature 0");
    params.validate();
  }
  bool operator==(const GenerationRecord&) const = default;
};

enum class Grade { A, B, C };

inline char grade_letter(Grade g) { return g == Grade::A ? 'A' : g == Grade::B ? 'B' : 'C'; }

inline std::optional<Grade> parse_grade(std::string_view s) {
  if (s == "A") return Grade::A;
  if (s == "B") return Grade::B;
  if (s == "C") return Grade::C;
  return std::nullopt;
}

// z follows the grade: A -> 1, B -> 0, C (not attempted) -> absent.
struct CorrectnessRecord {
  std::string question_id;
  Grade grade = Grade::C;

  std::optional<int> z() const {
    switch (grade) {
      case Grade::A: return 1;
      case Grade::B: return 0;
      case Grade::C: return std::nullopt;
    }
    return std::nullopt;
  }
  bool operator==(const CorrectnessRecord&) const = default;
};

enum class ErrorClass { self_consistent, inconsistent, not_error };

inline std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::self_consistent: return "self_consistent";
    case ErrorClass::inconsistent: return "inconsistent";
    case ErrorClass::not_error: return "not_error";
  }
  return "?";
}

inline std::optional<ErrorClass> parse_error_class(std::string_view s) {
  if (s == "self_consistent") return ErrorClass::self_consistent;
  if (s == "inconsistent") return ErrorClass::inconsistent;
  if (s == "not_error") return ErrorClass::not_error;
  return std::nullopt;
}

// cluster_count is measured only for errors; correct answers carry 1.
struct ErrorClassRecord {
  std::string question_id;
  ErrorClass error_class = ErrorClass::not_error;
  int k_used = 0;
  int cluster_count = 1;

  void validate() const {
    if (cluster_count < 1) throw ArgumentError("cluster_count must be >= 1");
    if (k_used < 0) throw ArgumentError("k_used must be >= 0");
    if (error_class == ErrorClass::self_consistent && cluster_count != 1)
      throw ArgumentError("self-consistent error must have exactly one cluster");
  }
  bool operator==(const ErrorClassRecord&) const = default;
};

// Last-token activations of one model at one layer, one row per question.
struct HiddenStateMatrix {
  std::string model_name;
  int layer = 0;
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // row-major, ids.size() x dim

  std::size_t rows() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  void validate() const {
    if (layer < 0) throw ArgumentError("layer must be >= 0");
    if (dim <= 0) throw ArgumentError("dim must be positive");
    if (data.size() != ids.size() * static_cast<std::size_t>(dim))
      throw IntegrityError("matrix data size does not match ids x dim");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw ArgumentError("duplicate row id '" + id + "'");
    for (float v : data)
      if (!std::isfinite(v)) throw ArgumentError("matrix contains a non-finite entry");
  }
  bool operator==(const HiddenStateMatrix&) const = default;
};

// Scores are oriented so that higher means "more likely correct".
struct DetectionScore {
  std::string question_id;
  std::string detector;
  double score = 0.0;

  void validate() const {
    if (!std::isfinite(score)) throw ArgumentError("detection score must be finite");
  }
  bool operator==(const DetectionScore&) const = default;
};

enum class Subset { CE, IE };

inline std::string_view to_string(Subset s) { return s == Subset::CE ? "CE" : "IE"; }

inline std::optional<Subset> parse_subset(std::string_view s) {
  if (s == "CE") return Subset::CE;
  if (s == "IE") return Subset::IE;
  return std::nullopt;
}

struct EvalResult {
  std::string detector;
  Subset subset = Subset::CE;
  double auroc = 0.5;
  int n_pos = 0;
  int n_neg = 0;
  std::optional<double> delta;  // auroc(IE) - auroc(CE)

  void validate() const {
    if (!(auroc >= 0.0 && auroc <= 1.0)) throw ArgumentError("auroc outside [0,1]");
    if (n_pos <= 0 || n_neg <= 0) throw ArgumentError("eval result needs both classes");
  }
  bool operator==(const EvalResult&) const = default;
};

}  // namespace sce
