#pragma once

// JSON-lines persistence for every record type. One record per line, keys
// always emitted in the order listed in each encode() overload.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/types.hpp"

namespace sce {

using ojson = nlohmann::ordered_json;

namespace detail {

template <class T>
T field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(std::string("key '") + key + "' has the wrong type");
  }
}

inline void require_object(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
}

}  // namespace detail

// ---- GenParams -------------------------------------------------------------

inline ojson encode(const GenParams& p) {
  ojson j;
  j["temperature"] = p.temperature;
  j["top_p"] = p.top_p;
  j["top_k"] = p.top_k;
  j["max_tokens"] = p.max_tokens;
  j["seed"] = p.seed;
  return j;
}

inline GenParams decode(const nlohmann::json& j, std::type_identity<GenParams>) {
  detail::require_object(j);
  GenParams p;
  p.temperature = detail::field<double>(j, "temperature");
  p.top_p = detail::field<double>(j, "top_p");
  p.top_k = detail::field<int>(j, "top_k");
  p.max_tokens = detail::field<int>(j, "max_tokens");
  p.seed = detail::field<std::int64_t>(j, "seed");
  return p;
}

// ---- QuestionRecord: id, question, reference_answers ------------------------

inline ojson encode(const QuestionRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["reference_answers"] = r.reference_answers;
  return j;
}

inline QuestionRecord decode(const nlohmann::json& j, std::type_identity<QuestionRecord>) {
  detail::require_object(j);
  QuestionRecord r;
  r.id = detail::field<std::string>(j, "id");
  r.question = detail::field<std::string>(j, "question");
  r.reference_answers = detail::field<std::vector<std::string>>(j, "reference_answers");
  return r;
}

// ---- GenerationRecord: question_id, kind, sample_index, model_name, text,
//      token_logprobs, params -------------------------------------------------

inline ojson encode(const GenerationRecord& r) {
  ojson j;
  j["question_id"] = r.question_id;
  j["kind"] = r.kind.is_greedy() ? "greedy" : "sample";
  j["sample_index"] = r.kind.sample_index();
  j["model_name"] = r.model_name;
  j["text"] = r.text;
  j["token_logprobs"] = r.token_logprobs;
  j["params"] = encode(r.params);
  return j;
}

inline GenerationRecord decode(const nlohmann::json& j, std::type_identity<GenerationRecord>) {
  detail::require_object(j);
  GenerationRecord r;
  r.question_id = detail::field<std::string>(j, "question_id");
  const auto kind = detail::field<std::string>(j, "kind");
  const int index = detail::field<int>(j, "sample_index");
  if (kind == "greedy") {
    if (index != 0) throw ParseError("greedy record must have sample_index 0");
    r.kind = ResponseKind::greedy();
  } else if (kind == "sample") {
    if (index < 1) throw ParseError("sample record must have sample_index >= 1");
    r.kind = ResponseKind::sample(index);
  } else {
    throw ParseError("unknown generation kind '" + kind + "'");
  }
  r.model_name = detail::field<std::string>(j, "model_name");
  r.text = detail::field<std::string>(j, "text");
  r.token_logprobs = detail::field<std::vector<double>>(j, "token_logprobs");
  if (!j.contains("params")) throw ParseError("missing key 'params'");
  r.params = decode(j["params"], std::type_identity<GenParams>{});
  try {
    r.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(e.what());
  }
  return r;
}

// ---- CorrectnessRecord: question_id, grade, z ---------------------------------

inline ojson encode(const CorrectnessRecord& r) {
  ojson j;
  j["question_id"] = r.question_id;
  j["grade"] = std::string(1, grade_letter(r.grade));
  if (auto z = r.z())
    j["z"] = *z;
  else
    j["z"] = nullptr;
  return j;
}

inline CorrectnessRecord decode(const nlohmann::json& j, std::type_identity<CorrectnessRecord>) {
  detail::require_object(j);
  CorrectnessRecord r;
  r.question_id = detail::field<std::string>(j, "question_id");
  const auto letter = detail::field<std::string>(j, "grade");
  const auto grade = parse_grade(letter);
  if (!grade) throw ParseError("invalid grade '" + letter + "'");
  r.grade = *grade;
  auto it = j.find("z");
  if (it == j.end()) throw ParseError("missing key 'z'");
  std::optional<int> z;
  if (!it->is_null()) {
    if (!it->is_number_integer()) throw ParseError("key 'z' has the wrong type");
    z = it->get<int>();
  }
  if (z != r.z()) throw ParseError("z does not agree with grade '" + letter + "'");
  return r;
}

// ---- ErrorClassRecord: question_id, class, k_used, cluster_count -------------

inline ojson encode(const ErrorClassRecord& r) {
  ojson j;
  j["question_id"] = r.question_id;
  j["class"] = std::string(to_string(r.error_class));
  j["k_used"] = r.k_used;
  j["cluster_count"] = r.cluster_count;
  return j;
}

inline ErrorClassRecord decode(const nlohmann::json& j, std::type_identity<ErrorClassRecord>) {
  detail::require_object(j);
  ErrorClassRecord r;
  r.question_id = detail::field<std::string>(j, "question_id");
  const auto cls = detail::field<std::string>(j, "class");
  const auto parsed = parse_error_class(cls);
  if (!parsed) throw ParseError("invalid error class '" + cls + "'");
  r.error_class = *parsed;
  r.k_used = detail::field<int>(j, "k_used");
  r.cluster_count = detail::field<int>(j, "cluster_count");
  try {
    r.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(e.what());
  }
  return r;
}

// ---- DetectionScore: question_id, detector, score ----------------------------

inline ojson encode(const DetectionScore& r) {
  ojson j;
  j["question_id"] = r.question_id;
  j["detector"] = r.detector;
  j["score"] = r.score;
  return j;
}

inline DetectionScore decode(const nlohmann::json& j, std::type_identity<DetectionScore>) {
  detail::require_object(j);
  DetectionScore r;
  r.question_id = detail::field<std::string>(j, "question_id");
  r.detector = detail::field<std::string>(j, "detector");
  r.score = detail::field<double>(j, "score");
  return r;
}

// ---- EvalResult: detector, subset, auroc, n_pos, n_neg, delta ----------------

inline ojson encode(const EvalResult& r) {
  ojson j;
  j["detector"] = r.detector;
  j["subset"] = std::string(to_string(r.subset));
  j["auroc"] = r.auroc;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  if (r.delta)
    j["delta"] = *r.delta;
  else
    j["delta"] = nullptr;
  return j;
}

inline EvalResult decode(const nlohmann::json& j, std::type_identity<EvalResult>) {
  detail::require_object(j);
  EvalResult r;
  r.detector = detail::field<std::string>(j, "detector");
  const auto subset = detail::field<std::string>(j, "subset");
  const auto parsed = parse_subset(subset);
  if (!parsed) throw ParseError("invalid subset '" + subset + "'");
  r.subset = *parsed;
  r.auroc = detail::field<double>(j, "auroc");
  r.n_pos = detail::field<int>(j, "n_pos");
  r.n_neg = detail::field<int>(j, "n_neg");
  if (auto it = j.find("delta"); it != j.end() && !it->is_null()) r.delta = it->get<double>();
  return r;
}

// ---- files -------------------------------------------------------------------

template <class T>
std::string serialize_records(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += encode(r).dump();
    out += '\n';
  }
  return out;
}

// Writes atomically: the content goes to a sibling temp file which is then
// renamed over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  write_file_atomic(path, serialize_records(records));
}

template <class T>
std::vector<T> parse_records(std::string_view content, const std::string& source = "") {
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    auto line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back(decode(j, std::type_identity<T>{}));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source + std::string("malformed JSON: ") + e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(source + e.what(), line_no);
    }
  }
  return out;
}

template <class T>
std::vector<T> read_records(const std::filesystem::path& path) {
  return parse_records<T>(read_file(path), path.string() + ": ");
}

}  // namespace sce
