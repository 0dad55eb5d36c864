#pragma once

// Pipeline configuration loaded from YAML. Relative paths resolve against
// the directory of the config file. The config hash covers every setting
// that can change results; output_dir, cache_dir and max_inflight are left
// out so relocating a run or changing concurrency keeps the hash.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "sce/consistency/consistency.hpp"
#include "sce/consistency/sampling.hpp"
#include "sce/core/digest.hpp"
#include "sce/core/error.hpp"
#include "sce/core/records.hpp"
#include "sce/detectors/detectors.hpp"
#include "sce/evalkit/subsets.hpp"
#include "sce/gateway/prompts.hpp"
#include "sce/probe/fusion.hpp"
#include "sce/probe/train.hpp"

namespace sce::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr const char* kProbe = "probe";
inline constexpr const char* kProbeVerifier = "probe_verifier";
inline constexpr const char* kCrossModel = "cross_model";

inline const std::vector<std::string>& known_detectors() {
  static const std::vector<std::string> names{detectors::kProbability, detectors::kPTrue,
                                              detectors::kSemanticEntropy, kProbe, kCrossModel};
  return names;
}

inline void check_detector_name(const std::string& name) {
  const auto& k = known_detectors();
  if (std::find(k.begin(), k.end(), name) == k.end())
    throw UsageError("unknown detector '" + name + "' (known: probability, p_true, semantic_entropy, probe, cross_model)");
}

struct ModelSpec {
  std::string name;
  std::string gateway_url;  // http(s)://..., mock://<script path>, or empty for GATEWAY_URL
  std::optional<std::string> bearer_token_env;
};

struct PipelineConfig {
  std::filesystem::path base_dir;  // directory of the config file

  std::vector<ModelSpec> models;
  std::string response_model;
  std::string verifier;
  std::string judge;  // serves grading and NLI; defaults to response_model

  std::string questions;  // as written in the config
  std::string template_text{prompts::kDefaultGeneration};

  consistency::SamplingPlan sampling;
  consistency::EquivalenceOptions equivalence;
  detectors::DetectorConfig detector;
  std::vector<std::string> detectors = known_detectors();

  probe::TrainConfig train;
  std::optional<std::vector<int>> probe_layers;  // empty optional = all layers
  std::vector<double> lambda_grid = probe::default_lambda_grid();
  std::optional<double> forced_lambda;

  evalkit::SubsetOptions subsets{0, evalkit::Balance::one_to_one, 0.25, 0.25, true};
  std::vector<std::string> frequency_models;  // defaults to {response_model}

  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string cache_dir;  // empty disables the cache
  int max_inflight = 8;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  std::filesystem::path questions_path() const { return resolve(questions); }
  std::filesystem::path output_path() const { return resolve(output_dir); }

  const ModelSpec& model(const std::string& name) const {
    for (const auto& m : models)
      if (m.name == name) return m;
    throw UsageError("model '" + name + "' is not declared under models");
  }
  bool wants(const std::string& detector) const {
    return std::find(detectors.begin(), detectors.end(), detector) != detectors.end();
  }

  // Re-derives the seed-dependent settings after `seed` changes.
  void apply_seed(std::uint64_t s) {
    seed = s;
    sampling.seed = static_cast<std::int64_t>(s);
    train.seed = s;
    subsets.seed = s;
  }

  void validate() const {
    if (models.empty()) throw UsageError("config: no models declared");
    std::set<std::string> names;
    for (const auto& m : models) {
      if (m.name.empty()) throw UsageError("config: model without a name");
      if (!names.insert(m.name).second) throw UsageError("config: model '" + m.name + "' declared twice");
    }
    model(response_model);
    model(judge);
    if (wants(kCrossModel)) {
      if (verifier.empty()) throw UsageError("config: cross_model detector needs a verifier model");
      model(verifier);
      if (verifier == response_model) throw UsageError("config: verifier must differ from the response model");
    }
    for (const auto& m : frequency_models) model(m);
    if (questions.empty()) throw UsageError("config: dataset.questions is required");
    for (const auto& d : detectors) check_detector_name(d);
    if (max_inflight < 1) throw UsageError("config: max_inflight must be >= 1");
    try {
      sampling.validate();
      detector.validate();
      train.validate();
      probe::validate_lambda_grid(lambda_grid);
      if (forced_lambda && !(*forced_lambda >= 0.0 && *forced_lambda <= 1.0))
        throw ArgumentError("fusion.lambda must lie in [0, 1]");
      if (!(subsets.val_fraction > 0.0 && subsets.test_fraction > 0.0 &&
            subsets.val_fraction + subsets.test_fraction < 1.0))
        throw ArgumentError("subset fractions must be positive and sum below 1");
    } catch (const ArgumentError& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }

  // Every result-affecting setting, paths as written.
  ojson canonical() const {
    ojson j;
    ojson models_j = ojson::array();
    for (const auto& m : models) models_j.push_back({{"name", m.name}, {"gateway_url", m.gateway_url}});
    j["models"] = models_j;
    j["response_model"] = response_model;
    j["verifier"] = verifier;
    j["judge"] = judge;
    j["questions"] = questions;
    j["template"] = template_text;
    j["k"] = sampling.k;
    j["greedy"] = encode(sampling.greedy);
    j["sampling"] = encode(sampling.sample);
    j["question_context"] = equivalence.question_context;
    j["semantic_entropy"] = {{"samples", detector.se_samples},
                             {"temperature", detector.se_temperature},
                             {"seed_base", detector.se_seed_base},
                             {"max_tokens", detector.max_tokens}};
    j["detectors"] = detectors;
    j["probe"] = {{"hidden", train.hidden},
                  {"learning_rate", train.learning_rate},
                  {"momentum", train.momentum},
                  {"batch_size", train.batch_size},
                  {"max_epochs", train.max_epochs},
                  {"standardize", train.standardize},
                  {"layers", probe_layers ? ojson(*probe_layers) : ojson("all")}};
    j["fusion"] = {{"lambda_grid", lambda_grid}, {"lambda", forced_lambda ? ojson(*forced_lambda) : ojson()}};
    j["subsets"] = {{"balance", std::string(evalkit::to_string(subsets.balance))},
                    {"val_fraction", subsets.val_fraction},
                    {"test_fraction", subsets.test_fraction}};
    j["frequency_models"] = frequency_models;
    j["seed"] = seed;
    return j;
  }

  std::string hash() const { return sha256_hex(canonical().dump()); }
};

namespace detail {

template <class T>
T get(const YAML::Node& node, const char* key, const T& fallback) {
  const auto n = node[key];
  if (!n || n.IsNull()) return fallback;
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw UsageError(std::string("config: '") + key + "' has the wrong type");
  }
}

inline GenParams gen_params(const YAML::Node& n, GenParams p) {
  if (!n) return p;
  p.temperature = get(n, "temperature", p.temperature);
  p.top_p = get(n, "top_p", p.top_p);
  p.top_k = get(n, "top_k", p.top_k);
  p.max_tokens = get(n, "max_tokens", p.max_tokens);
  return p;
}

}  // namespace detail

namespace detail {
inline PipelineConfig from_yaml(const YAML::Node& root, const std::filesystem::path& base_dir);
}  // namespace detail

inline PipelineConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw UsageError(std::string("config: invalid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw UsageError("config: top level must be a mapping");
  try {
    return detail::from_yaml(root, base_dir);
  } catch (const YAML::Exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

namespace detail {

inline PipelineConfig from_yaml(const YAML::Node& root, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;

  if (auto models = root["models"]) {
    if (!models.IsSequence()) throw UsageError("config: models must be a list");
    for (const auto& m : models) {
      ModelSpec spec;
      spec.name = get<std::string>(m, "name", "");
      spec.gateway_url = get<std::string>(m, "gateway_url", "");
      if (auto t = m["bearer_token_env"]) spec.bearer_token_env = t.as<std::string>();
      c.models.push_back(spec);
    }
  }
  c.response_model = get<std::string>(root, "response_model", c.models.empty() ? "" : c.models.front().name);
  c.verifier = get<std::string>(root, "verifier", "");
  c.judge = get<std::string>(root, "judge", c.response_model);

  if (auto ds = root["dataset"]) c.questions = get<std::string>(ds, "questions", "");

  if (auto g = root["generation"]) {
    c.template_text = get<std::string>(g, "template", c.template_text);
    c.sampling.k = get(g, "k", c.sampling.k);
    c.sampling.greedy = detail::gen_params(g["greedy"], c.sampling.greedy);
    c.sampling.sample = detail::gen_params(g["sampling"], c.sampling.sample);
  }
  if (auto eq = root["consistency"]) c.equivalence.question_context = get(eq, "question_context", true);

  if (auto d = root["detectors"]) {
    if (d["enabled"]) c.detectors = d["enabled"].as<std::vector<std::string>>();
    if (auto se = d["semantic_entropy"]) {
      c.detector.se_samples = get(se, "samples", c.detector.se_samples);
      c.detector.se_temperature = get(se, "temperature", c.detector.se_temperature);
      c.detector.se_seed_base = get(se, "seed_base", c.detector.se_seed_base);
      c.detector.max_tokens = get(se, "max_tokens", c.detector.max_tokens);
    }
  }
  if (auto p = root["probe"]) {
    if (p["hidden"]) c.train.hidden = p["hidden"].as<std::vector<int>>();
    c.train.learning_rate = get(p, "learning_rate", c.train.learning_rate);
    c.train.momentum = get(p, "momentum", c.train.momentum);
    c.train.batch_size = get(p, "batch_size", c.train.batch_size);
    c.train.max_epochs = get(p, "max_epochs", c.train.max_epochs);
    c.train.standardize = get(p, "standardize", c.train.standardize);
    if (auto layers = p["layers"]) {
      if (layers.IsSequence()) c.probe_layers = layers.as<std::vector<int>>();
      else if (layers.as<std::string>() != "all") throw UsageError("config: probe.layers must be \"all\" or a list");
    }
  }
  if (auto f = root["fusion"]) {
    if (f["lambda_grid"] && f["lambda_grid"].IsSequence()) c.lambda_grid = f["lambda_grid"].as<std::vector<double>>();
    if (f["lambda"] && !f["lambda"].IsNull()) c.forced_lambda = f["lambda"].as<double>();
  }
  if (auto s = root["subsets"]) {
    try {
      c.subsets.balance = evalkit::parse_balance(get<std::string>(s, "balance", "1:1"));
    } catch (const ArgumentError& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
    c.subsets.val_fraction = get(s, "val_fraction", c.subsets.val_fraction);
    c.subsets.test_fraction = get(s, "test_fraction", c.subsets.test_fraction);
  }
  if (auto a = root["analysis"]) {
    if (a["frequency_models"]) c.frequency_models = a["frequency_models"].as<std::vector<std::string>>();
  }
  if (c.frequency_models.empty() && !c.response_model.empty()) c.frequency_models = {c.response_model};

  c.apply_seed(get<std::uint64_t>(root, "seed", 0));
  c.output_dir = get<std::string>(root, "output_dir", c.output_dir);
  c.cache_dir = get<std::string>(root, "cache_dir", c.cache_dir);
  c.max_inflight = get(root, "max_inflight", c.max_inflight);
  return c;
}

}  // namespace detail

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw UsageError("config file not found: " + path.string());
  auto c = parse_config(read_file(path), path.parent_path().empty() ? "." : path.parent_path());
  return c;
}

}  // namespace sce::pipeline
