#pragma once

// Stage driver. Each stage reads predecessor files from the output dir,
// writes its own files and a manifest. A stage whose manifest still matches
// its inputs and outputs is skipped; an input whose digest differs from the
// manifest of the stage that produced it is rejected as stale.
//
// Output tree (relative to the output dir):
//   generations.jsonl  labels.jsonl  error_classes.jsonl  subsets.json
//   scores/<detector>.jsonl            training-free detectors
//   scores/<detector>.<CE|IE>.jsonl    probe, probe_verifier, cross_model
//   features/<model>/layer_<l>.{manifest.json,f32le}
//   probes/<CE|IE>/<model>.{manifest.json,f32le,report.json}
//   fusion.json  eval_results.jsonl  eval_results.csv
//   analysis/{frequency,k_curve,overlap}.csv
//   manifests/<stage>.json  failures/<stage>.jsonl (only after failures)

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/consistency/consistency.hpp"
#include "sce/consistency/sampling.hpp"
#include "sce/core/digest.hpp"
#include "sce/core/error.hpp"
#include "sce/core/matrix.hpp"
#include "sce/core/parallel.hpp"
#include "sce/core/records.hpp"
#include "sce/core/types.hpp"
#include "sce/detectors/detectors.hpp"
#include "sce/evalkit/analysis.hpp"
#include "sce/evalkit/evaluate.hpp"
#include "sce/evalkit/labeling.hpp"
#include "sce/evalkit/subsets.hpp"
#include "sce/gateway/cached_gateway.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/http_gateway.hpp"
#include "sce/gateway/mock_gateway.hpp"
#include "sce/gateway/prompts.hpp"
#include "sce/pipeline/config.hpp"
#include "sce/pipeline/manifest.hpp"
#include "sce/probe/features.hpp"
#include "sce/probe/fusion.hpp"
#include "sce/probe/io.hpp"
#include "sce/probe/train.hpp"

namespace sce::pipeline {

namespace fs = std::filesystem;

using GatewayFactory = std::function<std::shared_ptr<Gateway>(const ModelSpec&, const PipelineConfig&)>;

// mock://<script> loads a MockScript (path relative to the config); an empty
// URL falls back to GATEWAY_URL; anything else is an HTTP base URL.
inline std::shared_ptr<Gateway> default_gateway(const ModelSpec& spec, const PipelineConfig& cfg) {
  const std::string mock = "mock://";
  if (spec.gateway_url.rfind(mock, 0) == 0)
    return std::make_shared<MockGateway>(MockScript::load(cfg.resolve(spec.gateway_url.substr(mock.size()))));
  HttpGatewayOptions opt;
  opt.base_url = spec.gateway_url.empty() ? gateway_url_from_env() : spec.gateway_url;
  opt.max_inflight = cfg.max_inflight;
  if (spec.bearer_token_env)
    if (const char* t = std::getenv(spec.bearer_token_env->c_str())) opt.bearer_token = t;
  return std::make_shared<HttpGateway>(opt);
}

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate", "label",  "classify", "subsets", "detect",
                                              "extract",  "train-probe", "fuse", "evaluate", "analyze"};
  return names;
}

struct StageResult {
  std::string stage;
  bool skipped = false;
  std::vector<evalkit::ItemFailure> failures;
  std::vector<std::string> warnings;
  bool ok() const noexcept { return failures.empty(); }
};

struct StageOptions {
  bool force = false;
  std::optional<std::vector<std::string>> detectors;  // overrides the config for detect/evaluate
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, GatewayFactory factory = default_gateway)
      : cfg_(std::move(cfg)), factory_(std::move(factory)) {
    cfg_.validate();
    out_ = cfg_.output_path();
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const fs::path& output_dir() const noexcept { return out_; }

  // The (cached) gateway serving a configured model; created on first use.
  Gateway& gateway(const std::string& model) {
    std::lock_guard lock(gw_mutex_);
    auto it = gateways_.find(model);
    if (it != gateways_.end()) return *it->second.front;
    Entry e;
    e.base = factory_(cfg_.model(model), cfg_);
    if (!cfg_.cache_dir.empty()) {
      e.cache = std::make_shared<CachedGateway>(*e.base, cfg_.resolve(cfg_.cache_dir) / model);
      e.front = e.cache.get();
    } else {
      e.front = e.base.get();
    }
    return *gateways_.emplace(model, std::move(e)).first->second.front;
  }

  StageResult run(const std::string& stage, const StageOptions& opt = {}) {
    if (stage == "generate") return generate(opt);
    if (stage == "label") return label(opt);
    if (stage == "classify") return classify(opt);
    if (stage == "subsets") return subsets(opt);
    if (stage == "detect") return detect(opt);
    if (stage == "extract") return extract(opt);
    if (stage == "train-probe") return train_probe(opt);
    if (stage == "fuse") return fuse(opt);
    if (stage == "evaluate") return evaluate(opt);
    throw UsageError("unknown stage '" + stage + "'");
  }

  StageResult analyze(const std::string& what, const StageOptions& opt = {}) {
    if (what == "frequency") return analyze_frequency(opt);
    if (what == "k_curve") return analyze_k_curve(opt);
    if (what == "overlap") return analyze_overlap(opt);
    throw UsageError("unknown analysis '" + what + "' (expected overlap, frequency or k_curve)");
  }

  // ---- stages ----------------------------------------------------------------

  StageResult generate(const StageOptions& opt) {
    Stage s(*this, "generate", opt);
    s.input_external("questions", cfg_.questions_path());
    return s.run([&](Stage& st) {
      const auto questions = load_questions();
      auto records = generate_for(cfg_.response_model, questions, st.result);
      st.write_records("generations.jsonl", records);
    });
  }

  StageResult label(const StageOptions& opt) {
    Stage s(*this, "label", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    return s.run([&](Stage& st) {
      const auto questions = load_questions();
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      st.write_records("labels.jsonl", label_for(questions, gens, st.result));
    });
  }

  StageResult classify(const StageOptions& opt) {
    Stage s(*this, "classify", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    s.input("labels.jsonl");
    return s.run([&](Stage& st) {
      const auto questions = load_questions();
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      const auto labels = read_records<CorrectnessRecord>(out_ / "labels.jsonl");
      st.write_records("error_classes.jsonl", classify_for(questions, gens, labels, st.result));
    });
  }

  StageResult subsets(const StageOptions& opt) {
    Stage s(*this, "subsets", opt);
    s.input("labels.jsonl");
    s.input("error_classes.jsonl");
    return s.run([&](Stage& st) {
      const auto labels = read_records<CorrectnessRecord>(out_ / "labels.jsonl");
      const auto classes = read_records<ErrorClassRecord>(out_ / "error_classes.jsonl");
      auto sopt = cfg_.subsets;
      sopt.make_splits = true;
      const auto pair = evalkit::build_subsets(labels, classes, sopt);
      st.write("subsets.json", evalkit::encode(pair).dump(2) + "\n");
    });
  }

  StageResult detect(const StageOptions& opt) {
    const auto names = detector_list(opt);
    std::vector<std::string> direct;
    bool features = false;
    for (const auto& d : names) {
      if (d == kProbe || d == kCrossModel) features = true;
      else direct.push_back(d);
    }
    Stage s(*this, "detect", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    s.input("subsets.json");
    s.input_value("detectors", join(direct));
    auto result = s.run([&](Stage& st) {
      const auto questions = index_questions(load_questions());
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      const auto pair = load_subsets();
      const auto members = subset_members(pair);
      const auto greedy = greedy_by_id(gens);
      for (const auto& name : direct) {
        std::vector<std::optional<double>> scores(members.size());
        std::vector<std::string> errors(members.size());
        parallel_for(members.size(), cfg_.max_inflight, [&](std::size_t i) {
          try {
            const auto& id = members[i];
            const auto& q = questions.at(id);
            const auto* g = find_or_null(greedy, id);
            if (!g) throw ArgumentError("no greedy response");
            if (name == detectors::kProbability) {
              scores[i] = detectors::avg_logprob(g->token_logprobs);
            } else if (name == detectors::kPTrue) {
              scores[i] = detectors::p_true(q.question, g->text, gateway(cfg_.response_model));
            } else {
              scores[i] = detectors::semantic_entropy(q.question, prompt_for(q), gateway(cfg_.response_model),
                                                      gateway(cfg_.judge), cfg_.detector, cfg_.equivalence)
                              .score;
            }
          } catch (const Error& e) {
            errors[i] = e.what();
          }
        });
        std::vector<DetectionScore> out;
        for (std::size_t i = 0; i < members.size(); ++i) {
          if (scores[i])
            out.push_back({members[i], name, *scores[i]});
          else
            st.result.failures.push_back({members[i], name + ": " + errors[i]});
        }
        st.write_records("scores/" + name + ".jsonl", out);
      }
    });
    if (features && result.ok()) {
      auto ex = extract(opt);
      result.failures.insert(result.failures.end(), ex.failures.begin(), ex.failures.end());
      result.skipped = result.skipped && ex.skipped;
    }
    return result;
  }

  StageResult extract(const StageOptions& opt) {
    Stage s(*this, "extract", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    s.input("subsets.json");
    return s.run([&](Stage& st) {
      const auto questions = index_questions(load_questions());
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      const auto greedy = greedy_by_id(gens);
      std::vector<probe::FeatureInput> items;
      for (const auto& id : subset_members(load_subsets())) {
        const auto* g = find_or_null(greedy, id);
        if (!g) throw IntegrityError("no greedy response for subset member '" + id + "'");
        items.push_back({id, prompt_for(questions.at(id)), g->text});
      }
      const auto selection = cfg_.probe_layers ? LayerSelection::of(*cfg_.probe_layers) : LayerSelection::all();
      for (const auto& model : probe_models()) {
        // Every model embeds the response model's text.
        for (const auto& m : probe::extract_layers(items, gateway(model), selection, cfg_.max_inflight))
          st.write_matrix(feature_prefix(model, m.layer), m);
      }
    });
  }

  StageResult train_probe(const StageOptions& opt) {
    Stage s(*this, "train-probe", opt);
    s.input("subsets.json");
    const auto models = probe_models();
    for (const auto& model : models)
      for (int layer : feature_layers(model)) {
        s.input(feature_prefix(model, layer) + ".manifest.json");
        s.input(feature_prefix(model, layer) + ".f32le");
      }
    return s.run([&](Stage& st) {
      const auto pair = load_subsets();
      for (Subset subset : {Subset::CE, Subset::IE}) {
        const auto sub = std::string(to_string(subset));
        const auto train = evalkit::split_view(pair, subset, evalkit::SplitPart::train);
        const auto val = evalkit::split_view(pair, subset, evalkit::SplitPart::val);
        std::vector<std::string> ids;
        std::vector<int> z;
        for (auto part : {evalkit::SplitPart::train, evalkit::SplitPart::val, evalkit::SplitPart::test}) {
          const auto v = evalkit::split_view(pair, subset, part);
          ids.insert(ids.end(), v.ids.begin(), v.ids.end());
          z.insert(z.end(), v.z.begin(), v.z.end());
        }
        for (const auto& model : models) {
          std::vector<HiddenStateMatrix> matrices;
          for (int layer : feature_layers(model)) matrices.push_back(read_matrix(out_ / feature_prefix(model, layer)));
          const auto sweep = probe::sweep_layers(matrices, {train.ids, train.z}, {val.ids, val.z}, cfg_.train);
          const auto probe = sweep.best.probe();
          const auto& best = *std::find_if(matrices.begin(), matrices.end(),
                                           [&](const HiddenStateMatrix& m) { return m.layer == sweep.best_layer; });
          const auto rows = probe::gather(best, ids, z);
          const auto scores = probe.scores(rows);
          std::vector<DetectionScore> recs;
          const auto name = model == cfg_.response_model ? kProbe : kProbeVerifier;
          for (std::size_t i = 0; i < ids.size(); ++i) recs.push_back({ids[i], name, scores[i]});
          // Keep score files sorted by id like every other score file.
          std::sort(recs.begin(), recs.end(),
                    [](const DetectionScore& a, const DetectionScore& b) { return a.question_id < b.question_id; });
          st.write_records("scores/" + std::string(name) + "." + sub + ".jsonl", recs);

          const auto prefix = "probes/" + sub + "/" + model;
          probe::ProbeInfo info{best.model_name, sweep.best_layer, cfg_.train.seed, sweep.best.report.best_epoch,
                                sweep.best.report.best_val_auroc};
          probe::save_probe(out_ / prefix, probe, info);
          st.record(prefix + ".manifest.json");
          st.record(prefix + ".f32le");
          ojson report;
          report["model"] = model;
          report["subset"] = sub;
          report["best_layer"] = sweep.best_layer;
          report["layers"] = sweep.layers;
          report["val_auroc"] = sweep.val_auroc;
          report["best_epoch"] = sweep.best.report.best_epoch;
          report["best_val_auroc"] = sweep.best.report.best_val_auroc;
          ojson epochs = ojson::array();
          for (const auto& e : sweep.best.report.per_epoch)
            epochs.push_back({{"train_loss", e.train_loss}, {"val_auroc", e.val_auroc}});
          report["per_epoch"] = epochs;
          st.write(prefix + ".report.json", report.dump(2) + "\n");
        }
      }
    });
  }

  StageResult fuse(const StageOptions& opt) {
    if (cfg_.verifier.empty()) throw UsageError("fuse needs a verifier model in the config");
    Stage s(*this, "fuse", opt);
    s.input("subsets.json");
    for (const char* sub : {"CE", "IE"}) {
      s.input(std::string("scores/") + kProbe + "." + sub + ".jsonl");
      s.input(std::string("scores/") + kProbeVerifier + "." + sub + ".jsonl");
    }
    return s.run([&](Stage& st) {
      const auto pair = load_subsets();
      ojson doc;
      for (Subset subset : {Subset::CE, Subset::IE}) {
        const auto sub = std::string(to_string(subset));
        const auto sm = score_map(out_ / ("scores/" + std::string(kProbe) + "." + sub + ".jsonl"));
        const auto sv = score_map(out_ / ("scores/" + std::string(kProbeVerifier) + "." + sub + ".jsonl"));
        const auto val = evalkit::split_view(pair, subset, evalkit::SplitPart::val);
        std::vector<double> vm, vv;
        for (const auto& id : val.ids) {
          vm.push_back(lookup(sm, id, kProbe));
          vv.push_back(lookup(sv, id, kProbeVerifier));
        }
        const auto curve = probe::lambda_curve(vm, vv, val.z, cfg_.lambda_grid);
        const auto chosen = probe::select_lambda(vm, vv, val.z, cfg_.lambda_grid);
        const double lambda = cfg_.forced_lambda ? *cfg_.forced_lambda : chosen.selected_lambda;
        ojson entry;
        entry["lambda_grid"] = cfg_.lambda_grid;
        entry["val_auroc"] = curve;
        entry["selected_lambda"] = lambda;
        entry["forced"] = cfg_.forced_lambda.has_value();
        doc[sub] = entry;
        std::vector<DetectionScore> recs;
        for (const auto& [id, m] : sm) recs.push_back({id, kCrossModel, probe::fuse(m, lookup(sv, id, kProbeVerifier), lambda)});
        st.write_records("scores/" + std::string(kCrossModel) + "." + sub + ".jsonl", recs);
      }
      st.write("fusion.json", doc.dump(2) + "\n");
    });
  }

  StageResult evaluate(const StageOptions& opt) {
    const auto names = detector_list(opt);
    std::vector<std::string> shared, per_subset;
    for (const auto& d : names) {
      if (d == kProbe) per_subset.push_back(kProbe);
      else if (d == kCrossModel) {
        per_subset.push_back(kProbeVerifier);
        per_subset.push_back(kCrossModel);
      } else shared.push_back(d);
    }
    Stage s(*this, "evaluate", opt);
    s.input("subsets.json");
    for (const auto& d : shared) s.input("scores/" + d + ".jsonl");
    for (const auto& d : per_subset)
      for (const char* sub : {"CE", "IE"}) s.input("scores/" + d + "." + sub + ".jsonl");
    return s.run([&](Stage& st) {
      const auto pair = load_subsets();
      std::vector<DetectionScore> ce, ie;
      for (const auto& d : shared) {
        const auto recs = read_records<DetectionScore>(out_ / ("scores/" + d + ".jsonl"));
        ce.insert(ce.end(), recs.begin(), recs.end());
        ie.insert(ie.end(), recs.begin(), recs.end());
      }
      for (const auto& d : per_subset) {
        const auto c = read_records<DetectionScore>(out_ / ("scores/" + d + ".CE.jsonl"));
        const auto i = read_records<DetectionScore>(out_ / ("scores/" + d + ".IE.jsonl"));
        ce.insert(ce.end(), c.begin(), c.end());
        ie.insert(ie.end(), i.begin(), i.end());
      }
      const auto results = evalkit::evaluate(ce, ie, pair);
      st.write_records("eval_results.jsonl", results);
      st.write("eval_results.csv", evalkit::eval_table(results).str());
    });
  }

  StageResult analyze_frequency(const StageOptions& opt) {
    Stage s(*this, "analyze-frequency", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("error_classes.jsonl");
    return s.run([&](Stage& st) {
      std::map<std::string, std::vector<ErrorClassRecord>> by_model;
      const auto questions = load_questions();
      for (const auto& model : cfg_.frequency_models) {
        if (model == cfg_.response_model) {
          by_model[model] = read_records<ErrorClassRecord>(out_ / "error_classes.jsonl");
          continue;
        }
        // Other models go through generate -> label -> classify here.
        const auto dir = "analysis/models/" + model + "/";
        const auto gens = generate_for(model, questions, st.result);
        st.write_records(dir + "generations.jsonl", gens);
        const auto labels = label_for(questions, gens, st.result);
        st.write_records(dir + "labels.jsonl", labels);
        by_model[model] = classify_for(questions, gens, labels, st.result);
        st.write_records(dir + "error_classes.jsonl", by_model[model]);
      }
      st.write("analysis/frequency.csv", evalkit::frequency_table(evalkit::frequency_report(by_model)).str());
    });
  }

  StageResult analyze_k_curve(const StageOptions& opt) {
    Stage s(*this, "analyze-k_curve", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    s.input("error_classes.jsonl");
    return s.run([&](Stage& st) {
      const auto questions = index_questions(load_questions());
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      const auto classes = read_records<ErrorClassRecord>(out_ / "error_classes.jsonl");
      const auto grouped = group_generations(gens);
      std::vector<std::string> errors;
      for (const auto& c : classes)
        if (c.error_class != ErrorClass::not_error) errors.push_back(c.question_id);
      std::vector<std::vector<int>> curves(errors.size());
      std::vector<std::string> messages(errors.size());
      parallel_for(errors.size(), cfg_.max_inflight, [&](std::size_t i) {
        try {
          const auto& g = grouped.at(errors[i]);
          curves[i] = consistency::frequency_by_k(questions.at(errors[i]).question, g.greedy, g.samples, 0,
                                                  gateway(cfg_.judge), cfg_.equivalence);
        } catch (const std::exception& e) {
          messages[i] = e.what();
        }
      });
      std::vector<std::vector<int>> ok;
      for (std::size_t i = 0; i < errors.size(); ++i) {
        if (messages[i].empty()) ok.push_back(curves[i]);
        else st.result.failures.push_back({errors[i], messages[i]});
      }
      st.write("analysis/k_curve.csv", evalkit::k_curve_table(cfg_.response_model, evalkit::k_curve(ok)).str());
    });
  }

  StageResult analyze_overlap(const StageOptions& opt) {
    if (cfg_.verifier.empty()) throw UsageError("overlap analysis needs a verifier model in the config");
    Stage s(*this, "analyze-overlap", opt);
    s.input_external("questions", cfg_.questions_path());
    s.input("generations.jsonl");
    s.input("error_classes.jsonl");
    return s.run([&](Stage& st) {
      const auto questions = index_questions(load_questions());
      const auto gens = read_records<GenerationRecord>(out_ / "generations.jsonl");
      const auto greedy = greedy_by_id(gens);
      std::vector<evalkit::OverlapItem> items;
      for (const auto& c : read_records<ErrorClassRecord>(out_ / "error_classes.jsonl")) {
        if (c.error_class != ErrorClass::self_consistent) continue;
        const auto& q = questions.at(c.question_id);
        items.push_back({q, prompt_for(q), greedy.at(c.question_id)->text});
      }
      evalkit::OverlapOptions oo{cfg_.sampling, cfg_.equivalence, cfg_.max_inflight};
      const auto report = evalkit::overlap_analysis(items, gateway(cfg_.verifier), gateway(cfg_.judge), oo);
      st.result.failures.insert(st.result.failures.end(), report.failures.begin(), report.failures.end());
      st.write("analysis/overlap.csv", evalkit::overlap_table(report).str());
    });
  }

 private:
  // ---- stage bookkeeping -----------------------------------------------------

  class Stage {
   public:
    Stage(Pipeline& p, std::string name, const StageOptions& opt) : p_(p), opt_(opt) { result.stage = std::move(name); }

    StageResult result;

    // An input produced by an earlier stage (path relative to the output dir).
    void input(const std::string& rel) {
      const auto path = p_.out_ / rel;
      std::error_code ec;
      if (!fs::exists(path, ec)) throw UsageError("missing input " + path.string() + " (run the stage that produces it first)");
      const auto digest = file_sha256(path);
      if (auto producer = p_.producer_digest(rel); producer && *producer != digest)
        throw StaleInputError("stale input " + rel + ": changed since the stage that wrote it recorded its digest; re-run the producing stage");
      inputs_[rel] = digest;
    }
    void input_external(const std::string& label, const fs::path& path) {
      std::error_code ec;
      if (!fs::exists(path, ec)) throw UsageError("input file not found: " + path.string());
      inputs_[label] = file_sha256(path);
    }
    void input_value(const std::string& label, const std::string& value) { inputs_[label] = sha256_hex(value); }

    void write(const std::string& rel, const std::string& content) {
      write_file_atomic(p_.out_ / rel, content);
      record(rel);
    }
    template <class T>
    void write_records(const std::string& rel, const std::vector<T>& records) {
      write(rel, serialize_records(records));
    }
    void write_matrix(const std::string& rel_prefix, const HiddenStateMatrix& m) {
      sce::write_matrix(p_.out_ / rel_prefix, m);
      record(rel_prefix + ".manifest.json");
      record(rel_prefix + ".f32le");
    }
    void record(const std::string& rel) { outputs_.insert(rel); }

    template <class Body>
    StageResult run(Body body) {
      const auto config_hash = p_.cfg_.hash();
      if (!opt_.force && up_to_date(config_hash)) {
        result.skipped = true;
        return result;
      }
      const auto started = utc_timestamp();
      body(*this);
      const auto failures_path = p_.out_ / "failures" / (result.stage + ".jsonl");
      std::error_code ec;
      if (!result.failures.empty()) {
        std::string lines;
        for (const auto& f : result.failures)
          lines += nlohmann::ordered_json{{"question_id", f.question_id}, {"error", f.message}}.dump() + "\n";
        write_file_atomic(failures_path, lines);
        fs::remove(manifest_path(p_.out_, result.stage), ec);
        return result;
      }
      fs::remove(failures_path, ec);
      RunManifest m;
      m.stage = result.stage;
      m.tool_version = kToolVersion;
      m.config_hash = config_hash;
      m.inputs = inputs_;
      for (const auto& rel : outputs_) m.outputs[rel] = file_sha256(p_.out_ / rel);
      m.started_at = started;
      m.finished_at = utc_timestamp();
      write_manifest(p_.out_, m);
      return result;
    }

   private:
    bool up_to_date(const std::string& config_hash) const {
      const auto m = read_manifest(p_.out_, result.stage);
      if (!m || m->config_hash != config_hash || m->tool_version != kToolVersion || m->inputs != inputs_) return false;
      for (const auto& [rel, digest] : m->outputs) {
        std::error_code ec;
        if (!fs::exists(p_.out_ / rel, ec) || file_sha256(p_.out_ / rel) != digest) return false;
      }
      return true;
    }

    Pipeline& p_;
    const StageOptions& opt_;
    std::map<std::string, std::string> inputs_;
    std::set<std::string> outputs_;
  };

  // Digest recorded for `rel` by whichever stage manifest lists it.
  std::optional<std::string> producer_digest(const std::string& rel) const {
    std::error_code ec;
    const auto dir = out_ / "manifests";
    if (!fs::is_directory(dir, ec)) return std::nullopt;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (f.extension() != ".json") continue;
      if (auto m = read_manifest(out_, f.stem().string())) {
        auto it = m->outputs.find(rel);
        if (it != m->outputs.end()) return it->second;
      }
    }
    return std::nullopt;
  }

  // ---- shared per-model work -------------------------------------------------

  std::vector<GenerationRecord> generate_for(const std::string& model, const std::vector<QuestionRecord>& questions,
                                             StageResult& result) {
    Gateway& gw = gateway(model);
    const auto model_name = gw.model_info().name;
    std::vector<std::optional<consistency::ResponseSet>> sets(questions.size());
    std::vector<std::string> errors(questions.size());
    parallel_for(questions.size(), cfg_.max_inflight, [&](std::size_t i) {
      try {
        sets[i] = consistency::draw_responses(gw, prompt_for(questions[i]), cfg_.sampling);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    std::vector<GenerationRecord> out;
    for (std::size_t i = 0; i < questions.size(); ++i) {
      if (!sets[i]) {
        result.failures.push_back({questions[i].id, errors[i]});
        continue;
      }
      const auto& set = *sets[i];
      out.push_back({questions[i].id, ResponseKind::greedy(), set.greedy.text, set.greedy.token_logprobs,
                     cfg_.sampling.greedy, model_name});
      for (int j = 1; j <= static_cast<int>(set.samples.size()); ++j) {
        const auto& g = set.samples[static_cast<std::size_t>(j - 1)];
        out.push_back({questions[i].id, ResponseKind::sample(j), g.text, g.token_logprobs,
                       cfg_.sampling.sample_params(j), model_name});
      }
    }
    return out;
  }

  std::vector<CorrectnessRecord> label_for(const std::vector<QuestionRecord>& questions,
                                           const std::vector<GenerationRecord>& gens, StageResult& result) {
    const auto greedy = greedy_by_id(gens);
    std::vector<evalkit::LabelItem> items;
    for (const auto& q : questions) {
      const auto* g = find_or_null(greedy, q.id);
      if (!g) continue;  // generation failed earlier; already reported there
      items.push_back({q, g->text});
    }
    auto outcome = evalkit::label_dataset(items, gateway(cfg_.judge), cfg_.max_inflight);
    result.failures.insert(result.failures.end(), outcome.failures.begin(), outcome.failures.end());
    result.warnings.insert(result.warnings.end(), outcome.warnings.begin(), outcome.warnings.end());
    return outcome.records;
  }

  std::vector<ErrorClassRecord> classify_for(const std::vector<QuestionRecord>& questions,
                                             const std::vector<GenerationRecord>& gens,
                                             const std::vector<CorrectnessRecord>& labels, StageResult& result) {
    const auto grouped = group_generations(gens);
    std::map<std::string, int> z;
    for (const auto& l : labels)
      if (auto v = l.z()) z[l.question_id] = *v;
    std::vector<const QuestionRecord*> todo;
    for (const auto& q : questions)
      if (z.count(q.id)) todo.push_back(&q);
    std::vector<std::optional<ErrorClassRecord>> recs(todo.size());
    std::vector<std::string> errors(todo.size());
    consistency::ClassifyOptions copt{cfg_.sampling.k, cfg_.equivalence};
    parallel_for(todo.size(), cfg_.max_inflight, [&](std::size_t i) {
      try {
        const auto& q = *todo[i];
        auto it = grouped.find(q.id);
        if (it == grouped.end()) throw ArgumentError("no generations");
        recs[i] = consistency::classify_error(q.id, q.question, it->second.greedy, it->second.samples, z.at(q.id),
                                              gateway(cfg_.judge), copt);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    std::vector<ErrorClassRecord> out;
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (recs[i]) out.push_back(*recs[i]);
      else result.failures.push_back({todo[i]->id, errors[i]});
    }
    return out;
  }

  // ---- helpers -----------------------------------------------------------------

  struct Grouped {
    std::string greedy;
    std::vector<std::string> samples;  // by sample index
  };

  static std::map<std::string, Grouped> group_generations(const std::vector<GenerationRecord>& gens) {
    std::map<std::string, std::map<int, std::string>> samples;
    std::map<std::string, Grouped> out;
    for (const auto& g : gens) {
      if (g.kind.is_greedy()) out[g.question_id].greedy = g.text;
      else samples[g.question_id][g.kind.sample_index()] = g.text;
    }
    for (auto& [id, by_index] : samples)
      for (auto& [j, text] : by_index) out[id].samples.push_back(text);
    return out;
  }

  static std::map<std::string, const GenerationRecord*> greedy_by_id(const std::vector<GenerationRecord>& gens) {
    std::map<std::string, const GenerationRecord*> out;
    for (const auto& g : gens)
      if (g.kind.is_greedy()) out[g.question_id] = &g;
    return out;
  }

  template <class Map>
  static auto find_or_null(const Map& m, const std::string& key) -> typename Map::mapped_type {
    auto it = m.find(key);
    return it == m.end() ? nullptr : it->second;
  }

  std::vector<QuestionRecord> load_questions() const {
    auto qs = read_records<QuestionRecord>(cfg_.questions_path());
    std::set<std::string> seen;
    for (const auto& q : qs) {
      q.validate();
      if (!seen.insert(q.id).second) throw ArgumentError("duplicate question id '" + q.id + "'");
    }
    return qs;
  }

  static std::map<std::string, QuestionRecord> index_questions(const std::vector<QuestionRecord>& qs) {
    std::map<std::string, QuestionRecord> out;
    for (const auto& q : qs) out.emplace(q.id, q);
    return out;
  }

  std::string prompt_for(const QuestionRecord& q) const { return prompts::generation(cfg_.template_text, q.question); }

  evalkit::SubsetPair load_subsets() const {
    return evalkit::decode_subset_pair(nlohmann::json::parse(read_file(out_ / "subsets.json")));
  }

  static std::vector<std::string> subset_members(const evalkit::SubsetPair& p) {
    std::set<std::string> ids;
    for (const auto* v : {&p.ce.pos, &p.ce.neg, &p.ie.pos, &p.ie.neg}) ids.insert(v->begin(), v->end());
    return {ids.begin(), ids.end()};
  }

  std::vector<std::string> probe_models() const {
    std::vector<std::string> out{cfg_.response_model};
    if (cfg_.wants(kCrossModel) && cfg_.verifier != cfg_.response_model) out.push_back(cfg_.verifier);
    return out;
  }

  static std::string feature_prefix(const std::string& model, int layer) {
    return "features/" + model + "/layer_" + std::to_string(layer);
  }

  // Layers present on disk for a model, ascending.
  std::vector<int> feature_layers(const std::string& model) const {
    std::vector<int> layers;
    const auto dir = out_ / "features" / model;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw UsageError("missing features for model '" + model + "' (run detect or extract first)");
    const std::string head = "layer_", tail = ".manifest.json";
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind(head, 0) == 0 && name.size() > head.size() + tail.size() &&
          name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
        layers.push_back(std::stoi(name.substr(head.size(), name.size() - head.size() - tail.size())));
    }
    std::sort(layers.begin(), layers.end());
    if (layers.empty()) throw UsageError("no feature matrices for model '" + model + "'");
    return layers;
  }

  static std::map<std::string, double> score_map(const fs::path& path) {
    std::map<std::string, double> out;
    for (const auto& s : read_records<DetectionScore>(path)) out[s.question_id] = s.score;
    return out;
  }

  static double lookup(const std::map<std::string, double>& m, const std::string& id, const char* what) {
    auto it = m.find(id);
    if (it == m.end()) throw IntegrityError(std::string(what) + " has no score for '" + id + "'");
    return it->second;
  }

  std::vector<std::string> detector_list(const StageOptions& opt) const {
    auto names = opt.detectors ? *opt.detectors : cfg_.detectors;
    for (const auto& d : names) check_detector_name(d);
    if (std::find(names.begin(), names.end(), kCrossModel) != names.end() && cfg_.verifier.empty())
      throw UsageError("cross_model needs a verifier model in the config");
    return names;
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += s + "\n";
    return out;
  }

  struct Entry {
    std::shared_ptr<Gateway> base;
    std::shared_ptr<CachedGateway> cache;
    Gateway* front = nullptr;
  };

  PipelineConfig cfg_;
  GatewayFactory factory_;
  fs::path out_;
  std::mutex gw_mutex_;
  std::map<std::string, Entry> gateways_;
};

// The stages behind the end-to-end run, in order.
inline std::vector<std::string> full_pipeline() {
  return {"generate", "label", "classify", "subsets", "detect", "train-probe", "fuse", "evaluate"};
}

}  // namespace sce::pipeline
