// Command-line driver for the pipeline stages.
//
// Exit codes: 0 success, 1 runtime failure (including partial stage output),
// 2 usage or configuration error.

#include <csignal>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sce/core/error.hpp"
#include "sce/gateway/mock_gateway.hpp"
#include "sce/gateway/server.hpp"
#include "sce/pipeline/config.hpp"
#include "sce/pipeline/pipeline.hpp"

namespace {

using namespace sce;

struct Globals {
  std::string config = "config.yaml";
  std::optional<std::string> output_dir;
  std::optional<std::string> cache_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_inflight;
  bool force = false;
};

pipeline::PipelineConfig load(const Globals& g) {
  auto cfg = pipeline::load_config(g.config);
  if (g.output_dir) cfg.output_dir = std::filesystem::absolute(*g.output_dir).string();
  if (g.cache_dir) cfg.cache_dir = std::filesystem::absolute(*g.cache_dir).string();
  if (g.seed) cfg.apply_seed(*g.seed);
  if (g.max_inflight) cfg.max_inflight = *g.max_inflight;
  return cfg;
}

int report(const pipeline::StageResult& r) {
  for (const auto& w : r.warnings) std::cerr << r.stage << ": warning: " << w << "\n";
  if (r.skipped) {
    std::cout << r.stage << ": up to date\n";
    return 0;
  }
  if (!r.ok()) {
    std::cerr << r.stage << ": " << r.failures.size() << " item(s) failed; partial output written\n";
    for (const auto& f : r.failures) std::cerr << "  " << f.question_id << ": " << f.message << "\n";
    return 1;
  }
  std::cout << r.stage << ": done\n";
  return 0;
}

GatewayServer* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-consistent error detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Pipeline config file (YAML)");
  app.add_option("--output-dir", g.output_dir, "Override the output directory");
  app.add_option("--cache-dir", g.cache_dir, "Override the gateway cache directory");
  app.add_option("--seed", g.seed, "Override the global seed");
  app.add_option("--max-inflight", g.max_inflight, "Concurrent gateway requests")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Re-run stages even when their manifest is current");

  std::string stage;
  std::vector<std::string> detectors;
  std::optional<double> lambda;
  std::string analysis;
  auto add_stage = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&stage, name] { stage = name; });
    return sub;
  };
  add_stage("generate", "Greedy response plus k samples per question");
  add_stage("label", "Grade greedy responses against the references");
  add_stage("classify", "Split errors into self-consistent and inconsistent");
  add_stage("subsets", "Build balanced CE/IE subsets with train/val/test splits");
  add_stage("detect", "Score subset members with the selected detectors")
      ->add_option("--detector", detectors, "probability, p_true, semantic_entropy, probe, probe_verifier, cross_model");
  add_stage("extract", "Extract last-token hidden states for the probes");
  add_stage("train-probe", "Layer sweep and probe training per subset");
  add_stage("fuse", "Select the probe mixing weight on validation data")
      ->add_option("--lambda", lambda, "Force the mixing weight")
      ->check(CLI::Range(0.0, 1.0));
  add_stage("evaluate", "AUROC per detector and subset")
      ->add_option("--detector", detectors, "Detectors to evaluate");
  add_stage("analyze", "Error-frequency, k-curve or overlap tables")
      ->add_option("what", analysis, "overlap | frequency | k_curve")
      ->required()
      ->check(CLI::IsMember({"overlap", "frequency", "k_curve"}));
  add_stage("run", "Full pipeline: generate through evaluate");

  std::string script;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve-mock", "Serve a mock script over the gateway protocol");
  serve->add_option("script", script, "Mock script (JSON)")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->callback([&] { stage = "serve-mock"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (stage == "serve-mock") {
      MockGateway mock(MockScript::load(script));
      GatewayServer server(mock);
      const bool bound = port == 0 ? (port = server.bind_any_port(host)) > 0 : server.bind(host, port);
      if (!bound) throw UsageError("cannot bind " + host + ":" + std::to_string(port));
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cout << "listening on http://" << host << ":" << port << std::endl;
      server.listen();
      return 0;
    }

    pipeline::StageOptions opt;
    opt.force = g.force;
    if (!detectors.empty()) {
      for (const auto& d : detectors) pipeline::check_detector_name(d);
      opt.detectors = detectors;
    }
    auto cfg = load(g);
    if (lambda) cfg.forced_lambda = *lambda;
    pipeline::Pipeline p(std::move(cfg));

    if (stage == "analyze") return report(p.analyze(analysis, opt));
    if (stage == "run") {
      for (const auto& s : pipeline::full_pipeline()) {
        const int rc = report(p.run(s, opt));
        if (rc != 0) return rc;
      }
      return 0;
    }
    return report(p.run(stage, opt));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
