#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <regex>

#include <gtest/gtest.h>

#include "sce/core/digest.hpp"
#include "sce/core/records.hpp"
#include "sce/gateway/http_gateway.hpp"
#include "sce/gateway/mock_gateway.hpp"
#include "sce/gateway/prompts.hpp"
#include "sce/pipeline/config.hpp"
#include "sce/pipeline/pipeline.hpp"
#include "test_util.hpp"

extern char** environ;

using namespace sce;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr together
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run cli(const std::string& args, const fs::path& cwd) {
  const auto log = cwd / ".cli_output";
  const std::string cmd = "cd " + quote(cwd.string()) + " && SOURCE_DATE_EPOCH=1700000000 " + quote(SCE_CLI_PATH) +
                          " " + args + " > " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(log);
  fs::remove(log);
  return r;
}

const char* kQuestions =
    "{\"id\":\"q1\",\"question\":\"Capital of France?\",\"reference_answers\":[\"Paris\"]}\n"
    "{\"id\":\"q2\",\"question\":\"Capital of Spain?\",\"reference_answers\":[\"Madrid\"]}\n"
    "{\"id\":\"q3\",\"question\":\"Capital of Italy?\",\"reference_answers\":[\"Rome\"]}\n";

std::string prompt(const std::string& q) { return prompts::generation(prompts::kDefaultGeneration, q); }

nlohmann::json small_script() {
  nlohmann::json gen = nlohmann::json::array();
  for (auto [q, a] : {std::pair{"Capital of France?", "Paris"}, {"Capital of Spain?", "Barcelona"},
                      {"Capital of Italy?", "Rome"}})
    gen.push_back({{"prompt", prompt(q)}, {"mode", "greedy"}, {"text", a}, {"token_logprobs", {-0.1, -0.2}}});
  return {{"model_info", {{"name", "small"}, {"n_layers", 2}, {"hidden_dim", 4}}}, {"generate", gen}};
}

// A three-question project with k = 2 and only the generation-side detectors.
void write_project(const fs::path& dir, const nlohmann::json& script = small_script()) {
  write_file_atomic(dir / "questions.jsonl", kQuestions);
  write_file_atomic(dir / "mock.json", script.dump(1));
  write_file_atomic(dir / "config.yaml",
                    "models:\n"
                    "  - name: m\n"
                    "    gateway_url: mock://mock.json\n"
                    "dataset:\n"
                    "  questions: questions.jsonl\n"
                    "generation:\n"
                    "  k: 2\n"
                    "detectors:\n"
                    "  enabled: [probability, p_true]\n");
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_sha256(e.path());
  return out;
}

}  // namespace

TEST(Cli, GenerateWritesGreedyPlusSamples) {
  test::TempDir tmp;
  write_project(tmp.path());
  const auto r = cli("generate", tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto gens = read_records<GenerationRecord>(tmp.path() / "out/generations.jsonl");
  ASSERT_EQ(gens.size(), 9u);
  EXPECT_TRUE(gens[0].kind.is_greedy());
  EXPECT_EQ(gens[1].kind.sample_index(), 1);
  EXPECT_EQ(gens[2].params.seed, 2);
  EXPECT_DOUBLE_EQ(gens[2].params.temperature, 0.5);
  EXPECT_EQ(gens[0].model_name, "small");
  EXPECT_TRUE(fs::exists(tmp.path() / "out/manifests/generate.json"));
}

TEST(Cli, MissingQuestionsFileIsUsageError) {
  test::TempDir tmp;
  write_project(tmp.path());
  fs::remove(tmp.path() / "questions.jsonl");
  const auto r = cli("generate", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("questions.jsonl"), std::string::npos) << r.out;
}

TEST(Cli, MissingConfigIsUsageError) {
  test::TempDir tmp;
  const auto r = cli("--config nowhere.yaml generate", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("nowhere.yaml"), std::string::npos) << r.out;
}

TEST(Cli, UnknownDetectorIsUsageError) {
  test::TempDir tmp;
  write_project(tmp.path());
  const auto r = cli("detect --detector bogus", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bogus"), std::string::npos) << r.out;
}

TEST(Cli, BadArgumentsAreUsageErrors) {
  test::TempDir tmp;
  write_project(tmp.path());
  EXPECT_EQ(cli("frobnicate", tmp.path()).code, 2);
  EXPECT_EQ(cli("fuse --lambda 1.5", tmp.path()).code, 2);
  EXPECT_EQ(cli("analyze everything", tmp.path()).code, 2);
  EXPECT_EQ(cli("--help", tmp.path()).code, 0);
}

TEST(Cli, InvalidConfigIsUsageError) {
  test::TempDir tmp;
  write_project(tmp.path());
  write_file_atomic(tmp.path() / "bad.yaml", "models: [\n");
  EXPECT_EQ(cli("--config bad.yaml generate", tmp.path()).code, 2);
  write_file_atomic(tmp.path() / "bad.yaml",
                    "models:\n  - name: m\n    gateway_url: mock://mock.json\ndataset:\n  questions: questions.jsonl\n"
                    "detectors:\n  enabled: [cross_model]\nverifier: m\n");
  const auto r = cli("--config bad.yaml generate", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("verifier"), std::string::npos) << r.out;
}

TEST(Cli, RerunIsNoOp) {
  test::TempDir tmp;
  write_project(tmp.path());
  ASSERT_EQ(cli("generate", tmp.path()).code, 0);
  const auto before = tree(tmp.path() / "out");
  const auto r = cli("generate", tmp.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("up to date"), std::string::npos) << r.out;
  EXPECT_EQ(tree(tmp.path() / "out"), before);
  EXPECT_EQ(cli("--force generate", tmp.path()).code, 0);
  EXPECT_EQ(tree(tmp.path() / "out"), before);
}

TEST(Cli, ConfigChangeInvalidatesStage) {
  test::TempDir tmp;
  write_project(tmp.path());
  ASSERT_EQ(cli("generate", tmp.path()).code, 0);
  const auto r = cli("--seed 5 generate", tmp.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.find("up to date"), std::string::npos) << r.out;
  const auto gens = read_records<GenerationRecord>(tmp.path() / "out/generations.jsonl");
  EXPECT_EQ(gens[1].params.seed, 6);
}

TEST(Cli, EditedUpstreamOutputIsStale) {
  test::TempDir tmp;
  write_project(tmp.path());
  ASSERT_EQ(cli("generate", tmp.path()).code, 0);
  auto text = read_file(tmp.path() / "out/generations.jsonl");
  text.replace(text.find("Paris"), 5, "Lille");
  write_file_atomic(tmp.path() / "out/generations.jsonl", text);
  const auto r = cli("label", tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("generations.jsonl"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("stale"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(tmp.path() / "out/labels.jsonl"));
}

TEST(Cli, MissingUpstreamOutputIsUsageError) {
  test::TempDir tmp;
  write_project(tmp.path());
  const auto r = cli("classify", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("generations.jsonl"), std::string::npos) << r.out;
}

TEST(Cli, GatewayFailuresGivePartialOutput) {
  test::TempDir tmp;
  auto script = small_script();
  script["generate"][1]["token_logprobs"] = {0.3};  // protocol violation for q2
  write_project(tmp.path(), script);
  const auto r = cli("generate", tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("q2"), std::string::npos) << r.out;
  const auto gens = read_records<GenerationRecord>(tmp.path() / "out/generations.jsonl");
  EXPECT_EQ(gens.size(), 6u);
  const auto failures = read_file(tmp.path() / "out/failures/generate.jsonl");
  EXPECT_NE(failures.find("\"question_id\":\"q2\""), std::string::npos);
  EXPECT_FALSE(fs::exists(tmp.path() / "out/manifests/generate.json"));

  write_project(tmp.path());  // fixed script: the stage re-runs and cleans up
  EXPECT_EQ(cli("generate", tmp.path()).code, 0);
  EXPECT_FALSE(fs::exists(tmp.path() / "out/failures/generate.jsonl"));
}

TEST(Cli, OutputDirOverride) {
  test::TempDir tmp;
  write_project(tmp.path());
  ASSERT_EQ(cli("--output-dir elsewhere generate", tmp.path()).code, 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "elsewhere/generations.jsonl"));
  EXPECT_FALSE(fs::exists(tmp.path() / "out"));
}

// ---- in-process pipeline with an observable gateway ------------------------------

TEST(Pipeline, CachedRerunMakesNoGatewayCalls) {
  test::TempDir tmp;
  write_project(tmp.path());
  auto mock = std::make_shared<MockGateway>(MockScript::from_json(small_script()));
  pipeline::GatewayFactory factory = [mock](const pipeline::ModelSpec&, const pipeline::PipelineConfig&) {
    return std::static_pointer_cast<Gateway>(mock);
  };
  auto cfg = pipeline::load_config(tmp.path() / "config.yaml");
  cfg.cache_dir = "cache";
  {
    pipeline::Pipeline p(cfg, factory);
    ASSERT_TRUE(p.run("generate").ok());
  }
  EXPECT_GT(mock->calls("generate"), 0);
  const auto first = read_file(tmp.path() / "out/generations.jsonl");
  mock->reset_calls();
  pipeline::Pipeline p(cfg, factory);
  pipeline::StageOptions force;
  force.force = true;
  ASSERT_TRUE(p.run("generate", force).ok());
  EXPECT_EQ(mock->total_calls(), 0);
  EXPECT_EQ(read_file(tmp.path() / "out/generations.jsonl"), first);
}

TEST(Pipeline, ConfigHashIgnoresLocations) {
  test::TempDir tmp;
  write_project(tmp.path());
  auto a = pipeline::load_config(tmp.path() / "config.yaml");
  auto b = a;
  b.output_dir = "other";
  b.cache_dir = "c";
  b.max_inflight = 1;
  EXPECT_EQ(a.hash(), b.hash());
  b.sampling.k = 3;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Pipeline, DefaultConfigCarriesReferenceSettings) {
  const auto cfg = pipeline::load_config(test::source_dir() / "configs/default.yaml");
  EXPECT_EQ(cfg.sampling.k, 15);
  EXPECT_DOUBLE_EQ(cfg.sampling.sample.temperature, 0.5);
  EXPECT_EQ(cfg.detector.se_samples, 10);
  EXPECT_DOUBLE_EQ(cfg.detector.se_temperature, 0.5);
  EXPECT_EQ(cfg.train.hidden, (std::vector<int>{256, 128, 64}));
  EXPECT_EQ(cfg.lambda_grid.size(), 21u);
  EXPECT_EQ(cfg.subsets.balance, evalkit::Balance::one_to_one);
  EXPECT_EQ(cfg.verifier, "verifier");
}

// ---- bundled fixture -------------------------------------------------------------

namespace {

fs::path fixture() { return test::source_dir() / "fixtures/mock50"; }

// Copies the fixture inputs (not its goldens) into dir.
void copy_fixture(const fs::path& dir) {
  for (const char* f : {"config.yaml", "questions.jsonl", "mock_m.json", "mock_v.json"})
    fs::copy_file(fixture() / f, dir / f);
}

}  // namespace

TEST(Fixture, EvaluateOnGoldenScoresMatchesGoldenCsv) {
  test::TempDir tmp;
  copy_fixture(tmp.path());
  fs::copy(fixture() / "golden", tmp.path() / "out", fs::copy_options::recursive);
  fs::remove(tmp.path() / "out/eval_results.csv");
  fs::remove(tmp.path() / "out/eval_results.jsonl");
  const auto r = cli("evaluate", tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_file(tmp.path() / "out/eval_results.csv"), read_file(fixture() / "golden/eval_results.csv"));
  EXPECT_EQ(read_file(tmp.path() / "out/eval_results.jsonl"), read_file(fixture() / "golden/eval_results.jsonl"));
  const auto rows = read_records<EvalResult>(tmp.path() / "out/eval_results.jsonl");
  EXPECT_EQ(rows.size(), 12u);  // six detectors x two subsets
}

TEST(Fixture, Analyses) {
  test::TempDir tmp;
  copy_fixture(tmp.path());
  fs::copy(fixture() / "golden", tmp.path() / "out", fs::copy_options::recursive);

  ASSERT_EQ(cli("analyze frequency", tmp.path()).code, 0);
  const auto freq = read_file(tmp.path() / "out/analysis/frequency.csv");
  EXPECT_EQ(freq.substr(0, freq.find("\r\n")), "model,n_self_consistent,n_inconsistent");
  EXPECT_NE(freq.find("\r\nm,13,11\r\n"), std::string::npos) << freq;
  EXPECT_NE(freq.find("\r\nv,"), std::string::npos) << freq;

  ASSERT_EQ(cli("analyze k_curve", tmp.path()).code, 0);
  const auto curve = read_file(tmp.path() / "out/analysis/k_curve.csv");
  std::regex row("m,(\\d+),(\\d+),24,");
  int prev = 1 << 30, rows = 0;
  for (auto it = std::sregex_iterator(curve.begin(), curve.end(), row); it != std::sregex_iterator(); ++it) {
    const int n = std::stoi((*it)[2]);
    EXPECT_LE(n, prev);
    prev = n;
    ++rows;
  }
  EXPECT_EQ(rows, 15);
  EXPECT_EQ(prev, 13);  // at k = 15 exactly the self-consistent errors remain

  ASSERT_EQ(cli("analyze overlap", tmp.path()).code, 0);
  const auto overlap = read_file(tmp.path() / "out/analysis/overlap.csv");
  EXPECT_EQ(overlap, "verifier,total_ce,overlapping,percent\r\nmock-v,13,5,38.46153846153846\r\n");
}

TEST(Fixture, ServeMockSpeaksTheProtocol) {
  int pipe_fd[2];
  ASSERT_EQ(pipe(pipe_fd), 0);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, pipe_fd[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, pipe_fd[0]);
  const std::string script = (fixture() / "mock_m.json").string();
  std::vector<std::string> args{SCE_CLI_PATH, "serve-mock", script, "--port", "0"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  ASSERT_EQ(posix_spawn(&pid, SCE_CLI_PATH, &actions, nullptr, argv.data(), environ), 0);
  posix_spawn_file_actions_destroy(&actions);
  close(pipe_fd[1]);

  std::string line;
  char c;
  while (read(pipe_fd[0], &c, 1) == 1 && c != '\n') line += c;
  close(pipe_fd[0]);
  const auto at = line.find("http://");
  ASSERT_NE(at, std::string::npos) << line;

  HttpGatewayOptions opt;
  opt.base_url = line.substr(at);
  HttpGateway gw(opt);
  EXPECT_EQ(gw.model_info().name, "mock-m");
  EXPECT_EQ(gw.model_info().n_layers, 4);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
