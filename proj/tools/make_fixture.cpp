// Writes the bundled 50-question mock fixture: questions.jsonl plus scripts
// for a response model (mock_m.json, which also serves grading and NLI) and
// a verifier (mock_v.json). Everything derives from a fixed seed.
//
//   make_fixture <dir>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/records.hpp"
#include "sce/core/rng.hpp"
#include "sce/core/types.hpp"
#include "sce/evalkit/labeling.hpp"
#include "sce/gateway/prompts.hpp"

namespace {

using sce::ojson;

enum class Kind { correct, self_consistent, inconsistent, refusal };

constexpr int kQuestions = 50;
constexpr int kSamples = 15;        // classification samples, seeds 1..15
constexpr int kSeBase = 1000;       // semantic-entropy samples, seeds 1001..1010
constexpr int kSeSamples = 10;
constexpr int kLayersM = 4, kDimM = 16;
constexpr int kLayersV = 3, kDimV = 12;

std::string word(sce::Rng& rng) {
  static const char* heads[] = {"Vel", "Mor", "Tan", "Sor", "Kel", "Dra", "Fen", "Lum", "Ost", "Ryn", "Cal", "Bri"};
  static const char* tails[] = {"ora", "ith", "und", "ane", "ev", "ric", "ossa", "ar", "ium", "ent", "ova", "ys"};
  std::string w = heads[rng.below(12)];
  w += tails[rng.below(12)];
  return w;
}

Kind kind_of(int i) {
  if (i < 24) return Kind::correct;
  if (i < 37) return Kind::self_consistent;
  if (i < 48) return Kind::inconsistent;
  return Kind::refusal;
}

ojson gen(const std::string& prompt, const char* mode, std::optional<int> seed, const std::string& text,
          const std::vector<double>& lps) {
  ojson e;
  e["prompt"] = prompt;
  e["mode"] = mode;
  if (seed) e["seed"] = *seed;
  e["text"] = text;
  e["token_logprobs"] = lps;
  return e;
}

std::vector<double> logprobs(sce::Rng& rng, double mean, int n) {
  std::vector<double> out;
  for (int t = 0; t < n; ++t) out.push_back(std::min(0.0, mean + 0.15 * rng.normal()));
  return out;
}

// Class mean along a model's signal direction; noise is unit normal.
std::vector<float> state(sce::Rng& rng, double shift, const std::vector<double>& dir) {
  std::vector<float> v;
  for (double d : dir) v.push_back(static_cast<float>(rng.normal() + shift * d));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixture <dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  sce::Rng rng(20240917);

  std::vector<sce::QuestionRecord> questions;
  ojson m_gen = ojson::array(), v_gen = ojson::array(), m_hidden = ojson::array(), v_hidden = ojson::array();
  ojson m_probs = ojson::array(), grades = ojson::array();
  ojson classes = ojson::object();

  // Names are unique across the fixture so prompts and NLI keys never collide.
  std::set<std::string> used;
  auto fresh = [&] {
    for (;;)
      if (auto w = word(rng) + word(rng); used.insert(w).second) return w;
  };

  // Unit signal directions per layer.
  auto direction = [&](int dim) {
    std::vector<double> d;
    double norm = 0;
    for (int i = 0; i < dim; ++i) {
      d.push_back(rng.normal());
      norm += d.back() * d.back();
    }
    for (auto& x : d) x /= std::sqrt(norm);
    return d;
  };
  std::vector<std::vector<double>> dir_m, dir_v;
  for (int l = 0; l < kLayersM; ++l) dir_m.push_back(direction(kDimM));
  for (int l = 0; l < kLayersV; ++l) dir_v.push_back(direction(kDimV));
  const double strength_m[kLayersM] = {0.4, 1.0, 2.0, 1.4};
  const double strength_v[kLayersV] = {0.6, 1.8, 1.2};

  for (int i = 0; i < kQuestions; ++i) {
    const Kind kind = kind_of(i);
    char id[8];
    std::snprintf(id, sizeof id, "q%02d", i + 1);
    const std::string place = fresh(), answer = fresh() + " " + word(rng), wrong = fresh() + " " + word(rng),
                      other = fresh() + " " + word(rng);
    sce::QuestionRecord q{id, "Which founder is credited with settling the valley of " + place + "?", {answer}};
    if (i % 7 == 3) q.reference_answers.push_back(answer.substr(0, answer.find(' ')));
    questions.push_back(q);

    const auto prompt = sce::prompts::generation(sce::prompts::kDefaultGeneration, q.question);
    const auto ctx = [&](const std::string& a) { return q.question + " " + a; };
    const auto cls = [&](const std::string& a, const std::string& c) { classes[ctx(a)] = std::string(id) + ":" + c; };
    const auto target = sce::evalkit::gold_target(q.reference_answers);

    std::string greedy;
    double lp_mean = -0.3, ptrue = 0.8;
    switch (kind) {
      case Kind::correct: greedy = answer; lp_mean = -0.15 - 0.25 * rng.uniform(); ptrue = 0.6 + 0.35 * rng.uniform(); break;
      case Kind::self_consistent: greedy = wrong; lp_mean = -0.3 - 0.3 * rng.uniform(); ptrue = 0.45 + 0.45 * rng.uniform(); break;
      case Kind::inconsistent: greedy = wrong; lp_mean = -0.7 - 0.9 * rng.uniform(); ptrue = 0.1 + 0.5 * rng.uniform(); break;
      case Kind::refusal: greedy = "I am not sure."; break;
    }
    m_gen.push_back(gen(prompt, "greedy", std::nullopt, greedy, logprobs(rng, lp_mean, 4)));
    grades.push_back({{"question", q.question}, {"target", target}, {"predicted", greedy},
                      {"grade", kind == Kind::correct ? "A" : kind == Kind::refusal ? "C" : "B"}});
    const std::string paraphrase = "It was " + greedy + ".";
    cls(greedy, "g");
    cls(paraphrase, "g");
    cls(other, "o");
    cls(answer, "a");
    m_probs.push_back({{"prompt", sce::prompts::p_true(q.question, greedy)},
                       {"probs", {{"A", ptrue}, {"B", 1.0 - ptrue}}}});

    // Classification samples: CE and correct answers stay in the greedy
    // class; IE answers diverge at a question-specific sample.
    const int diverge = kind == Kind::inconsistent ? 1 + (i * 4) % kSamples : kSamples + 1;
    for (int j = 1; j <= kSamples; ++j) {
      std::string text = j % 3 == 0 ? paraphrase : greedy;
      if (j >= diverge && (j == diverge || rng.uniform() < 0.5)) text = other;
      if (kind == Kind::refusal) text = greedy;
      m_gen.push_back(gen(prompt, "sample", j, text, logprobs(rng, lp_mean - 0.2, 4)));
    }
    // Semantic-entropy samples: spread grows from correct to IE.
    const double spread = kind == Kind::correct ? 0.1 : kind == Kind::self_consistent ? 0.2 : 0.6;
    for (int j = 1; j <= kSeSamples; ++j) {
      const double u = rng.uniform();
      const std::string text = u < spread ? (u < spread / 2 ? other : answer + " or " + other)
                                          : (j % 2 ? greedy : paraphrase);
      if (text == answer + " or " + other) cls(text, "mix");
      m_gen.push_back(gen(prompt, "sample", kSeBase + j, text, logprobs(rng, lp_mean - 0.3, 4)));
    }

    // Hidden states over (prompt, M's greedy answer). CE errors sit close to
    // correct answers for M but stand out for the verifier.
    const double z_m = kind == Kind::correct ? 1.0 : kind == Kind::self_consistent ? -0.2 : -1.0;
    const double z_v = kind == Kind::correct ? 1.0 : kind == Kind::self_consistent ? -0.9 : -0.6;
    ojson lm = ojson::object(), lv = ojson::object();
    for (int l = 0; l < kLayersM; ++l) lm[std::to_string(l)] = state(rng, z_m * strength_m[l], dir_m[l]);
    for (int l = 0; l < kLayersV; ++l) lv[std::to_string(l)] = state(rng, z_v * strength_v[l], dir_v[l]);
    m_hidden.push_back({{"prompt", prompt}, {"response", greedy}, {"layers", lm}});
    v_hidden.push_back({{"prompt", prompt}, {"response", greedy}, {"layers", lv}});

    // Verifier answers: repeats M's wrong answer on every third CE question,
    // otherwise answers correctly.
    std::string v_answer = answer;
    if (kind == Kind::self_consistent && i % 3 == 0) v_answer = paraphrase;
    if (kind == Kind::refusal) v_answer = greedy;
    v_gen.push_back(gen(prompt, "greedy", std::nullopt, v_answer, logprobs(rng, -0.3, 4)));
    if (v_answer != greedy && v_answer != answer)
      grades.push_back({{"question", q.question}, {"target", target}, {"predicted", v_answer}, {"grade", "B"}});
    else if (v_answer == answer && greedy != answer)
      grades.push_back({{"question", q.question}, {"target", target}, {"predicted", v_answer}, {"grade", "A"}});
  }

  ojson m;
  m["model_info"] = {{"name", "mock-m"}, {"n_layers", kLayersM}, {"hidden_dim", kDimM}};
  m["generate"] = m_gen;
  m["hidden_states"] = m_hidden;
  m["token_choice_prob"] = m_probs;
  m["nli_classes"] = classes;
  m["nli_default"] = "neutral";
  m["grade"] = grades;
  m["grade_default"] = "C";

  ojson v;
  v["model_info"] = {{"name", "mock-v"}, {"n_layers", kLayersV}, {"hidden_dim", kDimV}};
  v["generate"] = v_gen;
  v["hidden_states"] = v_hidden;

  std::filesystem::create_directories(dir);
  sce::write_records(dir / "questions.jsonl", questions);
  sce::write_file_atomic(dir / "mock_m.json", m.dump(1) + "\n");
  sce::write_file_atomic(dir / "mock_v.json", v.dump(1) + "\n");
  std::cout << "wrote " << questions.size() << " questions to " << dir.string() << "\n";
  return 0;
}
