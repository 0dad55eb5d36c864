#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "sce/core/rng.hpp"
#include "sce/evalkit/analysis.hpp"
#include "sce/evalkit/auroc.hpp"
#include "sce/evalkit/csv.hpp"
#include "sce/evalkit/evaluate.hpp"
#include "sce/evalkit/labeling.hpp"
#include "sce/evalkit/subsets.hpp"
#include "sce/gateway/mock_gateway.hpp"

using namespace sce;
using namespace sce::evalkit;

namespace {

double brute_force_auroc(const std::vector<double>& s, const std::vector<int>& z) {
  double credit = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (z[i] == 1 && z[j] == 0) {
        ++pairs;
        credit += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return credit / static_cast<double>(pairs);
}

void random_case(Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& z) {
  s.clear();
  z.clear();
  for (std::size_t i = 0; i < n; ++i) {
    z.push_back(static_cast<int>(rng.below(2)));
    s.push_back(std::round(rng.normal() * 4.0) / 4.0 + 0.3 * z.back());  // coarse grid forces ties
  }
  z[0] = 0;
  z[1] = 1;
}

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_EQ(auroc(std::vector<double>{0.8, 0.7, 0.6, 0.4}, std::vector<int>{1, 0, 1, 0}), 0.75);
}

TEST(Auroc, Errors) {
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ArgumentError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ArgumentError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), ArgumentError);
  EXPECT_THROW(auroc(std::vector<double>{NAN, 0.2}, std::vector<int>{1, 0}), ArgumentError);
}

TEST(Auroc, MatchesBruteForce) {
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> z;
  for (int c = 0; c < 50; ++c) {
    random_case(rng, 2 + rng.below(300), s, z);
    EXPECT_NEAR(auroc(s, z), brute_force_auroc(s, z), 1e-12);
  }
}

TEST(Auroc, NegationIsComplement) {
  Rng rng(2);
  std::vector<double> s;
  std::vector<int> z;
  for (int c = 0; c < 50; ++c) {
    random_case(rng, 2 + rng.below(200), s, z);
    std::vector<double> neg(s.size());
    std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
    EXPECT_EQ(auroc(s, z) + auroc(neg, z), 1.0);
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<int> z;
  for (int c = 0; c < 50; ++c) {
    random_case(rng, 2 + rng.below(200), s, z);
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(v) * 3.0 + 1.0; });
    EXPECT_EQ(auroc(s, z), auroc(t, z));
  }
}

TEST(DeltaGap, Examples) {
  EXPECT_NEAR(delta_gap(0.7917, 0.9249), 0.1332, 1e-12);
  EXPECT_EQ(delta_gap(0.6, 0.6), 0.0);
  EXPECT_NEAR(delta_gap(0.9, 0.8), -0.1, 1e-15);
}

// ---- labeling ------------------------------------------------------------------

TEST(Labeling, GoldTarget) {
  EXPECT_EQ(gold_target({"Paris"}), "[\"Paris\"]");
  EXPECT_EQ(gold_target({"Malia and Sasha", "Sasha and \"Malia\""}),
            "[\"Malia and Sasha\", \"Sasha and \\\"Malia\\\"\"]");
  EXPECT_THROW(gold_target({}), ArgumentError);
}

TEST(Labeling, GradesMapToZ) {
  MockScript s;
  s.grades[{"q1?", "[\"a\"]", "a"}] = Grade::A;
  s.grades[{"q2?", "[\"b\"]", "x"}] = Grade::B;
  s.grades[{"q3?", "[\"c\", \"see\"]", "dunno"}] = Grade::C;
  MockGateway gw(s);
  const std::vector<LabelItem> items{{{"q1", "q1?", {"a"}}, "a"},
                                     {{"q2", "q2?", {"b"}}, "x"},
                                     {{"q3", "q3?", {"c", "see"}}, "dunno"}};
  for (int workers : {1, 3}) {
    const auto out = label_dataset(items, gw, workers);
    ASSERT_EQ(out.records.size(), 3u);
    EXPECT_EQ(out.records[0].z(), 1);
    EXPECT_EQ(out.records[1].z(), 0);
    EXPECT_FALSE(out.records[2].z().has_value());
    EXPECT_EQ(out.labeled_ids(), (std::vector<std::string>{"q1", "q2"}));
    EXPECT_EQ(out.not_attempted, 1);
    EXPECT_EQ(out.warnings.size(), 1u);
  }
}

TEST(Labeling, AllNotAttemptedWarns) {
  MockGateway gw(MockScript{});  // grade_default is C
  const auto out = label_dataset({{{"q1", "q?", {"a"}}, "b"}, {{"q2", "q?", {"a"}}, "c"}}, gw);
  EXPECT_TRUE(out.labeled_ids().empty());
  ASSERT_FALSE(out.warnings.empty());
  EXPECT_EQ(out.warnings.back(), "no labeled items remain after filtering");
}

TEST(Labeling, FailuresAreReportedPerItem) {
  MockScript s;
  s.grade_default = Grade::A;
  MockGateway gw(s);
  const auto out = label_dataset({{{"q1", "q?", {"a"}}, "b"}, {{"q2", "q?", {"a"}}, ""}}, gw);
  ASSERT_EQ(out.failures.size(), 1u);
  EXPECT_EQ(out.failures[0].question_id, "q2");
  EXPECT_EQ(out.records.size(), 1u);
}

// ---- subsets -------------------------------------------------------------------

namespace {

struct Population {
  std::vector<CorrectnessRecord> labels;
  std::vector<ErrorClassRecord> classes;
};

Population population(int correct, int ce, int ie, int refusals = 0) {
  Population p;
  int n = 0;
  auto add = [&](Grade g, ErrorClass c) {
    char id[16];
    std::snprintf(id, sizeof id, "q%03d", n++);
    p.labels.push_back({id, g});
    if (g != Grade::C) p.classes.push_back({id, c, 15, c == ErrorClass::inconsistent ? 2 : 1});
  };
  for (int i = 0; i < correct; ++i) add(Grade::A, ErrorClass::not_error);
  for (int i = 0; i < ce; ++i) add(Grade::B, ErrorClass::self_consistent);
  for (int i = 0; i < ie; ++i) add(Grade::B, ErrorClass::inconsistent);
  for (int i = 0; i < refusals; ++i) add(Grade::C, ErrorClass::not_error);
  return p;
}

bool sorted_unique(std::vector<std::string> v) {
  return std::is_sorted(v.begin(), v.end()) && std::adjacent_find(v.begin(), v.end()) == v.end();
}

}  // namespace

TEST(Subsets, TenFourSeven) {
  const auto p = population(10, 4, 7);
  SubsetOptions opt;
  opt.seed = 7;
  const auto pair = build_subsets(p.labels, p.classes, opt);
  EXPECT_EQ(pair.ce.neg.size(), 4u);
  EXPECT_EQ(pair.ie.neg.size(), 4u);
  EXPECT_EQ(pair.ce.pos.size(), 4u);
  EXPECT_EQ(pair.ce.pos, pair.ie.pos);
  EXPECT_EQ(pair.ce.neg, (std::vector<std::string>{"q010", "q011", "q012", "q013"}));  // smaller class whole
  EXPECT_EQ(pair, build_subsets(p.labels, p.classes, opt));
}

TEST(Subsets, MissingClassesNamed) {
  auto check = [](const Population& p, const std::string& needle) {
    try {
      build_subsets(p.labels, p.classes);
      FAIL() << needle;
    } catch (const ArgumentError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  check(population(10, 0, 3), "self-consistent");
  check(population(10, 3, 0), "inconsistent");
  check(population(2, 3, 4), "correct");
}

TEST(Subsets, RefusalsNeverSelected) {
  const auto p = population(6, 3, 3, 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SubsetOptions opt;
    opt.seed = seed;
    const auto pair = build_subsets(p.labels, p.classes, opt);
    for (const auto* v : {&pair.ce.pos, &pair.ce.neg, &pair.ie.neg})
      for (const auto& id : *v) EXPECT_LT(id, "q012");
  }
}

TEST(Subsets, AllPositives) {
  const auto p = population(9, 3, 5);
  SubsetOptions opt;
  opt.balance = Balance::all_positives;
  const auto pair = build_subsets(p.labels, p.classes, opt);
  EXPECT_EQ(pair.ce.pos.size(), 9u);
  EXPECT_EQ(pair.ie.neg.size(), 3u);
}

TEST(Subsets, InvariantsOverRandomPopulations) {
  Rng rng(99);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int ce = 3 + static_cast<int>(rng.below(20)), ie = 3 + static_cast<int>(rng.below(20));
    const int correct = std::min(ce, ie) + static_cast<int>(rng.below(30));
    const auto p = population(correct, ce, ie, static_cast<int>(rng.below(4)));
    SubsetOptions opt;
    opt.seed = seed;
    opt.make_splits = true;
    const auto pair = build_subsets(p.labels, p.classes, opt);
    const std::size_t n = static_cast<std::size_t>(std::min(ce, ie));
    EXPECT_EQ(pair.ce.neg.size(), n);
    EXPECT_EQ(pair.ie.neg.size(), n);
    EXPECT_EQ(pair.ce.pos, pair.ie.pos);
    EXPECT_EQ(pair.ce.pos.size(), n);
    EXPECT_TRUE(sorted_unique(pair.ce.pos) && sorted_unique(pair.ce.neg) && sorted_unique(pair.ie.neg));
    for (Subset s : {Subset::CE, Subset::IE}) {
      std::vector<std::string> all;
      for (auto part : {SplitPart::train, SplitPart::val, SplitPart::test}) {
        const auto v = split_view(pair, s, part);
        EXPECT_GE(std::count(v.z.begin(), v.z.end(), 1), 1);
        EXPECT_GE(std::count(v.z.begin(), v.z.end(), 0), 1);
        all.insert(all.end(), v.ids.begin(), v.ids.end());
      }
      std::sort(all.begin(), all.end());
      auto expected = pair.side(s).pos;
      expected.insert(expected.end(), pair.side(s).neg.begin(), pair.side(s).neg.end());
      std::sort(expected.begin(), expected.end());
      EXPECT_EQ(all, expected);  // the splits partition the subset
    }
  }
}

TEST(Subsets, JsonRoundTrip) {
  const auto p = population(12, 5, 6);
  SubsetOptions opt;
  opt.seed = 3;
  opt.make_splits = true;
  const auto pair = build_subsets(p.labels, p.classes, opt);
  const auto text = encode(pair).dump();
  EXPECT_EQ(decode_subset_pair(nlohmann::json::parse(text)), pair);
  auto broken = nlohmann::json::parse(text);
  broken["ie"]["pos"] = nlohmann::json::array();
  EXPECT_THROW(decode_subset_pair(broken), ParseError);
}

TEST(Subsets, TooSmallForSplits) {
  const auto p = population(5, 2, 4);
  SubsetOptions opt;
  opt.make_splits = true;
  EXPECT_THROW(build_subsets(p.labels, p.classes, opt), ArgumentError);
}

// ---- evaluate ------------------------------------------------------------------

TEST(Evaluate, RowsPerDetectorAndSubset) {
  const auto p = population(12, 6, 6);
  SubsetOptions opt;
  opt.make_splits = true;
  const auto pair = build_subsets(p.labels, p.classes, opt);
  std::vector<DetectionScore> scores;
  for (const auto& l : p.labels) {
    const double truth = l.grade == Grade::A ? 1.0 : 0.0;
    scores.push_back({l.question_id, "oracle", truth});
    scores.push_back({l.question_id, "constant", 0.5});
  }
  const auto rows = evaluate(scores, pair);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].detector, "constant");
  EXPECT_EQ(rows[0].subset, Subset::CE);
  EXPECT_EQ(rows[1].subset, Subset::IE);
  EXPECT_EQ(rows[0].auroc, 0.5);
  EXPECT_EQ(rows[2].auroc, 1.0);
  EXPECT_EQ(rows[2].delta, 0.0);
  const auto test = split_view(pair, Subset::CE, SplitPart::test);
  EXPECT_EQ(rows[2].n_pos + rows[2].n_neg, static_cast<int>(test.ids.size()));
  const auto csv = eval_table(rows).str();
  EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "detector,subset,auroc,n_pos,n_neg,delta");
}

TEST(Evaluate, MissingScoreIsAnError) {
  const auto p = population(12, 6, 6);
  SubsetOptions opt;
  opt.make_splits = true;
  const auto pair = build_subsets(p.labels, p.classes, opt);
  std::vector<DetectionScore> scores{{"q000", "d", 0.1}};
  EXPECT_THROW(evaluate(scores, pair), ArgumentError);
  scores.push_back({"q000", "d", 0.2});
  EXPECT_THROW(evaluate(scores, pair), ArgumentError);
}

// ---- csv and analysis ----------------------------------------------------------

TEST(Csv, QuotingAndNumbers) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
  CsvTable t({"a", "b"});
  t.add({"x,y", "1"});
  EXPECT_EQ(t.str(), "a,b\r\n\"x,y\",1\r\n");
  EXPECT_THROW(t.add({"1"}), ArgumentError);
}

TEST(Frequency, CountsPerModel) {
  std::map<std::string, std::vector<ErrorClassRecord>> by_model;
  by_model["zeta"] = {{"a", ErrorClass::self_consistent, 15, 1},
                      {"b", ErrorClass::inconsistent, 15, 3},
                      {"c", ErrorClass::not_error, 15, 1}};
  by_model["alpha"] = {{"a", ErrorClass::inconsistent, 15, 2}, {"b", ErrorClass::inconsistent, 15, 2}};
  const auto rows = frequency_report(by_model);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (FrequencyRow{"alpha", 0, 2}));
  EXPECT_EQ(rows[1], (FrequencyRow{"zeta", 1, 1}));
  EXPECT_EQ(frequency_table(rows).str(),
            "model,n_self_consistent,n_inconsistent\r\nalpha,0,2\r\nzeta,1,1\r\n");
  EXPECT_TRUE(frequency_report({}).empty());
}

TEST(KCurve, SumsPerK) {
  const auto curve = k_curve({{1, 1, 0}, {1, 0, 0}, {1, 1, 1}});
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0], (KCurvePoint{1, 3, 3}));
  EXPECT_EQ(curve[2], (KCurvePoint{3, 1, 3}));
  EXPECT_THROW(k_curve({{1}, {1, 0}}), ArgumentError);
}

namespace {

// Ten questions; M's self-consistent error on each is "wrong<i>".
std::vector<OverlapItem> overlap_items() {
  std::vector<OverlapItem> items;
  for (int i = 0; i < 10; ++i) {
    const auto id = std::to_string(i);
    items.push_back({{"q" + id, "Question " + id + "?", {"right" + id}}, "prompt" + id, "wrong" + id});
  }
  return items;
}

MockGateway overlap_judge() {
  MockScript s;
  for (const auto& it : overlap_items()) {
    const auto target = gold_target(it.question.reference_answers);
    const auto i = it.question.id.substr(1);
    s.grades[{it.question.question, target, "wrong" + i}] = Grade::B;
    s.grades[{it.question.question, target, "right" + i}] = Grade::A;
  }
  return MockGateway(s);
}

MockGateway verifier_answering(const std::string& prefix) {
  MockScript s;
  s.info.name = "verifier";
  for (int i = 0; i < 10; ++i) s.greedy["prompt" + std::to_string(i)] = {prefix + std::to_string(i), {-0.1}};
  return MockGateway(s);
}

}  // namespace

TEST(Overlap, IdenticalVerifierOverlapsEverywhere) {
  auto judge = overlap_judge();
  auto verifier = verifier_answering("wrong");
  OverlapOptions opt;
  opt.workers = 4;
  const auto r = overlap_analysis(overlap_items(), verifier, judge, opt);
  EXPECT_EQ(r.verifier_name, "verifier");
  EXPECT_EQ(r.total_ce, 10);
  EXPECT_EQ(r.overlapping, 10);
  EXPECT_EQ(r.percent, 100.0);
}

TEST(Overlap, CorrectVerifierNeverOverlaps) {
  auto judge = overlap_judge();
  auto verifier = verifier_answering("right");
  const auto r = overlap_analysis(overlap_items(), verifier, judge);
  EXPECT_EQ(r.total_ce, 10);
  EXPECT_EQ(r.overlapping, 0);
  EXPECT_EQ(r.percent, 0.0);
  EXPECT_EQ(overlap_table(r).str(), "verifier,total_ce,overlapping,percent\r\nverifier,10,0,0\r\n");
}
