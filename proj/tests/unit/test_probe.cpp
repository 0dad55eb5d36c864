#include <cmath>

#include <gtest/gtest.h>

#include "sce/core/rng.hpp"
#include "sce/evalkit/auroc.hpp"
#include "sce/gateway/mock_gateway.hpp"
#include "sce/probe/features.hpp"
#include "sce/probe/fusion.hpp"
#include "sce/probe/io.hpp"
#include "sce/probe/mlp.hpp"
#include "sce/probe/train.hpp"
#include "test_util.hpp"

using namespace sce;
using namespace sce::probe;

namespace {

// Straightforward forward pass written against the raw layer storage.
long double reference_forward(const MlpParams& p, const std::vector<long double>& x) {
  std::vector<long double> a = x;
  const auto& layers = p.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<long double> next(static_cast<std::size_t>(layers[l].out));
    for (int o = 0; o < layers[l].out; ++o) {
      long double acc = layers[l].bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < layers[l].in; ++i)
        acc += static_cast<long double>(layers[l].weight[static_cast<std::size_t>(o * layers[l].in + i)]) *
               a[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = (l + 1 < layers.size() && acc < 0) ? 0 : acc;
    }
    a = std::move(next);
  }
  return 1.0L / (1.0L + std::exp(-a[0]));
}

Samples blobs(Rng& rng, int n, int dim, double separation, bool shuffle_labels = false) {
  Samples s;
  s.dim = dim;
  std::vector<double> row(static_cast<std::size_t>(dim));
  for (int i = 0; i < n; ++i) {
    const int z = i % 2;
    for (int d = 0; d < dim; ++d) row[static_cast<std::size_t>(d)] = rng.normal() + (d == 0 ? z * separation : 0.0);
    s.add(row, z);
  }
  if (shuffle_labels) rng.shuffle(std::span<int>(s.z));
  return s;
}

}  // namespace

TEST(Mlp, ZeroNetGivesHalf) {
  const auto p = MlpParams::zeros(probe_dims(3));
  EXPECT_EQ(p.forward(std::span<const double>(std::vector<double>{1, -2, 3})), 0.5);
  EXPECT_EQ(p.dims(), (std::vector<int>{3, 256, 128, 64, 1}));
}

TEST(Mlp, ForwardMatchesReference) {
  const auto p = MlpParams::init({2, 256, 128, 64, 1}, 42);
  for (const auto& x : {std::vector<double>{1, 0}, {0.3, -2.5}, {-1, 4}}) {
    const auto ref = reference_forward(p, {x[0], x[1]});
    EXPECT_NEAR(mlp_forward(p, std::span<const double>(x)), static_cast<double>(ref), 1e-6);
  }
}

TEST(Mlp, DimensionMismatch) {
  const auto p = MlpParams::init({2, 4, 1}, 1);
  EXPECT_THROW(p.forward(std::span<const double>(std::vector<double>{1, 2, 3})), ArgumentError);
  EXPECT_THROW(MlpParams::zeros({2, 4, 2}), ArgumentError);
}

TEST(Mlp, InitIsSeededAndBounded) {
  const auto a = MlpParams::init({4, 8, 1}, 5), b = MlpParams::init({4, 8, 1}, 5), c = MlpParams::init({4, 8, 1}, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (float w : a.layers()[0].weight) EXPECT_LE(std::abs(w), 0.5f);
}

TEST(GradCheck, RandomNetWithinBound) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = MlpParams::init({3, 256, 128, 64, 1}, seed);
    Rng rng(seed + 100);
    std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
    const auto r = grad_check(p, std::span<const double>(x), static_cast<int>(seed % 2));
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.checked, p.parameter_count() * 9 / 10);
  }
}

TEST(GradCheck, OutputBiasClosedForm) {
  const auto p = BasicMlp<double>::zeros({3, 256, 128, 64, 1});
  const std::vector<double> x(3, 0.0);
  for (int z : {0, 1}) {
    auto g = Gradients::like(p);
    accumulate_gradient(p, std::span<const double>(x), z, g);
    EXPECT_DOUBLE_EQ(g.bias.back().at(0), sigmoid(0.0) - z);
  }
}

TEST(Train, SeparableBlobs) {
  Rng rng(11);
  const auto data = blobs(rng, 200, 2, 8.0);
  Samples train{2, {}, {}}, val{2, {}, {}};
  for (std::size_t i = 0; i < data.rows(); ++i) (i < 100 ? train : val).add(data.row(i), data.z[i]);
  TrainConfig cfg;
  const auto r = mlp_train(train, val, cfg);
  EXPECT_GE(r.report.best_val_auroc, 0.99);
  EXPECT_EQ(r.report.per_epoch.size(), 100u);
  EXPECT_GE(r.report.best_epoch, 1);
}

TEST(Train, ShuffledLabelsNearChance) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const auto train = blobs(rng, 200, 4, 3.0, true);
    const auto val = blobs(rng, 600, 4, 3.0, true);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.max_epochs = 30;
    const auto r = mlp_train(train, val, cfg);
    EXPECT_GE(r.report.best_val_auroc, 0.35) << "seed " << seed;
    EXPECT_LE(r.report.best_val_auroc, 0.65) << "seed " << seed;
  }
}

TEST(Train, CheckpointReproducesBestAuroc) {
  Rng rng(3);
  const auto train = blobs(rng, 120, 5, 1.0), val = blobs(rng, 80, 5, 1.0);
  TrainConfig cfg;
  cfg.max_epochs = 20;
  const auto r = mlp_train(train, val, cfg);
  EXPECT_EQ(validation_auroc(r.probe(), val), r.report.best_val_auroc);
  EXPECT_EQ(r.report.per_epoch.at(static_cast<std::size_t>(r.report.best_epoch - 1)).val_auroc,
            r.report.best_val_auroc);
}

TEST(Train, DeterministicForSeed) {
  Rng rng(4);
  const auto train = blobs(rng, 60, 3, 1.0), val = blobs(rng, 40, 3, 1.0);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  EXPECT_EQ(mlp_train(train, val, cfg).params, mlp_train(train, val, cfg).params);
  auto other = cfg;
  other.seed = 1;
  EXPECT_NE(mlp_train(train, val, cfg).params, mlp_train(train, val, other).params);
}

TEST(Train, SingleClassSplitRejected) {
  Samples one{1, {1, 2}, {1, 1}}, both{1, {1, 2}, {0, 1}};
  try {
    mlp_train(one, both, TrainConfig{});
    FAIL();
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("both classes"), std::string::npos);
  }
  EXPECT_THROW(mlp_train(both, one, TrainConfig{}), ArgumentError);
}

TEST(Train, DivergenceNamesEpoch) {
  Rng rng(5);
  const auto train = blobs(rng, 40, 2, 1.0), val = blobs(rng, 40, 2, 1.0);
  TrainConfig cfg;
  cfg.learning_rate = 1e200;
  cfg.standardize = false;
  try {
    mlp_train(train, val, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch " + std::to_string(e.epoch())), std::string::npos);
  }
}

TEST(Standardizer, UsesTrainingStatistics) {
  Samples s{2, {1, 5, 3, 5}, {0, 1}};
  const auto st = Standardizer::fit(s);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.stddev[1], 1.0);  // constant column
  const auto v = st.apply(std::span<const double>(std::vector<double>{2, 7}));
  EXPECT_DOUBLE_EQ(v[0], 0.0);
  EXPECT_DOUBLE_EQ(v[1], 2.0);
}

namespace {

// Three layers of 4-d features; only `signal_layer` separates the classes.
std::vector<HiddenStateMatrix> planted(int signal_layer, bool identical) {
  Rng rng(77);
  std::vector<HiddenStateMatrix> out;
  std::vector<float> shared;
  for (int l = 0; l < 3; ++l) {
    HiddenStateMatrix m{"m", l, 4, {}, {}};
    for (int i = 0; i < 80; ++i) {
      m.ids.push_back("q" + std::to_string(i));
      for (int d = 0; d < 4; ++d) {
        const double shift = (l == signal_layer && d == 0) ? 3.0 * (i % 2) : 0.0;
        m.data.push_back(static_cast<float>(rng.normal() + shift));
      }
    }
    if (identical) {
      if (l == 0) shared = m.data;
      m.data = shared;
    }
    out.push_back(m);
  }
  return out;
}

LabeledIds ids_range(int lo, int hi) {
  LabeledIds out;
  for (int i = lo; i < hi; ++i) {
    out.ids.push_back("q" + std::to_string(i));
    out.z.push_back(i % 2);
  }
  return out;
}

TrainConfig quick() {
  TrainConfig cfg;
  cfg.max_epochs = 15;
  return cfg;
}

}  // namespace

TEST(Sweep, FindsPlantedLayer) {
  const auto r = sweep_layers(planted(1, false), ids_range(0, 50), ids_range(50, 80), quick());
  EXPECT_EQ(r.best_layer, 1);
  EXPECT_EQ(r.layers, (std::vector<int>{0, 1, 2}));
  EXPECT_GT(r.val_auroc[1], r.val_auroc[0]);
  EXPECT_GT(r.val_auroc[1], r.val_auroc[2]);
}

TEST(Sweep, TiesGoToLowestLayer) {
  const auto r = sweep_layers(planted(-1, true), ids_range(0, 50), ids_range(50, 80), quick());
  EXPECT_EQ(r.best_layer, 0);
  EXPECT_EQ(r.val_auroc[0], r.val_auroc[2]);
}

TEST(Sweep, MismatchedIdsRejected) {
  auto m = planted(1, false);
  m[2].ids[0] = "other";
  EXPECT_THROW(sweep_layers(m, ids_range(0, 50), ids_range(50, 80), quick()), ArgumentError);
}

TEST(Sweep, MissingIdRejected) {
  auto m = planted(1, false);
  auto train = ids_range(0, 50);
  train.ids[3] = "absent";
  EXPECT_THROW(sweep_layers(m, train, ids_range(50, 80), quick()), ArgumentError);
}

TEST(Fusion, Examples) {
  EXPECT_EQ(fuse(0.6, 0.9, 0.0), 0.6);
  EXPECT_EQ(fuse(0.6, 0.9, 1.0), 0.9);
  EXPECT_NEAR(fuse(0.6, 0.9, 0.5), 0.75, 1e-15);
  for (double l : default_lambda_grid()) EXPECT_DOUBLE_EQ(fuse(0.4, 0.4, l), 0.4);
  EXPECT_THROW(fuse(0.1, 0.2, 1.5), ArgumentError);
  EXPECT_THROW(fuse(0.1, 0.2, -0.01), ArgumentError);
}

TEST(Fusion, DefaultGrid) {
  const auto g = default_lambda_grid();
  ASSERT_EQ(g.size(), 21u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_DOUBLE_EQ(g[3], 0.15);
  EXPECT_NO_THROW(validate_lambda_grid(g));
  EXPECT_THROW(validate_lambda_grid(std::vector<double>{0.5, 0.2}), ArgumentError);
}

TEST(Fusion, SelectLambdaThreeItems) {
  const std::vector<double> s_m{0.6, 0.7, 0.8}, s_v{0.9, 0.2, 0.5};
  const std::vector<int> z{1, 0, 1};
  const auto grid = default_lambda_grid();
  const auto curve = lambda_curve(s_m, s_v, z, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(curve[i] == 1.0, grid[i] > 0.125) << grid[i];
  const auto cfg = select_lambda(s_m, s_v, z, grid);
  EXPECT_DOUBLE_EQ(cfg.selected_lambda, 0.15);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Fusion, PerfectResponseProbeKeepsZero) {
  const std::vector<double> s_m{0.9, 0.1, 0.8, 0.2}, s_v{0.9, 0.2, 0.7, 0.1};
  const std::vector<int> z{1, 0, 1, 0};
  EXPECT_EQ(select_lambda(s_m, s_v, z, default_lambda_grid()).selected_lambda, 0.0);
}

TEST(Fusion, SingleClassValidationRejected) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> z{1, 1};
  EXPECT_THROW(select_lambda(s, s, z, default_lambda_grid()), ArgumentError);
}

TEST(ProbeIo, RoundTrip) {
  test::TempDir tmp;
  Probe p{MlpParams::init({3, 8, 4, 1}, 9), {{0.5, 1, 2}, {1, 2, 3}}};
  const ProbeInfo info{"m", 7, 9, 12, 0.875};
  save_probe(tmp.path() / "m", p, info);
  EXPECT_EQ(std::filesystem::file_size(tmp.path() / "m.f32le"), p.params.parameter_count() * 4);
  const auto back = load_probe(tmp.path() / "m");
  EXPECT_EQ(back.probe, p);
  EXPECT_EQ(back.info, info);
  const auto j = nlohmann::json::parse(read_file(tmp.path() / "m.manifest.json"));
  EXPECT_EQ(j.at("dims"), nlohmann::json({3, 8, 4, 1}));
  EXPECT_EQ(j.at("parameter_count"), 3 * 8 + 8 + 8 * 4 + 4 + 4 + 1);
}

TEST(ProbeIo, TruncatedWeightsRejected) {
  test::TempDir tmp;
  Probe p{MlpParams::init({3, 8, 1}, 9), Standardizer::identity(3)};
  save_probe(tmp.path() / "m", p, {});
  std::filesystem::resize_file(tmp.path() / "m.f32le", 8);
  EXPECT_THROW(load_probe(tmp.path() / "m"), IntegrityError);
}

TEST(Features, RowsFollowInputOrder) {
  MockScript s;
  s.info = {"mock", 4, 3};
  s.hidden[{"p1", "r1"}] = {{2, {1, 2, 3}}};
  s.hidden[{"p2", "r2"}] = {{2, {4, 5, 6}}};
  MockGateway gw(s);
  const std::vector<FeatureInput> items{{"b", "p2", "r2"}, {"a", "p1", "r1"}};
  for (int workers : {1, 4}) {
    const auto m = extract_features(items, gw, 2, workers);
    EXPECT_EQ(m.ids, (std::vector<std::string>{"b", "a"}));
    EXPECT_EQ(m.data, (std::vector<float>{4, 5, 6, 1, 2, 3}));
    EXPECT_EQ(m.model_name, "mock");
    EXPECT_EQ(m.layer, 2);
  }
  EXPECT_EQ(extract_layers(items, gw, LayerSelection::all()).size(), 4u);
  EXPECT_THROW(extract_features(items, gw, 9), ArgumentError);
}
