#pragma once

// Momentum-SGD training of the probe with per-epoch validation and
// best-checkpoint selection, plus the per-layer sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/core/rng.hpp"
#include "sce/core/types.hpp"
#include "sce/evalkit/auroc.hpp"
#include "sce/probe/mlp.hpp"

namespace sce::probe {

// Row-major feature matrix with one 0/1 label per row.
struct Samples {
  int dim = 0;
  std::vector<double> x;
  std::vector<int> z;

  std::size_t rows() const noexcept { return z.size(); }
  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  void add(std::span<const double> features, int label) {
    if (static_cast<int>(features.size()) != dim) throw ArgumentError("sample has the wrong dimension");
    x.insert(x.end(), features.begin(), features.end());
    z.push_back(label);
  }
  void validate(const char* what) const {
    if (dim <= 0) throw ArgumentError(std::string(what) + ": dimension must be positive");
    if (x.size() != z.size() * static_cast<std::size_t>(dim))
      throw ArgumentError(std::string(what) + ": feature count does not match labels");
    bool pos = false, neg = false;
    for (int v : z) {
      if (v != 0 && v != 1) throw ArgumentError(std::string(what) + ": labels must be 0 or 1");
      (v ? pos : neg) = true;
    }
    if (!pos || !neg) throw ArgumentError(std::string(what) + " split must contain both classes");
    for (double v : x)
      if (!std::isfinite(v)) throw ArgumentError(std::string(what) + ": non-finite feature");
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  bool standardize = true;
  std::vector<int> hidden = kHiddenDims;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0, 1)");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (max_epochs < 1) throw ArgumentError("max_epochs must be >= 1");
    for (int h : hidden)
      if (h <= 0) throw ArgumentError("hidden dims must be positive");
  }
};

// Per-dimension z-scoring with training-split statistics. Dimensions with
// (near) zero spread get deviation 1 so they pass through centred.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer identity(int dim) {
    return {std::vector<double>(static_cast<std::size_t>(dim), 0.0),
            std::vector<double>(static_cast<std::size_t>(dim), 1.0)};
  }

  static Standardizer fit(const Samples& s) {
    const auto d = static_cast<std::size_t>(s.dim);
    Standardizer out{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    const auto n = static_cast<double>(s.rows());
    for (std::size_t r = 0; r < s.rows(); ++r)
      for (std::size_t i = 0; i < d; ++i) out.mean[i] += s.row(r)[i];
    for (auto& m : out.mean) m /= n;
    for (std::size_t r = 0; r < s.rows(); ++r)
      for (std::size_t i = 0; i < d; ++i) {
        const double c = s.row(r)[i] - out.mean[i];
        out.stddev[i] += c * c;
      }
    for (auto& v : out.stddev) {
      v = std::sqrt(v / n);
      if (v < 1e-12) v = 1.0;
    }
    return out;
  }

  template <class X>
  std::vector<double> apply(std::span<const X> x) const {
    if (x.size() != mean.size()) throw ArgumentError("standardizer dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (static_cast<double>(x[i]) - mean[i]) / stddev[i];
    return out;
  }

  Samples apply(const Samples& s) const {
    Samples out{s.dim, {}, s.z};
    out.x.reserve(s.x.size());
    for (std::size_t r = 0; r < s.rows(); ++r) {
      auto v = apply(s.row(r));
      out.x.insert(out.x.end(), v.begin(), v.end());
    }
    return out;
  }

  bool operator==(const Standardizer&) const = default;
};

// A trained probe: float parameters plus the input transform they expect.
struct Probe {
  MlpParams params;
  Standardizer standardizer;

  template <class X>
  double score(std::span<const X> x) const {
    const auto v = standardizer.apply(x);
    return params.forward(std::span<const double>(v));
  }

  std::vector<double> scores(const Samples& s) const {
    std::vector<double> out(s.rows());
    for (std::size_t r = 0; r < s.rows(); ++r) out[r] = score(s.row(r));
    return out;
  }

  bool operator==(const Probe&) const = default;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_auroc = 0.0;
};

struct TrainReport {
  int best_epoch = 0;  // 1-based
  double best_val_auroc = 0.0;
  std::vector<EpochStats> per_epoch;
  Standardizer standardization;
};

struct TrainResult {
  MlpParams params;
  TrainReport report;

  Probe probe() const { return {params, report.standardization}; }
};

inline double validation_auroc(const Probe& probe, const Samples& val) {
  const auto s = probe.scores(val);
  return evalkit::auroc(s, val.z);
}

// Minimizes mean binary cross-entropy with mini-batch SGD and momentum
// (v = mu * v + g; w -= lr * v). Updates run in double; after each epoch the
// parameters are rounded to float and scored on the validation split, and the
// best epoch's float parameters are returned (earliest epoch on ties).
inline TrainResult mlp_train(const Samples& train, const Samples& val, const TrainConfig& cfg) {
  cfg.validate();
  train.validate("training");
  val.validate("validation");
  if (train.dim != val.dim) throw ArgumentError("training and validation dimensions differ");

  TrainResult result;
  result.report.standardization = cfg.standardize ? Standardizer::fit(train) : Standardizer::identity(train.dim);
  const Samples xs = result.report.standardization.apply(train);

  auto net = BasicMlp<double>::init(probe_dims(train.dim, cfg.hidden), cfg.seed);
  auto grad = Gradients::like(net);
  auto velocity = Gradients::like(net);
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(xs.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  bool have_best = false;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      grad.zero();
      for (std::size_t k = start; k < stop; ++k)
        loss_sum += accumulate_gradient(net, xs.row(order[k]), xs.z[order[k]], grad);
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto& layers = net.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        auto step = [&](std::vector<double>& w, std::vector<double>& v, const std::vector<double>& g) {
          for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = cfg.momentum * v[i] + g[i] * scale;
            w[i] -= cfg.learning_rate * v[i];
          }
        };
        step(layers[l].weight, velocity.weight[l], grad.weight[l]);
        step(layers[l].bias, velocity.bias[l], grad.bias[l]);
      }
    }
    const double train_loss = loss_sum / static_cast<double>(xs.rows());
    if (!std::isfinite(train_loss)) throw TrainingError("training diverged (non-finite loss)", epoch);

    Probe candidate{net.cast<float>(), result.report.standardization};
    bool finite = true;
    for (const auto& layer : candidate.params.layers()) {
      for (float w : layer.weight) finite = finite && std::isfinite(w);
      for (float b : layer.bias) finite = finite && std::isfinite(b);
    }
    if (!finite) throw TrainingError("training diverged (non-finite parameters)", epoch);
    const double val_auroc = validation_auroc(candidate, val);
    result.report.per_epoch.push_back({train_loss, val_auroc});
    if (!have_best || val_auroc > result.report.best_val_auroc) {
      have_best = true;
      result.report.best_epoch = epoch;
      result.report.best_val_auroc = val_auroc;
      result.params = std::move(candidate.params);
    }
  }
  return result;
}

// Rows of `m` for the given ids, in that order, with matching labels.
inline Samples gather(const HiddenStateMatrix& m, const std::vector<std::string>& ids, const std::vector<int>& z) {
  if (ids.size() != z.size()) throw ArgumentError("ids and labels differ in length");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.ids.size(); ++i) index.emplace(m.ids[i], i);
  Samples out;
  out.dim = m.dim;
  out.x.reserve(ids.size() * static_cast<std::size_t>(m.dim));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto it = index.find(ids[k]);
    if (it == index.end())
      throw ArgumentError("matrix for layer " + std::to_string(m.layer) + " has no row for '" + ids[k] + "'");
    const auto row = m.row(it->second);
    out.x.insert(out.x.end(), row.begin(), row.end());
    out.z.push_back(z[k]);
  }
  return out;
}

struct LabeledIds {
  std::vector<std::string> ids;
  std::vector<int> z;
};

struct SweepResult {
  int best_layer = 0;
  std::vector<int> layers;
  std::vector<double> val_auroc;  // parallel to `layers`
  TrainResult best;
};

// Trains one probe per layer on aligned data; best_layer is the index with
// the highest validation AUROC, lowest index on ties.
inline SweepResult sweep_layers(const std::vector<Samples>& train, const std::vector<Samples>& val,
                                const TrainConfig& cfg) {
  if (train.empty() || train.size() != val.size()) throw ArgumentError("sweep needs one train/val pair per layer");
  SweepResult out;
  for (std::size_t l = 0; l < train.size(); ++l) {
    if (l > 0 && (train[l].z != train[0].z || val[l].z != val[0].z))
      throw ArgumentError("layer " + std::to_string(l) + " labels are not aligned with layer 0");
    auto r = mlp_train(train[l], val[l], cfg);
    out.layers.push_back(static_cast<int>(l));
    out.val_auroc.push_back(r.report.best_val_auroc);
    if (l == 0 || r.report.best_val_auroc > out.val_auroc[static_cast<std::size_t>(out.best_layer)]) {
      out.best_layer = static_cast<int>(l);
      out.best = std::move(r);
    }
  }
  return out;
}

// Layer sweep over per-layer matrices of one model. Every matrix must list
// the same ids in the same order; best_layer is a layer number, and ties go
// to the lowest one.
inline SweepResult sweep_layers(std::vector<HiddenStateMatrix> matrices, const LabeledIds& train,
                                const LabeledIds& val, const TrainConfig& cfg) {
  if (matrices.empty()) throw ArgumentError("sweep needs at least one layer");
  std::stable_sort(matrices.begin(), matrices.end(),
                   [](const HiddenStateMatrix& a, const HiddenStateMatrix& b) { return a.layer < b.layer; });
  std::vector<Samples> tr, va;
  for (const auto& m : matrices) {
    if (m.ids != matrices.front().ids)
      throw ArgumentError("layer " + std::to_string(m.layer) + " ids differ from layer " +
                          std::to_string(matrices.front().layer));
    tr.push_back(gather(m, train.ids, train.z));
    va.push_back(gather(m, val.ids, val.z));
  }
  auto out = sweep_layers(tr, va, cfg);
  out.best_layer = matrices[static_cast<std::size_t>(out.best_layer)].layer;
  for (std::size_t i = 0; i < matrices.size(); ++i) out.layers[i] = matrices[i].layer;
  return out;
}

}  // namespace sce::probe
