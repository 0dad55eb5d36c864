#pragma once

// Fully connected probe: ReLU hidden layers, one logistic output unit,
// binary cross-entropy loss. Parameters are stored in Real (float for
// persisted probes); every forward and backward pass accumulates in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/core/rng.hpp"

namespace sce::probe {

inline const std::vector<int> kHiddenDims{256, 128, 64};

inline std::vector<int> probe_dims(int input_dim, const std::vector<int>& hidden = kHiddenDims) {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// softplus(logit) - z * logit, evaluated without overflow.
inline double bce_with_logit(double logit, int z) {
  return std::max(logit, 0.0) - z * logit + std::log1p(std::exp(-std::abs(logit)));
}

template <class Real>
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<Real> weight;  // out x in, row-major
  std::vector<Real> bias;    // out

  Real& w(int o, int i) { return weight[static_cast<std::size_t>(o) * in + i]; }
  Real w(int o, int i) const { return weight[static_cast<std::size_t>(o) * in + i]; }
  bool operator==(const DenseLayer&) const = default;
};

template <class Real>
class BasicMlp {
 public:
  BasicMlp() = default;

  static BasicMlp zeros(std::vector<int> dims) {
    if (dims.size() < 2 || dims.back() != 1) throw ArgumentError("mlp dims must end in a single output");
    for (int d : dims)
      if (d <= 0) throw ArgumentError("mlp dims must be positive");
    BasicMlp m;
    m.dims_ = std::move(dims);
    for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
      DenseLayer<Real> layer;
      layer.in = m.dims_[l];
      layer.out = m.dims_[l + 1];
      layer.weight.assign(static_cast<std::size_t>(layer.in) * layer.out, Real(0));
      layer.bias.assign(static_cast<std::size_t>(layer.out), Real(0));
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  // Weights and biases uniform in +-1/sqrt(fan_in).
  static BasicMlp init(std::vector<int> dims, std::uint64_t seed) {
    auto m = zeros(std::move(dims));
    Rng rng(seed);
    for (auto& layer : m.layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
      for (auto& w : layer.weight) w = static_cast<Real>(rng.uniform(-bound, bound));
      for (auto& b : layer.bias) b = static_cast<Real>(rng.uniform(-bound, bound));
    }
    return m;
  }

  const std::vector<int>& dims() const noexcept { return dims_; }
  int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
  std::vector<DenseLayer<Real>>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer<Real>>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  template <class To>
  BasicMlp<To> cast() const {
    auto out = BasicMlp<To>::zeros(dims_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      for (std::size_t i = 0; i < layers_[l].weight.size(); ++i)
        out.layers()[l].weight[i] = static_cast<To>(layers_[l].weight[i]);
      for (std::size_t i = 0; i < layers_[l].bias.size(); ++i)
        out.layers()[l].bias[i] = static_cast<To>(layers_[l].bias[i]);
    }
    return out;
  }

  void validate() const {
    if (dims_.size() < 2 || layers_.size() + 1 != dims_.size()) throw ArgumentError("mlp shape mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      if (layer.in != dims_[l] || layer.out != dims_[l + 1] ||
          layer.weight.size() != static_cast<std::size_t>(layer.in) * layer.out ||
          layer.bias.size() != static_cast<std::size_t>(layer.out))
        throw ArgumentError("mlp layer " + std::to_string(l) + " shape mismatch");
      for (auto v : layer.weight)
        if (!std::isfinite(static_cast<double>(v))) throw ArgumentError("mlp has a non-finite weight");
      for (auto v : layer.bias)
        if (!std::isfinite(static_cast<double>(v))) throw ArgumentError("mlp has a non-finite bias");
    }
  }

  // Pre-activations of every layer for input x; the last entry holds the logit.
  template <class X>
  std::vector<std::vector<double>> preactivations(std::span<const X> x) const {
    if (static_cast<int>(x.size()) != input_dim())
      throw ArgumentError("mlp input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(input_dim()));
    std::vector<std::vector<double>> zs;
    std::vector<double> a(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      std::vector<double> z(static_cast<std::size_t>(layer.out));
      for (int o = 0; o < layer.out; ++o) {
        double acc = static_cast<double>(layer.bias[static_cast<std::size_t>(o)]);
        const Real* row = layer.weight.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) acc += static_cast<double>(row[i]) * a[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(o)] = acc;
      }
      if (l + 1 < layers_.size()) {
        a.resize(z.size());
        for (std::size_t o = 0; o < z.size(); ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
      }
      zs.push_back(std::move(z));
    }
    return zs;
  }

  template <class X>
  double logit(std::span<const X> x) const {
    return preactivations(x).back().front();
  }

  // Probability of the positive (correct) class.
  template <class X>
  double forward(std::span<const X> x) const {
    return sigmoid(logit(x));
  }

  bool operator==(const BasicMlp&) const = default;

 private:
  std::vector<int> dims_;
  std::vector<DenseLayer<Real>> layers_;
};

using MlpParams = BasicMlp<float>;

template <class Real, class X>
double mlp_forward(const BasicMlp<Real>& p, std::span<const X> x) {
  return p.forward(x);
}

// Gradient buffers shaped like the network's parameters.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  template <class Real>
  static Gradients like(const BasicMlp<Real>& m) {
    Gradients g;
    for (const auto& l : m.layers()) {
      g.weight.emplace_back(l.weight.size(), 0.0);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }
  void zero() {
    for (auto& w : weight) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
  }
};

// Adds the gradient of bce_with_logit(logit(x), z) to `grad` and returns the loss.
template <class Real, class X>
double accumulate_gradient(const BasicMlp<Real>& m, std::span<const X> x, int z, Gradients& grad) {
  const auto zs = m.preactivations(x);
  const auto& layers = m.layers();
  const std::size_t n = layers.size();
  // acts[l] is the input to layer l: x, then relu of each hidden pre-activation.
  std::vector<std::vector<double>> acts(n);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 1; l < n; ++l) {
    acts[l].resize(zs[l - 1].size());
    for (std::size_t i = 0; i < acts[l].size(); ++i) acts[l][i] = zs[l - 1][i] > 0.0 ? zs[l - 1][i] : 0.0;
  }
  const double logit = zs.back().front();
  std::vector<double> delta{sigmoid(logit) - z};  // dL/dz for the current layer
  for (std::size_t l = n; l-- > 0;) {
    const auto& layer = layers[l];
    const double* a = acts[l].data();
    auto& gw = grad.weight[l];
    auto& gb = grad.bias[l];
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[static_cast<std::size_t>(o)] += d;
      if (d == 0.0) continue;
      double* row = gw.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) row[i] += d * a[i];
    }
    if (l == 0) break;
    std::vector<double> prev(static_cast<std::size_t>(layer.in), 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      const Real* row = layer.weight.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) prev[static_cast<std::size_t>(i)] += static_cast<double>(row[i]) * d;
    }
    for (int i = 0; i < layer.in; ++i)
      if (!(zs[l - 1][static_cast<std::size_t>(i)] > 0.0)) prev[static_cast<std::size_t>(i)] = 0.0;
    delta = std::move(prev);
  }
  return bce_with_logit(logit, z);
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Parameters whose +-step moved some ReLU across its kink; central
  // differences are not a valid oracle there.
  std::size_t skipped_kinks = 0;
};

// Compares the analytic gradient of the cross-entropy loss with central
// finite differences (step `step`, double precision) for every parameter.
// Relative error is |a - n| / max(|a|, |n|, 1e-8).
template <class Real, class X>
GradCheckResult grad_check(const BasicMlp<Real>& params, std::span<const X> x, int z, double step = 1e-4) {
  const auto m = params.template cast<double>();
  auto grad = Gradients::like(m);
  accumulate_gradient(m, x, z, grad);

  const auto zs = m.preactivations(x);
  const auto& layers = m.layers();
  const std::size_t n = layers.size();
  std::vector<double> x_in(x.begin(), x.end());
  auto relu = [](double v) { return v > 0.0 ? v : 0.0; };

  // Loss after adding `dz` to pre-activation `unit` of layer `l`. Only that
  // unit changes at layer l, so layer l+1 is updated by one column and the
  // rest of the network is recomputed.
  auto perturbed_loss = [&](std::size_t l, int unit, double dz, bool& kink) {
    std::vector<double> cur = zs[l];
    const double before = cur[static_cast<std::size_t>(unit)];
    cur[static_cast<std::size_t>(unit)] += dz;
    if (l + 1 == n) return bce_with_logit(cur.front(), z);
    if ((before > 0.0) != (cur[static_cast<std::size_t>(unit)] > 0.0)) kink = true;
    const double da = relu(cur[static_cast<std::size_t>(unit)]) - relu(before);
    std::vector<double> next = zs[l + 1];
    const auto& nl = layers[l + 1];
    for (int o = 0; o < nl.out; ++o)
      next[static_cast<std::size_t>(o)] += nl.w(o, unit) * da;
    for (std::size_t k = l + 1; k + 1 < n; ++k) {
      for (std::size_t o = 0; o < next.size(); ++o)
        if ((zs[k][o] > 0.0) != (next[o] > 0.0)) kink = true;
      const auto& layer = layers[k + 1];
      std::vector<double> out(static_cast<std::size_t>(layer.out));
      for (int o = 0; o < layer.out; ++o) {
        double acc = layer.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < layer.in; ++i) acc += layer.w(o, i) * relu(next[static_cast<std::size_t>(i)]);
        out[static_cast<std::size_t>(o)] = acc;
      }
      next = std::move(out);
    }
    return bce_with_logit(next.front(), z);
  };

  GradCheckResult result;
  auto compare = [&](double analytic, std::size_t l, int unit, double input_scale) {
    bool kink = false;
    const double lp = perturbed_loss(l, unit, step * input_scale, kink);
    const double lm = perturbed_loss(l, unit, -step * input_scale, kink);
    if (kink) {
      ++result.skipped_kinks;
      return;
    }
    const double numeric = (lp - lm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  };

  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = layers[l];
    for (int o = 0; o < layer.out; ++o) {
      for (int i = 0; i < layer.in; ++i) {
        // w(o,i) enters z_o as w * input_i, so a step h in w moves z_o by h * input_i.
        const double in = l == 0 ? x_in[static_cast<std::size_t>(i)] : relu(zs[l - 1][static_cast<std::size_t>(i)]);
        compare(grad.weight[l][static_cast<std::size_t>(o) * layer.in + i], l, o, in);
      }
      compare(grad.bias[l][static_cast<std::size_t>(o)], l, o, 1.0);
    }
  }
  return result;
}

}  // namespace sce::probe
