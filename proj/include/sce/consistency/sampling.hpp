#pragma once

// One greedy response plus k stochastic samples per prompt. Sample j uses
// seed `seed + j`, so every draw is reproducible on its own.

#include <cstdint>
#include <string>
#include <vector>

#include "sce/core/error.hpp"
#include "sce/consistency/consistency.hpp"
#include "sce/core/types.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::consistency {

struct SamplingPlan {
  int k = kDefaultSamples;
  GenParams greedy{0.0, 1.0, -1, 64, 0};
  GenParams sample{0.5, 1.0, -1, 64, 0};
  std::int64_t seed = 0;

  GenParams sample_params(int j) const {
    GenParams p = sample;
    p.seed = seed + j;
    return p;
  }

  void validate() const {
    if (k < 1) throw ArgumentError("k must be >= 1");
    greedy.validate();
    sample.validate();
    if (!greedy.is_greedy()) throw ArgumentError("greedy decoding must use temperature 0");
    if (sample.temperature <= 0.0) throw ArgumentError("sampling temperature must be > 0");
  }
};

struct ResponseSet {
  Generation greedy;
  std::vector<Generation> samples;

  std::vector<std::string> sample_texts() const {
    std::vector<std::string> out;
    for (const auto& s : samples) out.push_back(s.text);
    return out;
  }
};

inline ResponseSet draw_responses(Gateway& gw, const std::string& prompt, const SamplingPlan& plan) {
  ResponseSet out;
  out.greedy = gw.generate(prompt, plan.greedy);
  for (int j = 1; j <= plan.k; ++j) out.samples.push_back(gw.generate(prompt, plan.sample_params(j)));
  return out;
}

}  // namespace sce::consistency
