#pragma once

// Last-token hidden states for (prompt, response) pairs. For cross-model use
// the gateway is the verifier's while the responses stay the original
// model's, so the matrix is tagged with the verifier's name.

#include <map>
#include <string>
#include <vector>

#include "sce/core/parallel.hpp"
#include "sce/core/types.hpp"
#include "sce/gateway/gateway.hpp"

namespace sce::probe {

struct FeatureInput {
  std::string id;
  std::string prompt;
  std::string response;
};

// One matrix per requested layer, rows in input order.
inline std::vector<HiddenStateMatrix> extract_layers(const std::vector<FeatureInput>& items, Gateway& gw,
                                                     const LayerSelection& selection, int workers = 1) {
  const auto info = gw.model_info();
  const auto layers = selection.resolve(info.n_layers);
  std::vector<LayerStates> states(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    states[i] = gw.hidden_states(items[i].prompt, items[i].response, selection);
  });
  std::vector<HiddenStateMatrix> out;
  for (int layer : layers) {
    HiddenStateMatrix m;
    m.model_name = info.name;
    m.layer = layer;
    m.dim = info.hidden_dim;
    m.data.reserve(items.size() * static_cast<std::size_t>(info.hidden_dim));
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& v = states[i].at(layer);
      m.ids.push_back(items[i].id);
      m.data.insert(m.data.end(), v.begin(), v.end());
    }
    m.validate();
    out.push_back(std::move(m));
  }
  return out;
}

inline HiddenStateMatrix extract_features(const std::vector<FeatureInput>& items, Gateway& gw, int layer,
                                          int workers = 1) {
  return extract_layers(items, gw, LayerSelection::of({layer}), workers).front();
}

}  // namespace sce::probe
