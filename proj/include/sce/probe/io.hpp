#pragma once

// Probe files: `<prefix>.manifest.json` (dims, seed, layer, input
// standardization, training summary) and `<prefix>.f32le` holding, for each
// layer in order, its weight matrix (row-major, out x in) then its bias.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/matrix.hpp"
#include "sce/core/records.hpp"
#include "sce/probe/train.hpp"

namespace sce::probe {

struct ProbeInfo {
  std::string model_name;
  int layer = 0;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_auroc = 0.0;
  bool operator==(const ProbeInfo&) const = default;
};

struct StoredProbe {
  Probe probe;
  ProbeInfo info;
};

inline std::vector<float> flatten(const MlpParams& p) {
  std::vector<float> out;
  out.reserve(p.parameter_count());
  for (const auto& l : p.layers()) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

inline void save_probe(const std::filesystem::path& prefix, const Probe& probe, const ProbeInfo& info) {
  probe.params.validate();
  ojson j;
  j["format"] = "f32le";
  j["model_name"] = info.model_name;
  j["layer"] = info.layer;
  j["dims"] = probe.params.dims();
  j["seed"] = info.seed;
  j["best_epoch"] = info.best_epoch;
  j["best_val_auroc"] = info.best_val_auroc;
  j["parameter_count"] = probe.params.parameter_count();
  j["standardization"] = ojson{{"mean", probe.standardizer.mean}, {"stddev", probe.standardizer.stddev}};
  write_file_atomic(with_suffix(prefix, ".f32le"), pack_f32le(flatten(probe.params)));
  write_file_atomic(with_suffix(prefix, ".manifest.json"), j.dump(2) + "\n");
}

inline StoredProbe load_probe(const std::filesystem::path& prefix) {
  const auto manifest_path = with_suffix(prefix, ".manifest.json");
  StoredProbe out;
  std::vector<int> dims;
  try {
    const auto j = nlohmann::json::parse(read_file(manifest_path));
    if (detail::field<std::string>(j, "format") != "f32le") throw ParseError("unsupported probe format");
    out.info.model_name = detail::field<std::string>(j, "model_name");
    out.info.layer = detail::field<int>(j, "layer");
    out.info.seed = detail::field<std::uint64_t>(j, "seed");
    out.info.best_epoch = detail::field<int>(j, "best_epoch");
    out.info.best_val_auroc = detail::field<double>(j, "best_val_auroc");
    dims = detail::field<std::vector<int>>(j, "dims");
    const auto& st = j.at("standardization");
    out.probe.standardizer.mean = st.at("mean").get<std::vector<double>>();
    out.probe.standardizer.stddev = st.at("stddev").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  try {
    out.probe.params = MlpParams::zeros(dims);
  } catch (const ArgumentError& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  const auto data_path = with_suffix(prefix, ".f32le");
  const auto bytes = read_file(data_path);
  if (bytes.size() != out.probe.params.parameter_count() * 4)
    throw IntegrityError(data_path.string() + ": expected " + std::to_string(out.probe.params.parameter_count() * 4) +
                         " bytes, found " + std::to_string(bytes.size()));
  const auto values = unpack_f32le(bytes);
  std::size_t k = 0;
  for (auto& l : out.probe.params.layers()) {
    for (auto& w : l.weight) w = values[k++];
    for (auto& b : l.bias) b = values[k++];
  }
  if (out.probe.standardizer.mean.size() != static_cast<std::size_t>(dims.front()) ||
      out.probe.standardizer.stddev.size() != static_cast<std::size_t>(dims.front()))
    throw IntegrityError(manifest_path.string() + ": standardization does not match the input dimension");
  out.probe.params.validate();
  return out;
}

}  // namespace sce::probe
