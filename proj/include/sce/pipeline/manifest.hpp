#pragma once

// Per-stage run manifests: content digests of inputs and outputs, the config
// hash and timestamps. Timestamps come from SOURCE_DATE_EPOCH when set, which
// makes the manifests themselves reproducible.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sce/core/digest.hpp"
#include "sce/core/error.hpp"
#include "sce/core/records.hpp"

namespace sce::pipeline {

inline std::string utc_timestamp() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch)
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  else
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string stage;
  std::string tool_version;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // label -> sha256
  std::map<std::string, std::string> outputs;  // path relative to the output dir -> sha256
  std::string started_at;
  std::string finished_at;

  ojson to_json() const {
    ojson j;
    j["stage"] = stage;
    j["tool_version"] = tool_version;
    j["config_hash"] = config_hash;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.stage = sce::detail::field<std::string>(j, "stage");
    m.tool_version = sce::detail::field<std::string>(j, "tool_version");
    m.config_hash = sce::detail::field<std::string>(j, "config_hash");
    m.inputs = sce::detail::field<std::map<std::string, std::string>>(j, "inputs");
    m.outputs = sce::detail::field<std::map<std::string, std::string>>(j, "outputs");
    m.started_at = sce::detail::field<std::string>(j, "started_at");
    m.finished_at = sce::detail::field<std::string>(j, "finished_at");
    return m;
  }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& stage) {
  return out_dir / "manifests" / (stage + ".json");
}

inline std::optional<RunManifest> read_manifest(const std::filesystem::path& out_dir, const std::string& stage) {
  const auto path = manifest_path(out_dir, stage);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    return RunManifest::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable manifests are treated as absent
  }
}

inline void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
  write_file_atomic(manifest_path(out_dir, m.stage), m.to_json().dump(2) + "\n");
}

}  // namespace sce::pipeline
