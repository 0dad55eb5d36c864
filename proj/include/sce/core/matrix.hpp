#pragma once

// Hidden-state matrices on disk: `<prefix>.manifest.json` holds the shape and
// row ids, `<prefix>.f32le` the raw little-endian float32 payload, row-major.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/records.hpp"
#include "sce/core/types.hpp"

namespace sce {

inline std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  auto p = prefix;
  p += suffix;
  return p;
}

inline std::string pack_f32le(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> unpack_f32le(std::string_view bytes) {
  if (bytes.size() % 4 != 0) throw IntegrityError("float32 payload size is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline ojson matrix_manifest(const HiddenStateMatrix& m) {
  ojson j;
  j["format"] = "f32le";
  j["model_name"] = m.model_name;
  j["layer"] = m.layer;
  j["dim"] = m.dim;
  j["rows"] = m.rows();
  j["ids"] = m.ids;
  return j;
}

inline void write_matrix(const std::filesystem::path& prefix, const HiddenStateMatrix& m) {
  m.validate();
  write_file_atomic(with_suffix(prefix, ".f32le"), pack_f32le(m.data));
  write_file_atomic(with_suffix(prefix, ".manifest.json"), matrix_manifest(m).dump(2) + "\n");
}

inline HiddenStateMatrix read_matrix(const std::filesystem::path& prefix) {
  const auto manifest_path = with_suffix(prefix, ".manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  HiddenStateMatrix m;
  try {
    if (detail::field<std::string>(j, "format") != "f32le")
      throw ParseError("unsupported matrix format");
    m.model_name = detail::field<std::string>(j, "model_name");
    m.layer = detail::field<int>(j, "layer");
    m.dim = detail::field<int>(j, "dim");
    m.ids = detail::field<std::vector<std::string>>(j, "ids");
    if (detail::field<std::size_t>(j, "rows") != m.ids.size())
      throw IntegrityError("manifest row count disagrees with its id list");
  } catch (const ParseError& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  const auto data_path = with_suffix(prefix, ".f32le");
  const auto bytes = read_file(data_path);
  const auto expected = m.ids.size() * static_cast<std::size_t>(m.dim > 0 ? m.dim : 0) * 4;
  if (bytes.size() != expected)
    throw IntegrityError(data_path.string() + ": expected " + std::to_string(expected) +
                         " bytes, found " + std::to_string(bytes.size()));
  m.data = unpack_f32le(bytes);
  m.validate();
  return m;
}

}  // namespace sce
