#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crel/tensor.hpp"

namespace crel {

/// Versioned binary container: a JSON header plus named double tensors.
///
/// Layout: magic "CRELARC1", u64 header length, header JSON, raw
/// little-endian doubles for each tensor in header order. The header stores
/// an FNV-1a checksum of the tensor payload; reading a damaged file throws
/// DataError.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void put(std::string name, Matrix m) { tensors.emplace_back(std::move(name), std::move(m)); }
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string serialize(const Archive& a);
Archive deserialize(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const Archive& a);
Archive read_archive(const std::filesystem::path& path);

}  // namespace crel
