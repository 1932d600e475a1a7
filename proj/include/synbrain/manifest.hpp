#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace synbrain {

/// SHA-256 (hex) of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Content hash over files and directory trees: every regular file is
/// hashed as a git-style blob ("blob <size>\0<bytes>"), then the sorted
/// (path, blob hash) listing is hashed again. Paths are taken relative to
/// each input root, so the hash does not depend on where inputs live.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

/// Record written by every CLI command; replaying the stored argv reproduces
/// the command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;  // full argument vector after the program name
  nlohmann::json config;          // resolved configuration
  std::uint64_t seed = 0;
  std::string input_hash;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

}  // namespace synbrain
