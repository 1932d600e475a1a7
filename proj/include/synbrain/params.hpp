#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "synbrain/tensor.hpp"

namespace synbrain {

/// Raised for malformed or mismatched files on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamLeaf {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool decay = true;  // weights decay; biases and norm parameters do not
};

/// Named, ordered collection of learnable arrays.
///
/// Leaf names are unique and shapes are fixed once added. Toggling
/// `trainable` never touches values.
class ParamTree {
 public:
  std::size_t add(const std::string& name, Tensor init, bool decay);

  std::size_t size() const { return leaves_.size(); }
  ParamLeaf& leaf(std::size_t i) { return leaves_.at(i); }
  const ParamLeaf& leaf(std::size_t i) const { return leaves_.at(i); }
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  auto begin() { return leaves_.begin(); }
  auto end() { return leaves_.end(); }
  auto begin() const { return leaves_.begin(); }
  auto end() const { return leaves_.end(); }

  void zero_grad();
  void set_all_trainable(bool trainable);
  void set_trainable_if(const std::function<bool(const std::string&)>& pred, bool trainable);
  std::vector<std::string> trainable_names() const;
  std::size_t parameter_count() const;

  /// Writes `params.json` + `params.bin` (little-endian float32) into dir.
  void save(const std::filesystem::path& dir) const;
  /// Reads a checkpoint written by save(); names and shapes must match this
  /// tree exactly. Trainable flags are restored from the manifest.
  void load(const std::filesystem::path& dir);

  /// Exact double-precision copy of all values, in leaf order.
  std::vector<double> flatten_values() const;
  void assign_values(std::span<const double> flat);

 private:
  std::vector<ParamLeaf> leaves_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Truncated normal (|x| <= 2 sd) initializer.
Tensor truncated_normal(std::size_t rows, std::size_t cols, double sd, std::mt19937_64& rng);

}  // namespace synbrain
