#include "synbrain/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace synbrain {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as native little-endian float32");

std::size_t ParamTree::add(const std::string& name, Tensor init, bool decay) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const std::size_t idx = leaves_.size();
  leaves_.push_back(ParamLeaf{name, std::move(init), Tensor{}, true, decay});
  index_.emplace(name, idx);
  return idx;
}

std::size_t ParamTree::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

void ParamTree::zero_grad() {
  for (auto& leaf : leaves_) {
    if (leaf.grad.same_shape(leaf.value)) {
      leaf.grad.fill(0.0);
    } else {
      leaf.grad = Tensor(leaf.value.rows(), leaf.value.cols());
    }
  }
}

void ParamTree::set_all_trainable(bool trainable) {
  for (auto& leaf : leaves_) leaf.trainable = trainable;
}

void ParamTree::set_trainable_if(const std::function<bool(const std::string&)>& pred,
                                 bool trainable) {
  for (auto& leaf : leaves_) {
    if (pred(leaf.name)) leaf.trainable = trainable;
  }
}

std::vector<std::string> ParamTree::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& leaf : leaves_) {
    if (leaf.trainable) out.push_back(leaf.name);
  }
  return out;
}

std::size_t ParamTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& leaf : leaves_) n += leaf.value.size();
  return n;
}

void ParamTree::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["dtype"] = "f32-le";
  manifest["leaves"] = nlohmann::json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("cannot write " + (dir / "params.bin").string());
  for (const auto& leaf : leaves_) {
    manifest["leaves"].push_back({{"name", leaf.name},
                                  {"shape", {leaf.value.rows(), leaf.value.cols()}},
                                  {"trainable", leaf.trainable}});
    for (double v : leaf.value.values()) {
      const float f = static_cast<float>(v);
      bin.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  std::ofstream js(dir / "params.json", std::ios::trunc);
  js << manifest.dump(2) << '\n';
}

void ParamTree::load(const std::filesystem::path& dir) {
  std::ifstream js(dir / "params.json");
  if (!js) throw FormatError("missing " + (dir / "params.json").string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("params.json: " + std::string(e.what()));
  }
  if (manifest.value("dtype", "") != "f32-le") throw FormatError("params.json: dtype must be f32-le");
  const auto& entries = manifest.at("leaves");
  if (entries.size() != leaves_.size()) {
    throw FormatError("checkpoint has " + std::to_string(entries.size()) + " leaves, model has " +
                      std::to_string(leaves_.size()));
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FormatError("missing " + (dir / "params.bin").string());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    ParamLeaf& leaf = leaves_[i];
    const auto& e = entries[i];
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (name != leaf.name || shape.size() != 2 || shape[0] != leaf.value.rows() ||
        shape[1] != leaf.value.cols()) {
      throw FormatError("checkpoint leaf " + std::to_string(i) + " (" + name +
                        ") does not match model leaf " + leaf.name + " " +
                        leaf.value.shape_string());
    }
    std::vector<float> buf(leaf.value.size());
    bin.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (bin.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
      throw FormatError("params.bin truncated inside leaf " + leaf.name);
    }
    for (std::size_t j = 0; j < buf.size(); ++j) leaf.value[j] = buf[j];
    leaf.trainable = e.value("trainable", true);
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw FormatError("params.bin has trailing bytes beyond the manifest");
  }
}

std::vector<double> ParamTree::flatten_values() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& leaf : leaves_) {
    out.insert(out.end(), leaf.value.values().begin(), leaf.value.values().end());
  }
  return out;
}

void ParamTree::assign_values(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("assign_values: size mismatch");
  std::size_t off = 0;
  for (auto& leaf : leaves_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), leaf.value.size(),
                leaf.value.data());
    off += leaf.value.size();
  }
}

Tensor truncated_normal(std::size_t rows, std::size_t cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = normal(rng);
    while (std::abs(v) > 2.0) v = normal(rng);
    out[i] = v * sd;
  }
  return out;
}

}  // namespace synbrain
