#include "synbrain/optimizer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace synbrain {

void AdamW::step(ParamTree& params) {
  if (mom_.m.size() != params.size()) {
    mom_.m.resize(params.size());
    mom_.v.resize(params.size());
  }
  ++mom_.t;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(mom_.t));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(mom_.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamLeaf& leaf = params.leaf(i);
    if (!leaf.trainable || !leaf.grad.same_shape(leaf.value)) continue;
    Tensor& m = mom_.m[i];
    Tensor& v = mom_.v[i];
    if (!m.same_shape(leaf.value)) {
      m = Tensor(leaf.value.rows(), leaf.value.cols());
      v = Tensor(leaf.value.rows(), leaf.value.cols());
    }
    const double decay = leaf.decay ? s_.lr * s_.weight_decay : 0.0;
    for (std::size_t j = 0; j < leaf.value.size(); ++j) {
      const double g = leaf.grad[j];
      m[j] = s_.beta1 * m[j] + (1.0 - s_.beta1) * g;
      v[j] = s_.beta2 * v[j] + (1.0 - s_.beta2) * g * g;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + s_.eps);
      leaf.value[j] -= s_.lr * update + decay * leaf.value[j];
    }
  }
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw FormatError("corrupt rng state");
  return rng;
}

namespace {

void write_doubles(std::ofstream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

void read_doubles(std::ifstream& in, std::span<double> v, const std::string& what) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(v.size_bytes())) {
    throw FormatError("train_state.bin truncated in " + what);
  }
}

}  // namespace

void TrainState::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["adam_t"] = moments.t;
  j["n_params"] = params.size();
  j["n_best"] = best_params.size();
  j["initial_val"] = initial_val;
  j["best_val"] = best_val;
  j["has_best"] = has_best;
  j["best_epoch"] = best_epoch;
  j["bad_rounds"] = bad_rounds;
  j["rng"] = rng_state;
  nlohmann::json shapes = nlohmann::json::array();
  std::ofstream bin(dir / "train_state.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("cannot write " + (dir / "train_state.bin").string());
  write_doubles(bin, params);
  write_doubles(bin, best_params);
  for (std::size_t i = 0; i < moments.m.size(); ++i) {
    shapes.push_back({moments.m[i].rows(), moments.m[i].cols()});
    write_doubles(bin, moments.m[i].values());
    write_doubles(bin, moments.v[i].values());
  }
  j["moment_shapes"] = shapes;
  std::ofstream js(dir / "train_state.json", std::ios::trunc);
  js << j.dump(1) << '\n';
}

TrainState TrainState::load(const std::filesystem::path& dir) {
  std::ifstream js(dir / "train_state.json");
  if (!js) throw FormatError("missing " + (dir / "train_state.json").string());
  std::ifstream bin(dir / "train_state.bin", std::ios::binary);
  if (!bin) throw FormatError("missing " + (dir / "train_state.bin").string());
  TrainState s;
  try {
    nlohmann::json j;
    js >> j;
    s.step = j.at("step").get<std::size_t>();
    s.epoch = j.at("epoch").get<std::size_t>();
    s.moments.t = j.at("adam_t").get<std::size_t>();
    s.initial_val = j.at("initial_val").get<double>();
    s.best_val = j.at("best_val").get<double>();
    s.has_best = j.at("has_best").get<bool>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    s.bad_rounds = j.at("bad_rounds").get<std::size_t>();
    s.rng_state = j.at("rng").get<std::string>();
    s.params.resize(j.at("n_params").get<std::size_t>());
    s.best_params.resize(j.at("n_best").get<std::size_t>());
    read_doubles(bin, s.params, "params");
    read_doubles(bin, s.best_params, "best snapshot");
    for (const auto& shape : j.at("moment_shapes")) {
      const auto r = shape.at(0).get<std::size_t>();
      const auto c = shape.at(1).get<std::size_t>();
      Tensor m(r, c), v(r, c);
      read_doubles(bin, m.values(), "first moments");
      read_doubles(bin, v.values(), "second moments");
      s.moments.m.push_back(std::move(m));
      s.moments.v.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("train_state.json: " + std::string(e.what()));
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw FormatError("train_state.bin has trailing bytes");
  }
  return s;
}

}  // namespace synbrain
