#include "synbrain/world.hpp"

#include <cmath>
#include <random>
#include <set>

namespace synbrain {

namespace {

// Stream tags keep the independent draws of the world apart.
enum : std::uint64_t {
  kTagTokens = 1,
  kTagSubject = 2,
  kTagConcept = 3,
  kTagTrial = 4,
};

std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Tensor gaussian(std::size_t rows, std::size_t cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

}  // namespace

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

SyntheticWorldSpec SyntheticWorldSpec::desk() { return {}; }

void SyntheticWorldSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid world spec: " + what);
  };
  need(concept_dim > 0 && tokens > 0 && embed_dim > 0, "concept/token/embedding dims must be positive");
  need(!voxel_counts.empty(), "at least one subject is required");
  for (const auto& [s, v] : voxel_counts) {
    need(v >= 2, "subject " + std::to_string(s) + " needs at least 2 voxels");
  }
  need(trial_noise_sd >= 0.0, "trial_noise_sd must be non-negative");
  need(trials_per_test_stimulus >= 1 && trials_per_train_stimulus >= 1,
       "at least one trial per stimulus");
  need(n_sessions >= 1, "n_sessions must be positive");
  need(stimulus_pool >= 1, "stimulus_pool must be positive");
  need(token_perturbation >= 0.0 && response_gain > 0.0 && spatial_smoothness >= 0.0,
       "perturbation/gain/smoothness out of range");
}

nlohmann::json SyntheticWorldSpec::to_json() const {
  nlohmann::json voxels = nlohmann::json::object();
  for (const auto& [s, v] : voxel_counts) voxels[std::to_string(s)] = v;
  return {{"concept_dim", concept_dim},
          {"tokens", tokens},
          {"embed_dim", embed_dim},
          {"voxel_counts", voxels},
          {"trial_noise_sd", trial_noise_sd},
          {"subject_mixing_seed", subject_mixing_seed},
          {"n_train_stimuli", n_train_stimuli},
          {"n_test_stimuli", n_test_stimuli},
          {"trials_per_test_stimulus", trials_per_test_stimulus},
          {"trials_per_train_stimulus", trials_per_train_stimulus},
          {"n_sessions", n_sessions},
          {"stimulus_pool", stimulus_pool},
          {"token_perturbation", token_perturbation},
          {"response_gain", response_gain},
          {"spatial_smoothness", spatial_smoothness}};
}

SyntheticWorldSpec SyntheticWorldSpec::from_json(const nlohmann::json& j) {
  SyntheticWorldSpec s;
  const std::set<std::string> known = {
      "concept_dim", "tokens", "embed_dim", "voxel_counts", "trial_noise_sd",
      "subject_mixing_seed", "n_train_stimuli", "n_test_stimuli", "trials_per_test_stimulus",
      "trials_per_train_stimulus", "n_sessions", "stimulus_pool", "token_perturbation",
      "response_gain", "spatial_smoothness"};
  if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown world spec key: " + key);
  }
  try {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    take("concept_dim", s.concept_dim);
    take("tokens", s.tokens);
    take("embed_dim", s.embed_dim);
    if (j.contains("voxel_counts")) {
      s.voxel_counts.clear();
      for (const auto& [k, v] : j.at("voxel_counts").items()) {
        s.voxel_counts[std::stoi(k)] = v.get<std::size_t>();
      }
    }
    take("trial_noise_sd", s.trial_noise_sd);
    take("subject_mixing_seed", s.subject_mixing_seed);
    take("n_train_stimuli", s.n_train_stimuli);
    take("n_test_stimuli", s.n_test_stimuli);
    take("trials_per_test_stimulus", s.trials_per_test_stimulus);
    take("trials_per_train_stimulus", s.trials_per_train_stimulus);
    take("n_sessions", s.n_sessions);
    take("stimulus_pool", s.stimulus_pool);
    take("token_perturbation", s.token_perturbation);
    take("response_gain", s.response_gain);
    take("spatial_smoothness", s.spatial_smoothness);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world spec type error: ") + e.what());
  }
  return s;
}

SyntheticWorld::SyntheticWorld(SyntheticWorldSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  const std::size_t k = spec_.concept_dim;
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));

  auto tok_rng = keyed_rng({seed_, kTagTokens});
  token_base_ = gaussian(k, spec_.embed_dim, inv_sqrt_k, tok_rng);
  for (std::size_t t = 0; t < spec_.tokens; ++t) {
    token_perturb_.push_back(
        gaussian(k, spec_.embed_dim, spec_.token_perturbation * inv_sqrt_k, tok_rng));
  }

  for (const auto& [subject, voxels] : spec_.voxel_counts) {
    auto rng = keyed_rng({seed_, kTagSubject, spec_.subject_mixing_seed,
                          static_cast<std::uint64_t>(subject)});
    Tensor raw = gaussian(voxels, k, 1.0, rng);
    Tensor map(voxels, k);
    // smooth each column along the voxel axis so neighbouring voxels co-vary
    const double sd = spec_.spatial_smoothness;
    const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sd));
    std::vector<double> kernel;
    for (std::ptrdiff_t o = -half; o <= half; ++o) {
      kernel.push_back(sd > 0.0 ? std::exp(-0.5 * static_cast<double>(o * o) / (sd * sd)) : 1.0);
    }
    const auto n = static_cast<std::ptrdiff_t>(voxels);
    for (std::size_t c = 0; c < k; ++c) {
      double ss = 0.0;
      for (std::ptrdiff_t v = 0; v < n; ++v) {
        double acc = 0.0;
        for (std::ptrdiff_t o = -half; o <= half; ++o) {
          const std::ptrdiff_t src = v + o;
          if (src < 0 || src >= n) continue;
          acc += kernel[static_cast<std::size_t>(o + half)] * raw(static_cast<std::size_t>(src), c);
        }
        map(static_cast<std::size_t>(v), c) = acc;
        ss += acc * acc;
      }
      const double norm = std::sqrt(ss / static_cast<double>(voxels));
      for (std::size_t v = 0; v < voxels; ++v) {
        map(v, c) *= spec_.response_gain * inv_sqrt_k / norm;
      }
    }
    response_maps_.emplace(subject, std::move(map));
  }
}

void SyntheticWorld::check_stimulus(StimulusId stimulus) const {
  if (stimulus < 0 || static_cast<std::size_t>(stimulus) >= spec_.stimulus_pool) {
    throw std::out_of_range("stimulus " + std::to_string(stimulus) + " outside the world pool");
  }
}

std::vector<double> SyntheticWorld::concept_vector(StimulusId stimulus) const {
  check_stimulus(stimulus);
  auto rng = keyed_rng({seed_, kTagConcept, static_cast<std::uint64_t>(stimulus)});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> c(spec_.concept_dim);
  for (double& v : c) v = normal(rng);
  return c;
}

Tensor SyntheticWorld::embedding(StimulusId stimulus) const {
  const auto c = concept_vector(stimulus);
  Tensor out(spec_.tokens, spec_.embed_dim);
  for (std::size_t t = 0; t < spec_.tokens; ++t) {
    for (std::size_t j = 0; j < spec_.embed_dim; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < spec_.concept_dim; ++i) {
        acc += c[i] * (token_base_(i, j) + token_perturb_[t](i, j));
      }
      out(t, j) = round_to_f32(acc);
    }
  }
  return out;
}

const Tensor& SyntheticWorld::response_map(SubjectId subject) const {
  auto it = response_maps_.find(subject);
  if (it == response_maps_.end()) {
    throw std::out_of_range("subject " + std::to_string(subject) + " not in the world");
  }
  return it->second;
}

std::vector<double> SyntheticWorld::clean_response(SubjectId subject, StimulusId stimulus) const {
  const Tensor& map = response_map(subject);
  const auto c = concept_vector(stimulus);
  std::vector<double> y(map.rows());
  for (std::size_t v = 0; v < map.rows(); ++v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) acc += map(v, i) * c[i];
    y[v] = std::tanh(acc);
  }
  return y;
}

std::vector<double> SyntheticWorld::response(SubjectId subject, StimulusId stimulus,
                                             std::size_t trial) const {
  auto y = clean_response(subject, stimulus);
  if (spec_.trial_noise_sd > 0.0) {
    auto rng = keyed_rng({seed_, kTagTrial, static_cast<std::uint64_t>(subject),
                          static_cast<std::uint64_t>(stimulus), trial});
    std::normal_distribution<double> normal(0.0, spec_.trial_noise_sd);
    for (double& v : y) v += normal(rng);
  }
  for (double& v : y) v = round_to_f32(v);
  return y;
}

}  // namespace synbrain
