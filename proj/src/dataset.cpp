#include "synbrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"

namespace synbrain {

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FmriSample& s = samples[i];
    const std::string where = "sample " + std::to_string(i);
    auto vc = voxel_counts.find(s.subject);
    if (vc == voxel_counts.end()) {
      throw std::invalid_argument(where + ": subject " + std::to_string(s.subject) + " unknown");
    }
    if (s.values.size() != vc->second) {
      throw std::invalid_argument(where + ": expected " + std::to_string(vc->second) +
                                  " voxels, got " + std::to_string(s.values.size()));
    }
    if (!all_finite(s.values)) throw std::invalid_argument(where + ": non-finite voxel value");
    if (!embeddings.contains(s.stimulus)) {
      throw std::invalid_argument(where + ": stimulus " + std::to_string(s.stimulus) +
                                  " has no embedding");
    }
    if (s.session < 0 || static_cast<std::size_t>(s.session) >= n_sessions) {
      throw std::invalid_argument(where + ": session out of range");
    }
  }
  for (const auto& [id, e] : embeddings) {
    if (e.rows() != tokens || e.cols() != embed_dim) {
      throw std::invalid_argument("embedding " + std::to_string(id) + " has shape " +
                                  e.shape_string());
    }
    if (!all_finite(e.values())) {
      throw std::invalid_argument("embedding " + std::to_string(id) + " is not finite");
    }
  }
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices(Split split, SubjectId subject) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split && samples[i].subject == subject) out.push_back(i);
  }
  return out;
}

std::set<StimulusId> Dataset::stimuli(Split split) const {
  std::set<StimulusId> out;
  for (const auto& s : samples) {
    if (s.split == split) out.insert(s.stimulus);
  }
  return out;
}

std::set<StimulusId> Dataset::stimuli() const {
  std::set<StimulusId> out;
  for (const auto& s : samples) out.insert(s.stimulus);
  return out;
}

std::set<SubjectId> Dataset::subjects() const {
  std::set<SubjectId> out;
  for (const auto& s : samples) out.insert(s.subject);
  return out;
}

SplitSizes SplitSizes::from_world(const SyntheticWorldSpec& spec) {
  SplitSizes s;
  s.n_train = spec.n_train_stimuli;
  s.n_test = spec.n_test_stimuli;
  s.trials_per_train = spec.trials_per_train_stimulus;
  s.trials_per_test = spec.trials_per_test_stimulus;
  s.n_sessions = spec.n_sessions;
  return s;
}

Dataset sample_dataset(const SyntheticWorld& world, const SplitSizes& sizes, std::mt19937_64& rng) {
  const SyntheticWorldSpec& spec = world.spec();
  if (sizes.n_train + sizes.n_test == 0) throw SizeError("dataset needs at least one stimulus");
  if (sizes.trials_per_train == 0 || sizes.trials_per_test == 0) {
    throw SizeError("at least one trial per stimulus is required");
  }
  if (sizes.n_sessions == 0) throw SizeError("n_sessions must be positive");

  std::vector<StimulusId> pool;
  for (std::size_t i = 0; i < spec.stimulus_pool; ++i) {
    const auto id = static_cast<StimulusId>(i);
    if (!sizes.exclude.contains(id)) pool.push_back(id);
  }
  const std::size_t wanted = sizes.n_train + sizes.n_test;
  if (wanted > pool.size()) {
    throw SizeError("requested " + std::to_string(wanted) + " stimuli but the world has only " +
                    std::to_string(pool.size()) + " available");
  }
  // partial Fisher-Yates: the first `wanted` entries become the draw
  for (std::size_t i = 0; i < wanted; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  const std::vector<StimulusId> train(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(sizes.n_train));
  const std::vector<StimulusId> test(pool.begin() + static_cast<std::ptrdiff_t>(sizes.n_train),
                                     pool.begin() + static_cast<std::ptrdiff_t>(wanted));

  std::vector<SubjectId> subjects = sizes.subjects;
  if (subjects.empty()) {
    for (const auto& [s, _] : spec.voxel_counts) subjects.push_back(s);
  }
  // subject-major order matches the on-disk layout, so round trips keep order
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

  Dataset ds;
  ds.tokens = spec.tokens;
  ds.embed_dim = spec.embed_dim;
  ds.n_sessions = sizes.n_sessions;
  for (SubjectId subject : subjects) {
    ds.voxel_counts[subject] = world.response_map(subject).rows();
    std::vector<FmriSample> own;
    auto emit = [&](const std::vector<StimulusId>& ids, std::size_t trials, Split split) {
      for (StimulusId id : ids) {
        for (std::size_t t = 0; t < trials; ++t) {
          own.push_back({subject, id, t, split, 0, world.response(subject, id, t)});
        }
      }
    };
    emit(train, sizes.trials_per_train, Split::train);
    emit(test, sizes.trials_per_test, Split::test);
    if (own.size() < sizes.n_sessions) {
      throw SizeError("subject " + std::to_string(subject) + " has " + std::to_string(own.size()) +
                      " samples, fewer than " + std::to_string(sizes.n_sessions) + " sessions");
    }
    for (std::size_t i = 0; i < own.size(); ++i) {
      own[i].session = static_cast<int>(i * sizes.n_sessions / own.size());
    }
    std::move(own.begin(), own.end(), std::back_inserter(ds.samples));
  }
  for (StimulusId id : train) ds.embeddings.emplace(id, world.embedding(id));
  for (StimulusId id : test) ds.embeddings.emplace(id, world.embedding(id));
  return ds;
}

namespace {

Dataset keep_samples(const Dataset& dataset, const std::function<bool(const FmriSample&)>& keep) {
  Dataset out;
  out.voxel_counts = dataset.voxel_counts;
  out.tokens = dataset.tokens;
  out.embed_dim = dataset.embed_dim;
  out.n_sessions = dataset.n_sessions;
  for (const auto& s : dataset.samples) {
    if (!keep(s)) continue;
    out.samples.push_back(s);
    if (!out.embeddings.contains(s.stimulus)) {
      out.embeddings.emplace(s.stimulus, dataset.embeddings.at(s.stimulus));
    }
  }
  // embeddings no sample refers to are distractors and always travel along
  const std::set<StimulusId> referenced = dataset.stimuli();
  for (const auto& [id, emb] : dataset.embeddings) {
    if (!referenced.contains(id)) out.embeddings.emplace(id, emb);
  }
  return out;
}

}  // namespace

Dataset subset_hours(const Dataset& dataset, std::size_t n_sessions) {
  if (n_sessions < 1 || n_sessions > dataset.n_sessions) {
    throw std::out_of_range("n_sessions must lie in [1, " + std::to_string(dataset.n_sessions) +
                            "], got " + std::to_string(n_sessions));
  }
  if (n_sessions == dataset.n_sessions) return dataset;
  // session ids keep their meaning, so the session count is not renumbered
  return keep_samples(dataset, [&](const FmriSample& s) {
    return static_cast<std::size_t>(s.session) < n_sessions;
  });
}

Dataset filter_subjects(const Dataset& dataset, const std::set<SubjectId>& subjects) {
  Dataset out = keep_samples(dataset, [&](const FmriSample& s) { return subjects.contains(s.subject); });
  std::erase_if(out.voxel_counts, [&](const auto& kv) { return !subjects.contains(kv.first); });
  return out;
}

std::vector<StimulusId> unseen_stimuli(const SyntheticWorld& world, const std::set<StimulusId>& used,
                                       std::size_t count, std::mt19937_64& rng) {
  std::vector<StimulusId> free;
  for (std::size_t i = 0; i < world.spec().stimulus_pool; ++i) {
    const auto id = static_cast<StimulusId>(i);
    if (!used.contains(id)) free.push_back(id);
  }
  if (count > free.size()) {
    throw SizeError("asked for " + std::to_string(count) + " unseen stimuli, only " +
                    std::to_string(free.size()) + " remain");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, free.size() - 1);
    std::swap(free[i], free[pick(rng)]);
  }
  free.resize(count);
  return free;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

void write_f32(std::ofstream& out, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<float> read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing " + path.string());
  const auto bytes = std::filesystem::file_size(path);
  if (bytes % sizeof(float) != 0) {
    throw FormatError(path.filename().string() + " has " + std::to_string(bytes) +
                      " bytes, not a whole number of float32 values");
  }
  std::vector<float> buf(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  return buf;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "synbrain-dataset";
  m["version"] = 1;
  m["dtype"] = "f32-le";
  m["tokens"] = dataset.tokens;
  m["embed_dim"] = dataset.embed_dim;
  m["n_sessions"] = dataset.n_sessions;
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& [s, v] : dataset.voxel_counts) subjects.push_back({{"id", s}, {"voxels", v}});
  m["subjects"] = subjects;

  std::ofstream fmri(dir / "fmri.bin", std::ios::binary | std::ios::trunc);
  if (!fmri) throw FormatError("cannot write " + (dir / "fmri.bin").string());
  nlohmann::json records = nlohmann::json::array();
  std::size_t offset = 0;
  // one contiguous section per subject, samples in dataset order within it
  for (const auto& [subject, voxels] : dataset.voxel_counts) {
    for (const auto& s : dataset.samples) {
      if (s.subject != subject) continue;
      records.push_back({{"subject", s.subject},
                         {"stimulus", s.stimulus},
                         {"trial", s.trial},
                         {"split", split_name(s.split)},
                         {"session", s.session},
                         {"offset", offset}});
      write_f32(fmri, s.values);
      offset += voxels;
    }
  }
  m["samples"] = records;

  std::ofstream emb(dir / "emb.bin", std::ios::binary | std::ios::trunc);
  if (!emb) throw FormatError("cannot write " + (dir / "emb.bin").string());
  nlohmann::json embs = nlohmann::json::array();
  offset = 0;
  for (const auto& [id, e] : dataset.embeddings) {
    embs.push_back({{"stimulus", id}, {"offset", offset}});
    write_f32(emb, e.values());
    offset += e.size();
  }
  m["embeddings"] = embs;

  std::ofstream js(dir / "manifest.json", std::ios::trunc);
  js << m.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw FormatError("missing " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    js >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  const std::vector<float> fmri = read_blob(dir / "fmri.bin");
  const std::vector<float> emb = read_blob(dir / "emb.bin");

  Dataset ds;
  try {
    if (m.value("dtype", "") != "f32-le") throw FormatError("manifest.json: dtype must be f32-le");
    ds.tokens = m.at("tokens").get<std::size_t>();
    ds.embed_dim = m.at("embed_dim").get<std::size_t>();
    ds.n_sessions = m.at("n_sessions").get<std::size_t>();
    for (const auto& s : m.at("subjects")) {
      ds.voxel_counts[s.at("id").get<SubjectId>()] = s.at("voxels").get<std::size_t>();
    }
    std::size_t fmri_used = 0;
    const auto& records = m.at("samples");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      FmriSample s;
      s.subject = r.at("subject").get<SubjectId>();
      s.stimulus = r.at("stimulus").get<StimulusId>();
      s.trial = r.at("trial").get<std::size_t>();
      s.split = parse_split(r.at("split").get<std::string>());
      s.session = r.at("session").get<int>();
      auto vc = ds.voxel_counts.find(s.subject);
      if (vc == ds.voxel_counts.end()) {
        throw FormatError("sample record " + std::to_string(i) + " names unknown subject " +
                          std::to_string(s.subject));
      }
      const auto offset = r.at("offset").get<std::size_t>();
      if (offset + vc->second > fmri.size()) {
        throw FormatError("sample record " + std::to_string(i) + " (subject " +
                          std::to_string(s.subject) + ", stimulus " + std::to_string(s.stimulus) +
                          ") runs past the end of fmri.bin");
      }
      s.values.assign(fmri.begin() + static_cast<std::ptrdiff_t>(offset),
                      fmri.begin() + static_cast<std::ptrdiff_t>(offset + vc->second));
      fmri_used += vc->second;
      ds.samples.push_back(std::move(s));
    }
    if (fmri_used != fmri.size()) {
      throw FormatError("fmri.bin holds " + std::to_string(fmri.size()) + " values, manifest accounts for " +
                        std::to_string(fmri_used));
    }
    const std::size_t grid = ds.tokens * ds.embed_dim;
    const auto& embs = m.at("embeddings");
    for (std::size_t i = 0; i < embs.size(); ++i) {
      const auto id = embs[i].at("stimulus").get<StimulusId>();
      const auto offset = embs[i].at("offset").get<std::size_t>();
      if (offset + grid > emb.size()) {
        throw FormatError("embedding record " + std::to_string(i) + " (stimulus " +
                          std::to_string(id) + ") runs past the end of emb.bin");
      }
      Tensor t(ds.tokens, ds.embed_dim);
      std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(offset), grid, t.data());
      ds.embeddings.emplace(id, std::move(t));
    }
    if (embs.size() * grid != emb.size()) {
      throw FormatError("emb.bin holds " + std::to_string(emb.size()) + " values, manifest accounts for " +
                        std::to_string(embs.size() * grid));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("dataset invalid after load: ") + e.what());
  }
  return ds;
}

}  // namespace synbrain
