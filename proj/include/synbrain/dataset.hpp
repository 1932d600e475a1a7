#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "synbrain/params.hpp"
#include "synbrain/world.hpp"

namespace synbrain {

/// Raised when a request exceeds what a world or dataset can provide.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

enum class Split { train, test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct FmriSample {
  SubjectId subject = 0;
  StimulusId stimulus = 0;
  std::size_t trial = 0;
  Split split = Split::train;
  int session = 0;
  std::vector<double> values;
};

/// Samples plus the token-grid embedding of every referenced stimulus.
struct Dataset {
  std::map<SubjectId, std::size_t> voxel_counts;
  std::size_t tokens = 0;
  std::size_t embed_dim = 0;
  std::size_t n_sessions = 1;
  std::vector<FmriSample> samples;
  std::map<StimulusId, Tensor> embeddings;

  /// Throws std::invalid_argument on a broken invariant (missing embedding,
  /// wrong vector length, non-finite value, session out of range).
  void validate() const;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, SubjectId subject) const;
  std::set<StimulusId> stimuli(Split split) const;
  std::set<StimulusId> stimuli() const;
  std::set<SubjectId> subjects() const;
};

struct SplitSizes {
  std::size_t n_train = 200;
  std::size_t n_test = 20;
  std::size_t trials_per_train = 1;
  std::size_t trials_per_test = 3;
  std::size_t n_sessions = 40;
  /// Subjects to record; empty means every subject of the world.
  std::vector<SubjectId> subjects;
  /// Stimulus ids that must not be drawn.
  std::set<StimulusId> exclude;

  static SplitSizes from_world(const SyntheticWorldSpec& spec);
};

/// Draws disjoint train/test stimulus sets from the world pool and records
/// every requested subject's trials. Sessions split each subject's sample
/// list (train then test, in draw order) into n_sessions near-equal chunks.
Dataset sample_dataset(const SyntheticWorld& world, const SplitSizes& sizes, std::mt19937_64& rng);

/// Samples of the first n_sessions sessions, with embeddings restricted to
/// the stimuli they reference.
Dataset subset_hours(const Dataset& dataset, std::size_t n_sessions);

/// Keeps only the listed subjects.
Dataset filter_subjects(const Dataset& dataset, const std::set<SubjectId>& subjects);

/// Up to `count` world stimuli never used by `used`, in a seeded random order.
std::vector<StimulusId> unseen_stimuli(const SyntheticWorld& world, const std::set<StimulusId>& used,
                                       std::size_t count, std::mt19937_64& rng);

/// Directory with manifest.json, fmri.bin and emb.bin (little-endian float32).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace synbrain
