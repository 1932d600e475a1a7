#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "synbrain/brainvae.hpp"
#include "synbrain/dataset.hpp"
#include "synbrain/metrics.hpp"
#include "synbrain/objectives.hpp"
#include "synbrain/optimizer.hpp"
#include "synbrain/s2n.hpp"

namespace synbrain {

/// A loss component became NaN or infinite; training stops.
class NanLossError : public std::runtime_error {
 public:
  NanLossError(const std::string& component, const std::string& detail)
      : std::runtime_error("non-finite " + component + " loss: " + detail), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

/// Violated experimental protocol (subject reuse, stimulus leakage).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TrainLogEntry {
  std::string phase;  // stage1, stage2, adapt-vae, adapt-s2n
  std::string split;  // train or val
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossReport report;
  double wall_s = 0.0;

  nlohmann::json to_json() const;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  /// One JSON object per line. Without wall times the file depends only on
  /// the inputs and seed.
  void write_jsonl(const std::filesystem::path& path, bool include_wall = true) const;
  /// Equality of everything except wall time.
  bool same_trajectory(const TrainLog& other) const;
};

/// Train/validation partition of a dataset's training samples, holding out
/// a fraction of stimuli (all their samples) for validation.
struct ValidationSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
ValidationSplit split_validation(const Dataset& dataset, double val_fraction, std::mt19937_64& rng);

/// One (fMRI, embedding, epsilon) triple of a stage-1 batch.
struct BatchItem {
  std::span<const double> fmri;
  const Tensor* z_clip = nullptr;
  Tensor eps;  // tokens x latent_dim; zeros for the posterior mean
};

/// Records the composite loss of a batch on g: mean MSE + lambda_kl * mean KL
/// + lambda_clip * SoftCLIP over the sampled latents. The contrastive term
/// is skipped for batches of one or when lambda_clip is zero. Fills report.
Var stage1_objective(Graph& g, const BrainVae& vae, std::span<const BatchItem> batch,
                     const ModelConfig& config, LossReport& report);

struct Stage1Options {
  std::size_t max_epochs = 0;       // 0 uses config.max_epochs
  std::size_t batch_size = 0;       // 0 uses config.batch_size
  bool sample_latent = true;        // false trains a deterministic autoencoder (eps = 0)
  std::filesystem::path log_path;   // JSONL log, skipped when empty
  const TrainState* resume = nullptr;
  std::size_t stop_after_epochs = 0;  // stop (without finishing) after this many epochs; 0 = never
  const BrainVae* init = nullptr;     // warm start instead of a fresh init
  std::string phase = "stage1";
};

struct Stage1Result {
  BrainVae vae;  // best-validation snapshot
  TrainLog log;
  TrainState state;
  bool early_stopped = false;
  double initial_val_mse = 0.0;
  double best_val_mse = 0.0;
};

/// Minimizes the composite objective over the dataset's training samples
/// with AdamW and early stopping on validation total loss.
Stage1Result train_stage1(const Dataset& dataset, const ModelConfig& config, std::mt19937_64& rng,
                          const Stage1Options& options = {});

struct Stage2Options {
  std::size_t steps = 0;       // 0 uses config.s2n_steps
  std::size_t eval_every = 0;  // 0 uses config.s2n_eval_every
  std::size_t batch_size = 0;  // 0 uses config.batch_size
  Partition partition = Partition::full;
  std::filesystem::path log_path;
  const S2nMapper* init = nullptr;
  std::string phase = "stage2";
};

struct Stage2Result {
  S2nMapper s2n;  // best-validation snapshot
  TrainLog log;
  double initial_val = 0.0;
  double best_val = 0.0;
  double zero_baseline = 0.0;  // validation loss of predicting all zeros
};

/// Regresses the frozen VAE's posterior means from semantic embeddings.
Stage2Result train_stage2(const Dataset& dataset, const BrainVae& vae, const ModelConfig& config,
                          std::mt19937_64& rng, const Stage2Options& options = {});

struct AdaptResult {
  BrainVae vae;
  S2nMapper s2n;
  std::set<SubjectId> source_subjects;
  SubjectId target_subject = 0;
  TrainLog log;
};

/// Fine-tunes the whole VAE and the MLP leaves of the mapper on a novel
/// subject's data. The novel subject must not be among the source subjects.
AdaptResult adapt_few_shot(const BrainVae& source_vae, const S2nMapper& source_s2n,
                           const std::set<SubjectId>& source_subjects, const Dataset& novel,
                           const ModelConfig& config, std::mt19937_64& rng);

/// z = mapper(z_clip) + nf * eps, decoded to `voxels` values. Without a
/// mapper the embedding itself is decoded. nf = 0 draws nothing.
std::vector<double> synthesize(const Tensor& z_clip, const S2nMapper* s2n, const BrainVae& vae,
                               double nf, std::mt19937_64& rng, std::size_t voxels);

/// Token-mean of the posterior mean: the fMRI embedding used for retrieval.
std::vector<double> fmri_embedding(const BrainVae& vae, std::span<const double> fmri);
/// Token-mean of a semantic grid.
std::vector<double> pooled(const Tensor& grid);

struct EvalOptions {
  std::size_t candidates = 300;
  std::size_t repeats = 30;
  std::size_t two_way_trials = 1000;
  double nf = 0.0;
  double perturb_sd = 0.1;  // noise added to encoded latents for the gap diagnostic
};

/// Full metric battery on one subject's test split. The retrieval gallery
/// is every embedding in the dataset that no training sample uses.
EvalReport evaluate(const BrainVae& vae, const S2nMapper* s2n, const Dataset& dataset,
                    SubjectId subject, const EvalOptions& options, std::mt19937_64& rng);

/// Trial-averaged test responses of one subject, keyed by stimulus.
std::map<StimulusId, std::vector<std::vector<double>>> test_trials(const Dataset& dataset,
                                                                   SubjectId subject);
std::vector<double> average_trials(const std::vector<std::vector<double>>& trials);

/// stage.json beside a checkpoint: subjects trained on and provenance.
void write_stage_meta(const std::filesystem::path& dir, const nlohmann::json& meta);
nlohmann::json read_stage_meta(const std::filesystem::path& dir);

}  // namespace synbrain
