#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "synbrain/brainvae.hpp"
#include "synbrain/dataset.hpp"
#include "synbrain/metrics.hpp"
#include "synbrain/s2n.hpp"

namespace synbrain {

/// Real samples of one subject followed by synthesized ones. Synthetic
/// samples occupy `samples[real_count..]` of `data` and are tagged in
/// the provenance record.
struct AugmentedSet {
  Dataset data;
  std::size_t real_count = 0;
  std::string source_model;
  double nf = 0.0;
  double hours_equiv = 0.0;

  std::size_t synthetic_count() const { return data.samples.size() - real_count; }
  std::set<StimulusId> synthetic_stimuli() const;
  nlohmann::json provenance() const;

  /// Dataset directory plus provenance.json.
  void save(const std::filesystem::path& dir) const;
  static AugmentedSet load(const std::filesystem::path& dir);
};

/// Synthesizes one sample per unseen stimulus, hours_equiv sessions' worth:
/// the count is hours_equiv times the real subset's per-session training
/// sample count. Unseen stimuli must be disjoint from the real subset.
AugmentedSet generate_augmented_set(const BrainVae& vae, const S2nMapper& s2n,
                                    const std::string& model_id, const Dataset& real_subset,
                                    const std::map<StimulusId, Tensor>& unseen, double hours_equiv,
                                    double nf, std::mt19937_64& rng);

/// Ridge regression from fMRI vectors to pooled embeddings with an
/// unpenalized intercept.
struct ToyDecoder {
  Tensor weights;  // voxels x embed_dim
  std::vector<double> x_mean, y_mean;
  double ridge = 0.0;
  std::set<StimulusId> trained_on;

  std::vector<double> predict(std::span<const double> fmri) const;
};

ToyDecoder train_toy_decoder(const std::vector<std::vector<double>>& x,
                             const std::vector<std::vector<double>>& y, double ridge);
/// Training-split pairs of a dataset: fMRI -> token-mean embedding.
ToyDecoder train_toy_decoder(const Dataset& pairs, double ridge);

struct DecoderEval {
  RetrievalStats image_retrieval;  // decoded embedding -> image embeddings
  RetrievalStats brain_retrieval;  // image embedding -> decoded embeddings
  double two_way = 0.0;
  std::size_t image_candidates = 0, brain_candidates = 0;

  nlohmann::json to_json() const;
};

/// Decodes the subject's trial-averaged test responses. The image gallery is
/// every embedding the dataset does not train on, minus the decoder's own
/// training stimuli; the brain gallery is the decoded test set, so its
/// candidate count is capped by the number of test stimuli. Stimuli in
/// `exclude` are also left out of the image gallery, so decoders trained on
/// different synthetic sets can share one gallery.
DecoderEval eval_decoder(const ToyDecoder& decoder, const Dataset& dataset, SubjectId subject,
                         std::size_t candidates, std::size_t repeats, std::mt19937_64& rng,
                         const std::set<StimulusId>& exclude = {});

}  // namespace synbrain
