#include "synbrain/augmentation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "synbrain/pipeline.hpp"

namespace synbrain {

std::set<StimulusId> AugmentedSet::synthetic_stimuli() const {
  std::set<StimulusId> out;
  for (std::size_t i = real_count; i < data.samples.size(); ++i) out.insert(data.samples[i].stimulus);
  return out;
}

nlohmann::json AugmentedSet::provenance() const {
  const auto syn = synthetic_stimuli();
  return {{"source_model", source_model},
          {"nf", nf},
          {"hours_equiv", hours_equiv},
          {"real_count", real_count},
          {"synthetic_count", synthetic_count()},
          {"synthetic_stimuli", std::vector<StimulusId>(syn.begin(), syn.end())}};
}

void AugmentedSet::save(const std::filesystem::path& dir) const {
  save_dataset(data, dir);
  std::ofstream out(dir / "provenance.json", std::ios::trunc);
  out << provenance().dump(2) << '\n';
}

AugmentedSet AugmentedSet::load(const std::filesystem::path& dir) {
  AugmentedSet a;
  a.data = load_dataset(dir);
  std::ifstream in(dir / "provenance.json");
  if (!in) throw FormatError("missing " + (dir / "provenance.json").string());
  try {
    nlohmann::json p;
    in >> p;
    a.real_count = p.at("real_count").get<std::size_t>();
    a.source_model = p.at("source_model").get<std::string>();
    a.nf = p.at("nf").get<double>();
    a.hours_equiv = p.at("hours_equiv").get<double>();
    if (a.real_count + p.at("synthetic_count").get<std::size_t>() != a.data.samples.size()) {
      throw FormatError("provenance.json counts disagree with the dataset");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("provenance.json: " + std::string(e.what()));
  }
  return a;
}

AugmentedSet generate_augmented_set(const BrainVae& vae, const S2nMapper& s2n,
                                    const std::string& model_id, const Dataset& real_subset,
                                    const std::map<StimulusId, Tensor>& unseen, double hours_equiv,
                                    double nf, std::mt19937_64& rng) {
  const auto subjects = real_subset.subjects();
  if (subjects.size() != 1) throw ProtocolError("augmentation expects a single-subject real subset");
  const SubjectId subject = *subjects.begin();
  const std::set<StimulusId> real_stims = real_subset.stimuli();
  for (const auto& [id, _] : unseen) {
    if (real_stims.contains(id)) {
      throw ProtocolError("stimulus " + std::to_string(id) + " is both real and a synthesis source");
    }
  }
  if (hours_equiv < 0.0) throw std::invalid_argument("hours_equiv must be non-negative");

  const auto train_idx = real_subset.indices(Split::train, subject);
  std::set<int> sessions;
  for (std::size_t i : train_idx) sessions.insert(real_subset.samples[i].session);
  const double per_session =
      sessions.empty() ? 0.0 : static_cast<double>(train_idx.size()) / static_cast<double>(sessions.size());
  const auto count = static_cast<std::size_t>(std::llround(hours_equiv * per_session));
  if (count > unseen.size()) {
    throw SizeError("need " + std::to_string(count) + " unseen stimuli, have " +
                    std::to_string(unseen.size()));
  }

  AugmentedSet a;
  a.source_model = model_id;
  a.nf = nf;
  a.hours_equiv = hours_equiv;
  a.data = real_subset;
  a.real_count = real_subset.samples.size();
  const std::size_t voxels = real_subset.voxel_counts.at(subject);
  std::size_t made = 0;
  for (const auto& [id, emb] : unseen) {
    if (made == count) break;
    FmriSample s{subject, id, 0, Split::train, 0, synthesize(emb, &s2n, vae, nf, rng, voxels)};
    a.data.samples.push_back(std::move(s));
    a.data.embeddings.emplace(id, emb);
    ++made;
  }
  return a;
}

std::vector<double> ToyDecoder::predict(std::span<const double> fmri) const {
  if (fmri.size() != weights.rows()) {
    throw ShapeError("decoder expects " + std::to_string(weights.rows()) + " voxels, got " +
                     std::to_string(fmri.size()));
  }
  std::vector<double> out = y_mean;
  for (std::size_t v = 0; v < weights.rows(); ++v) {
    const double x = fmri[v] - x_mean[v];
    for (std::size_t c = 0; c < weights.cols(); ++c) out[c] += x * weights(v, c);
  }
  return out;
}

ToyDecoder train_toy_decoder(const std::vector<std::vector<double>>& x,
                             const std::vector<std::vector<double>>& y, double ridge) {
  if (x.empty() || x.size() != y.size()) throw ShapeError("decoder needs matching, non-empty pairs");
  if (!(ridge >= 0.0)) throw std::invalid_argument("ridge strength must be non-negative");
  const std::size_t n = x.size(), v = x.front().size(), d = y.front().size();
  Eigen::MatrixXd X(n, v), Y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != v || y[i].size() != d) throw ShapeError("decoder pairs have ragged lengths");
    for (std::size_t j = 0; j < v; ++j) X(i, j) = x[i][j];
    for (std::size_t j = 0; j < d; ++j) Y(i, j) = y[i][j];
  }
  const Eigen::RowVectorXd xm = X.colwise().mean(), ym = Y.colwise().mean();
  X.rowwise() -= xm;
  Y.rowwise() -= ym;

  Eigen::MatrixXd W;
  if (ridge == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(X.transpose() * X);
    if (!lu.isInvertible()) {
      throw std::domain_error("ridge system is singular; use a positive ridge strength");
    }
    W = lu.solve(X.transpose() * Y);
  } else if (n < v) {
    // dual form: W = X^T (X X^T + lambda I)^-1 Y
    Eigen::MatrixXd K = X * X.transpose();
    K.diagonal().array() += ridge;
    W = X.transpose() * K.ldlt().solve(Y);
  } else {
    Eigen::MatrixXd G = X.transpose() * X;
    G.diagonal().array() += ridge;
    W = G.ldlt().solve(X.transpose() * Y);
  }

  ToyDecoder dec;
  dec.ridge = ridge;
  dec.weights = Tensor(v, d);
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t j = 0; j < d; ++j) dec.weights(i, j) = W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  dec.x_mean.assign(xm.data(), xm.data() + v);
  dec.y_mean.assign(ym.data(), ym.data() + d);
  return dec;
}

ToyDecoder train_toy_decoder(const Dataset& pairs, double ridge) {
  std::vector<std::vector<double>> x, y;
  std::set<StimulusId> stims;
  for (std::size_t i : pairs.indices(Split::train)) {
    const FmriSample& s = pairs.samples[i];
    x.push_back(s.values);
    y.push_back(pooled(pairs.embeddings.at(s.stimulus)));
    stims.insert(s.stimulus);
  }
  ToyDecoder dec = train_toy_decoder(x, y, ridge);
  dec.trained_on = std::move(stims);
  return dec;
}

nlohmann::json DecoderEval::to_json() const {
  return {{"image_retrieval", {{"mean", image_retrieval.mean}, {"sd", image_retrieval.sd}}},
          {"brain_retrieval", {{"mean", brain_retrieval.mean}, {"sd", brain_retrieval.sd}}},
          {"two_way", two_way},
          {"image_candidates", image_candidates},
          {"brain_candidates", brain_candidates}};
}

DecoderEval eval_decoder(const ToyDecoder& decoder, const Dataset& dataset, SubjectId subject,
                         std::size_t candidates, std::size_t repeats, std::mt19937_64& rng,
                         const std::set<StimulusId>& exclude) {
  const auto trials = test_trials(dataset, subject);
  if (trials.size() < 2) throw SizeError("decoder evaluation needs at least two test stimuli");
  for (const auto& [id, _] : trials) {
    if (decoder.trained_on.contains(id)) {
      throw ProtocolError("test stimulus " + std::to_string(id) + " was used to train the decoder");
    }
  }
  const std::set<StimulusId> train = dataset.stimuli(Split::train);
  std::vector<StimulusId> gallery_ids;
  for (const auto& [id, _] : trials) gallery_ids.push_back(id);
  for (const auto& [id, _] : dataset.embeddings) {
    if (!train.contains(id) && !trials.contains(id) && !decoder.trained_on.contains(id) &&
        !exclude.contains(id)) {
      gallery_ids.push_back(id);
    }
  }
  const std::size_t d = dataset.embed_dim, n = trials.size();
  Tensor gallery(gallery_ids.size(), d);
  for (std::size_t r = 0; r < gallery_ids.size(); ++r) {
    const auto p = pooled(dataset.embeddings.at(gallery_ids[r]));
    std::copy(p.begin(), p.end(), gallery.row_span(r).begin());
  }
  Tensor decoded(n, d), images(n, d);
  std::vector<std::size_t> truth;
  std::size_t r = 0;
  for (const auto& [id, ts] : trials) {
    const auto p = decoder.predict(average_trials(ts));
    std::copy(p.begin(), p.end(), decoded.row_span(r).begin());
    std::copy(gallery.row_span(r).begin(), gallery.row_span(r).end(), images.row_span(r).begin());
    truth.push_back(r++);
  }
  DecoderEval out;
  out.image_candidates = std::min(candidates, gallery.rows());
  out.brain_candidates = std::min(candidates, n);
  out.image_retrieval = retrieval_accuracy(decoded, gallery, truth, out.image_candidates, repeats, rng);
  out.brain_retrieval = retrieval_accuracy(images, decoded, truth, out.brain_candidates, repeats, rng);
  out.two_way = two_way_accuracy(images, decoded, rng);
  return out;
}

}  // namespace synbrain
