#include "synbrain/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace synbrain {

nlohmann::json TrainLogEntry::to_json() const {
  nlohmann::json j = report.to_json();
  j["phase"] = phase;
  j["split"] = split;
  j["step"] = step;
  j["epoch"] = epoch;
  j["wall_s"] = wall_s;
  return j;
}

void TrainLog::write_jsonl(const std::filesystem::path& path, bool include_wall) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j = e.to_json();
    if (!include_wall) j.erase("wall_s");
    out << j.dump() << '\n';
  }
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    nlohmann::json a = entries[i].to_json(), b = other.entries[i].to_json();
    a.erase("wall_s");
    b.erase("wall_s");
    if (a != b) return false;
  }
  return true;
}

ValidationSplit split_validation(const Dataset& dataset, double val_fraction, std::mt19937_64& rng) {
  const std::set<StimulusId> stim_set = dataset.stimuli(Split::train);
  std::vector<StimulusId> stims(stim_set.begin(), stim_set.end());
  std::shuffle(stims.begin(), stims.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::ceil(val_fraction * static_cast<double>(stims.size()) - 1e-9));
  // keep at least one training stimulus
  const std::size_t held = std::min(n_val, stims.size() > 0 ? stims.size() - 1 : 0);
  const std::set<StimulusId> val_stims(stims.begin(), stims.begin() + static_cast<std::ptrdiff_t>(held));
  ValidationSplit out;
  for (std::size_t i : dataset.indices(Split::train)) {
    (val_stims.contains(dataset.samples[i].stimulus) ? out.val : out.train).push_back(i);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Splits indices into ceil(n / b) chunks whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& idx, std::size_t b) {
  std::vector<std::vector<std::size_t>> out;
  if (idx.empty()) return out;
  const std::size_t n = idx.size();
  const std::size_t nb = (n + b - 1) / b;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < nb; ++k) {
    const std::size_t len = n / nb + (k < n % nb ? 1 : 0);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                     idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

void check_finite(const LossReport& r, const std::string& where) {
  if (!std::isfinite(r.mse)) throw NanLossError("mse", where);
  if (!std::isfinite(r.kl)) throw NanLossError("kl", where);
  if (!std::isfinite(r.clip)) throw NanLossError("clip", where);
  if (!std::isfinite(r.total)) throw NanLossError("total", where);
}

AdamWSettings adam_settings(const ModelConfig& c, double lr) {
  return {lr, c.beta1, c.beta2, c.adam_eps, c.weight_decay};
}

std::vector<BatchItem> make_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                                  const ModelConfig& c, std::mt19937_64* eps_rng) {
  std::vector<BatchItem> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) {
    const FmriSample& s = ds.samples[i];
    Tensor eps = eps_rng ? sample_epsilon(c.hidden_tokens, c.latent_dim, *eps_rng)
                         : Tensor(c.hidden_tokens, c.latent_dim);
    batch.push_back({s.values, &ds.embeddings.at(s.stimulus), std::move(eps)});
  }
  return batch;
}

/// Deterministic (eps = 0) loss over a sample set, chunked like training.
LossReport stage1_eval(const BrainVae& vae, const Dataset& ds, const std::vector<std::size_t>& idx,
                       const ModelConfig& c, std::size_t batch_size) {
  LossReport acc;
  std::size_t n = 0;
  for (const auto& part : chunk(idx, batch_size)) {
    Graph g(false);
    LossReport r;
    const auto batch = make_batch(ds, part, c, nullptr);
    stage1_objective(g, vae, batch, c, r);
    const auto w = static_cast<double>(part.size());
    acc.mse += w * r.mse;
    acc.kl += w * r.kl;
    acc.clip += w * r.clip;
    acc.total += w * r.total;
    acc.diag.forward_top1 += w * r.diag.forward_top1;
    acc.diag.backward_top1 += w * r.diag.backward_top1;
    n += part.size();
  }
  if (n == 0) return acc;
  const double inv = 1.0 / static_cast<double>(n);
  acc.mse *= inv;
  acc.kl *= inv;
  acc.clip *= inv;
  acc.total *= inv;
  acc.diag.forward_top1 *= inv;
  acc.diag.backward_top1 *= inv;
  return acc;
}

}  // namespace

Var stage1_objective(Graph& g, const BrainVae& vae, std::span<const BatchItem> batch,
                     const ModelConfig& config, LossReport& report) {
  if (batch.empty()) throw std::invalid_argument("stage1_objective: empty batch");
  std::vector<Var> mses, kls, zs, clips;
  for (const BatchItem& item : batch) {
    Var x = g.constant(Tensor::row(item.fmri));
    BrainVae::ForwardVars fw = vae.forward(g, x, item.eps);
    mses.push_back(mse_loss(fw.fmri_hat, x));
    kls.push_back(kl_divergence(fw.posterior.mu, fw.posterior.log_var));
    zs.push_back(fw.z);
    clips.push_back(g.constant(*item.z_clip));
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Var mse = scale(sum(concat_cols(mses)), inv_n);
  Var kl = scale(sum(concat_cols(kls)), inv_n);
  Var total = add(mse, scale(kl, config.lambda_kl));
  double clip_value = 0.0;
  RetrievalDiag diag;
  if (batch.size() >= 2) {
    SoftClipResult sc = softclip_loss(zs, clips, config.temperature);
    clip_value = sc.loss.value()[0];
    diag = sc.diag;
    if (config.lambda_clip > 0.0) total = add(total, scale(sc.loss, config.lambda_clip));
  }
  report = composite_loss(mse.value()[0], kl.value()[0], clip_value, config.lambda_kl,
                          config.lambda_clip, diag);
  return total;
}

Stage1Result train_stage1(const Dataset& dataset, const ModelConfig& config, std::mt19937_64& rng,
                          const Stage1Options& options) {
  config.validate();
  const std::size_t batch_size = options.batch_size ? options.batch_size : config.batch_size;
  const std::size_t epochs = options.max_epochs ? options.max_epochs : config.max_epochs;
  ValidationSplit vs = split_validation(dataset, config.val_fraction, rng);
  if (vs.train.empty()) throw SizeError("stage 1 needs at least one training sample");
  // without held-out stimuli, early stopping watches the training loss
  const std::vector<std::size_t>& watch = vs.val.empty() ? vs.train : vs.val;
  const std::uint64_t init_seed = rng();

  if (options.init && !architecture_compatible(options.init->config(), config)) {
    throw ConfigError("warm-start model does not match the training config");
  }
  BrainVae vae = options.init ? *options.init : BrainVae(config, init_seed);
  vae.params().set_all_trainable(true);
  AdamW adam(adam_settings(config, config.lr));
  TrainState st;
  TrainLog log;
  const auto t0 = Clock::now();

  if (options.resume) {
    st = *options.resume;
    vae.params().assign_values(st.params);
    adam.restore(st.moments);
    rng = rng_from_string(st.rng_state);
  } else {
    const LossReport r = stage1_eval(vae, dataset, watch, config, batch_size);
    check_finite(r, options.phase + " initial validation");
    st.initial_val = r.mse;
    st.best_val = r.total;
    st.best_params = vae.params().flatten_values();
    st.has_best = true;
    log.entries.push_back({options.phase, "val", 0, 0, r, seconds_since(t0)});
  }

  bool early = st.bad_rounds >= config.patience;
  std::size_t epochs_this_call = 0;
  while (!early && st.epoch < epochs) {
    std::vector<std::size_t> order = vs.train;
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& part : chunk(order, batch_size)) {
      vae.params().zero_grad();
      const auto batch = make_batch(dataset, part, config, options.sample_latent ? &rng : nullptr);
      Graph g;
      LossReport r;
      Var total = stage1_objective(g, vae, batch, config, r);
      check_finite(r, options.phase + " step " + std::to_string(st.step + 1));
      g.backward(total);
      adam.step(vae.params());
      ++st.step;
      log.entries.push_back({options.phase, "train", st.step, st.epoch + 1, r, seconds_since(t0)});
    }
    ++st.epoch;
    ++epochs_this_call;
    const LossReport r = stage1_eval(vae, dataset, watch, config, batch_size);
    check_finite(r, options.phase + " validation after epoch " + std::to_string(st.epoch));
    log.entries.push_back({options.phase, "val", st.step, st.epoch, r, seconds_since(t0)});
    if (r.total < st.best_val) {
      st.best_val = r.total;
      st.best_params = vae.params().flatten_values();
      st.best_epoch = st.epoch;
      st.bad_rounds = 0;
    } else {
      ++st.bad_rounds;
    }
    early = st.bad_rounds >= config.patience;
    if (options.stop_after_epochs && epochs_this_call >= options.stop_after_epochs) break;
  }

  st.params = vae.params().flatten_values();
  st.moments = adam.moments();
  st.rng_state = rng_to_string(rng);

  Stage1Result out{vae, std::move(log), st, early, st.initial_val, 0.0};
  out.vae.params().assign_values(st.best_params);
  out.vae.params().zero_grad();
  out.best_val_mse = stage1_eval(out.vae, dataset, watch, config, batch_size).mse;
  if (!options.log_path.empty()) out.log.write_jsonl(options.log_path);
  return out;
}

Stage2Result train_stage2(const Dataset& dataset, const BrainVae& vae, const ModelConfig& config,
                          std::mt19937_64& rng, const Stage2Options& options) {
  config.validate();
  const std::size_t steps = options.steps ? options.steps : config.s2n_steps;
  const std::size_t eval_every = options.eval_every ? options.eval_every : config.s2n_eval_every;
  const std::size_t batch_size = options.batch_size ? options.batch_size : config.batch_size;
  ValidationSplit vs = split_validation(dataset, config.val_fraction, rng);
  if (vs.train.empty()) throw SizeError("stage 2 needs at least one training sample");
  const std::vector<std::size_t>& watch = vs.val.empty() ? vs.train : vs.val;
  const std::uint64_t init_seed = rng();

  S2nMapper s2n = options.init ? *options.init : S2nMapper(config, init_seed);
  if (s2n.tokens() != config.hidden_tokens || s2n.dim() != config.latent_dim) {
    throw ConfigError("mapper grid does not match the latent grid");
  }
  s2n.partition_parameters(options.partition);

  // the VAE is frozen, so regression targets are computed once
  std::map<std::size_t, Tensor> targets;
  for (const auto* set : {&vs.train, &vs.val}) {
    for (std::size_t i : *set) targets.emplace(i, vae.infer(dataset.samples[i].values).mu);
  }
  auto clip_of = [&](std::size_t i) -> const Tensor& {
    return dataset.embeddings.at(dataset.samples[i].stimulus);
  };
  auto val_loss = [&]() {
    double acc = 0.0;
    for (std::size_t i : watch) acc += s2n_loss(s2n.forward_values(clip_of(i)), targets.at(i));
    return acc / static_cast<double>(watch.size());
  };

  Stage2Result out{s2n, {}, 0.0, 0.0, 0.0};
  for (std::size_t i : watch) {
    const Tensor& t = targets.at(i);
    out.zero_baseline += s2n_loss(Tensor(t.rows(), t.cols()), t);
  }
  out.zero_baseline /= static_cast<double>(watch.size());

  const auto t0 = Clock::now();
  auto report_of = [](double v) { return LossReport{v, 0.0, 0.0, v, {}}; };
  out.initial_val = val_loss();
  out.best_val = out.initial_val;
  std::vector<double> best = s2n.params().flatten_values();
  out.log.entries.push_back({options.phase, "val", 0, 0, report_of(out.initial_val), seconds_since(t0)});

  AdamW adam(adam_settings(config, config.s2n_lr));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::size_t b = std::min(batch_size, vs.train.size());
  for (std::size_t step = 1; step <= steps; ++step) {
    std::vector<std::size_t> part;
    while (part.size() < b) {
      if (cursor == order.size()) {
        order = vs.train;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      part.push_back(order[cursor++]);
    }
    s2n.params().zero_grad();
    Graph g;
    std::vector<Var> losses;
    for (std::size_t i : part) {
      losses.push_back(s2n_loss(s2n.forward(g, g.constant(clip_of(i))), g.constant(targets.at(i))));
    }
    Var loss = scale(sum(concat_cols(losses)), 1.0 / static_cast<double>(part.size()));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NanLossError("s2n", options.phase + " step " + std::to_string(step));
    g.backward(loss);
    adam.step(s2n.params());
    out.log.entries.push_back({options.phase, "train", step, 0, report_of(value), seconds_since(t0)});
    if (step % eval_every == 0 || step == steps) {
      const double v = val_loss();
      out.log.entries.push_back({options.phase, "val", step, 0, report_of(v), seconds_since(t0)});
      if (v < out.best_val) {
        out.best_val = v;
        best = s2n.params().flatten_values();
      }
    }
  }
  s2n.params().assign_values(best);
  s2n.params().zero_grad();
  out.s2n = std::move(s2n);
  if (!options.log_path.empty()) out.log.write_jsonl(options.log_path);
  return out;
}

AdaptResult adapt_few_shot(const BrainVae& source_vae, const S2nMapper& source_s2n,
                           const std::set<SubjectId>& source_subjects, const Dataset& novel,
                           const ModelConfig& config, std::mt19937_64& rng) {
  const std::set<SubjectId> subjects = novel.subjects();
  if (subjects.size() != 1) {
    throw ProtocolError("few-shot adaptation expects data from exactly one novel subject, got " +
                        std::to_string(subjects.size()));
  }
  const SubjectId target = *subjects.begin();
  if (source_subjects.contains(target)) {
    throw ProtocolError("subject " + std::to_string(target) +
                        " was part of the source training set and is not novel");
  }
  ModelConfig ac = config;
  ac.max_epochs = config.adapt_epochs;

  Stage1Options o1;
  o1.init = &source_vae;
  o1.batch_size = config.adapt_batch_size;
  o1.phase = "adapt-vae";
  Stage1Result r1 = train_stage1(novel, ac, rng, o1);

  Stage2Options o2;
  o2.init = &source_s2n;
  o2.partition = Partition::mlp_only;
  o2.steps = config.adapt_s2n_steps;
  o2.batch_size = config.adapt_batch_size;
  o2.phase = "adapt-s2n";
  Stage2Result r2 = train_stage2(novel, r1.vae, ac, rng, o2);

  AdaptResult out{std::move(r1.vae), std::move(r2.s2n), source_subjects, target, std::move(r1.log)};
  out.log.entries.insert(out.log.entries.end(), r2.log.entries.begin(), r2.log.entries.end());
  return out;
}

std::vector<double> synthesize(const Tensor& z_clip, const S2nMapper* s2n, const BrainVae& vae,
                               double nf, std::mt19937_64& rng, std::size_t voxels) {
  if (!(nf >= 0.0)) throw std::invalid_argument("noise factor must be non-negative");
  Tensor z = s2n ? s2n->forward_values(z_clip) : z_clip;
  if (nf > 0.0) {
    const Tensor eps = sample_epsilon(z.rows(), z.cols(), rng);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += nf * eps[i];
  }
  return vae.decode_values(z, voxels);
}

std::vector<double> pooled(const Tensor& grid) {
  std::vector<double> out(grid.cols(), 0.0);
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) out[c] += grid(r, c);
  }
  for (double& v : out) v /= static_cast<double>(grid.rows());
  return out;
}

std::vector<double> fmri_embedding(const BrainVae& vae, std::span<const double> fmri) {
  return pooled(vae.infer(fmri).mu);
}

std::map<StimulusId, std::vector<std::vector<double>>> test_trials(const Dataset& dataset,
                                                                   SubjectId subject) {
  std::map<StimulusId, std::vector<std::vector<double>>> out;
  for (std::size_t i : dataset.indices(Split::test, subject)) {
    out[dataset.samples[i].stimulus].push_back(dataset.samples[i].values);
  }
  return out;
}

std::vector<double> average_trials(const std::vector<std::vector<double>>& trials) {
  if (trials.empty()) throw std::invalid_argument("average_trials: no trials");
  std::vector<double> out(trials.front().size(), 0.0);
  for (const auto& t : trials) {
    if (t.size() != out.size()) throw ShapeError("average_trials: lengths differ");
    for (std::size_t i = 0; i < t.size(); ++i) out[i] += t[i];
  }
  for (double& v : out) v /= static_cast<double>(trials.size());
  return out;
}

namespace {
Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), t.row_span(r).begin());
  }
  return t;
}
}  // namespace

EvalReport evaluate(const BrainVae& vae, const S2nMapper* s2n, const Dataset& dataset,
                    SubjectId subject, const EvalOptions& options, std::mt19937_64& rng) {
  const auto trials = test_trials(dataset, subject);
  if (trials.empty()) throw SizeError("no test samples for subject " + std::to_string(subject));
  const std::size_t voxels = dataset.voxel_counts.at(subject);

  // gallery: every embedding not used for training; test stimuli first
  const std::set<StimulusId> train = dataset.stimuli(Split::train);
  std::vector<StimulusId> gallery_ids;
  for (const auto& [id, _] : trials) gallery_ids.push_back(id);
  for (const auto& [id, _] : dataset.embeddings) {
    if (!train.contains(id) && !trials.contains(id)) gallery_ids.push_back(id);
  }
  std::vector<std::vector<double>> gallery_rows;
  for (StimulusId id : gallery_ids) gallery_rows.push_back(pooled(dataset.embeddings.at(id)));
  const Tensor gallery = rows_to_tensor(gallery_rows);

  std::vector<std::vector<double>> syn;
  std::vector<std::vector<double>> raw_q, syn_q;
  std::vector<std::size_t> truth;
  std::vector<std::vector<double>> encoded_latents;
  std::size_t k = 0;
  for (const auto& [id, ts] : trials) {
    syn.push_back(synthesize(dataset.embeddings.at(id), s2n, vae, options.nf, rng, voxels));
    raw_q.push_back(fmri_embedding(vae, average_trials(ts)));
    syn_q.push_back(fmri_embedding(vae, syn.back()));
    truth.push_back(k++);
    for (const auto& t : ts) {
      const Tensor mu = vae.infer(t).mu;
      encoded_latents.emplace_back(mu.values().begin(), mu.values().end());
    }
  }

  EvalReport rep;
  rep.candidates = options.candidates;
  // voxel-level agreement with own trials, and the cross-stimulus baseline
  double mse = 0.0, r = 0.0, cs = 0.0, cross = 0.0;
  std::size_t undefined = 0, n_trials = 0, cross_n = 0;
  std::size_t i = 0;
  for (const auto& [id, ts] : trials) {
    const VoxelMetrics m = voxel_metrics(syn[i], ts);
    mse += m.mse;
    r += m.pearson;
    cs += m.cosine;
    undefined += m.pearson_undefined;
    n_trials += m.trials;
    std::size_t j = 0;
    for (const auto& [other, ots] : trials) {
      if (j++ == i) continue;
      const double p = voxel_metrics(syn[i], ots).pearson;
      if (!std::isnan(p)) {
        cross += p;
        ++cross_n;
      }
    }
    ++i;
  }
  const double n = static_cast<double>(trials.size());
  rep.voxel = {mse / n, r / n, cs / n, n_trials, undefined};
  rep.cross_stimulus_pearson = cross_n ? cross / static_cast<double>(cross_n) : 0.0;

  const Tensor raw = rows_to_tensor(raw_q), synq = rows_to_tensor(syn_q);
  rep.retrieval_raw = retrieval_accuracy(raw, gallery, truth, options.candidates, options.repeats, rng);
  rep.retrieval_syn = retrieval_accuracy(synq, gallery, truth, options.candidates, options.repeats, rng);

  std::vector<std::vector<double>> test_emb;
  for (const auto& [id, _] : trials) test_emb.push_back(pooled(dataset.embeddings.at(id)));
  if (trials.size() >= 2) {
    rep.two_way = two_way_accuracy(rows_to_tensor(test_emb), synq, rng, options.two_way_trials);
  }

  const Tensor encoded = rows_to_tensor(encoded_latents);
  Tensor noise(encoded.rows(), encoded.cols()), perturbed = encoded;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t e = 0; e < noise.size(); ++e) noise[e] = normal(rng);
  for (std::size_t e = 0; e < perturbed.size(); ++e) perturbed[e] += options.perturb_sd * normal(rng);
  rep.gap_noise = latent_gap(noise, encoded);
  rep.gap_perturbed = latent_gap(perturbed, encoded);
  return rep;
}

void write_stage_meta(const std::filesystem::path& dir, const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "stage.json", std::ios::trunc);
  out << meta.dump(2) << '\n';
}

nlohmann::json read_stage_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "stage.json");
  if (!in) throw FormatError("missing " + (dir / "stage.json").string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("stage.json: " + std::string(e.what()));
  }
}

}  // namespace synbrain
