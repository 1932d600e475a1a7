#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "synbrain/augmentation.hpp"
#include "synbrain/manifest.hpp"
#include "synbrain/pipeline.hpp"
#include "synbrain/world.hpp"

namespace synbrain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every command; each command reads the ones it needs.
struct Flags {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::string out, data, vae, s2n, world, resume, init, manifest;
  std::vector<SubjectId> subjects;
  std::optional<SubjectId> subject;
  std::size_t hours = 1;
  std::vector<double> da{1.0, 4.0};
  double nf = 0.0;
  double ridge = 10.0;
  std::size_t candidates = 300;
  std::size_t repeats = 30;
  std::size_t distractors = 300;
  std::string partition = "full";
  std::string plot;
  bool deterministic = false;
};

ModelConfig resolve_config(const Flags& f) {
  ModelConfig cfg = ModelConfig::desk();
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw FormatError("cannot read config " + f.config_file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw FormatError(f.config_file + ": " + e.what());
    }
    cfg.merge_json(j);
  }
  json over = json::object();
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got " + kv);
    const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    over[key] = value.is_discarded() ? json(text) : value;
  }
  cfg.merge_json(over);
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required ") + flag);
}

SubjectId require_subject(const Flags& f) {
  if (!f.subject) throw UsageError("missing required --subject");
  return *f.subject;
}

std::vector<SubjectId> sorted_ids(const std::set<SubjectId>& s) { return {s.begin(), s.end()}; }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Model architecture comes from the checkpoint; optimisation settings from
// the resolved config.
ModelConfig with_training_settings(const ModelConfig& arch, const ModelConfig& resolved) {
  ModelConfig c = resolved;
  json a = arch.to_json();
  json r = resolved.to_json();
  for (const char* key : {"voxel_counts_by_subject", "pooled_len", "base_channels", "ch_mult",
                          "num_res_blocks", "num_down_blocks", "stem_kernel", "vae_attn_heads",
                          "hidden_tokens", "hidden_dim", "latent_dim", "projector_dim",
                          "logvar_min", "logvar_max"}) {
    if (a.contains(key)) r[key] = a[key];
  }
  c = ModelConfig::from_json(r);
  return c;
}

struct Context {
  Flags flags;
  ModelConfig config;
  std::mt19937_64 rng;
  std::vector<fs::path> inputs;
};

// ---- commands ------------------------------------------------------------

void cmd_gen_data(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  SyntheticWorldSpec spec = SyntheticWorldSpec::desk();
  if (!f.world.empty()) {
    std::ifstream in(f.world);
    if (!in) throw FormatError("cannot read world spec " + f.world);
    json j;
    in >> j;
    spec = SyntheticWorldSpec::from_json(j);
  }
  spec.validate();
  const SyntheticWorld world(spec, ctx.config.seed);
  SplitSizes sizes = SplitSizes::from_world(spec);
  sizes.subjects = f.subjects;
  Dataset ds = sample_dataset(world, sizes, ctx.rng);
  for (StimulusId id : unseen_stimuli(world, ds.stimuli(), f.distractors, ctx.rng)) {
    ds.embeddings.emplace(id, world.embedding(id));
  }
  save_dataset(ds, f.out);
  write_json(fs::path(f.out) / "world.json", {{"spec", spec.to_json()}, {"seed", ctx.config.seed}});
  std::cout << "wrote " << ds.samples.size() << " samples, " << ds.embeddings.size()
            << " embeddings to " << f.out << '\n';
}

Dataset load_training_data(Context& ctx) {
  require(ctx.flags.data, "--data");
  ctx.inputs.emplace_back(ctx.flags.data);
  Dataset ds = load_dataset(ctx.flags.data);
  if (!ctx.flags.subjects.empty()) {
    ds = filter_subjects(ds, {ctx.flags.subjects.begin(), ctx.flags.subjects.end()});
  }
  return ds;
}

void cmd_train_vae(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const Dataset ds = load_training_data(ctx);
  ModelConfig cfg = ctx.config;
  cfg.voxel_counts_by_subject = ds.voxel_counts;
  cfg.validate();

  Stage1Options opt;
  opt.sample_latent = !f.deterministic;
  std::optional<TrainState> resume;
  if (!f.resume.empty()) {
    ctx.inputs.emplace_back(f.resume);
    resume = TrainState::load(f.resume);
    opt.resume = &*resume;
  }
  const fs::path out(f.out);
  Stage1Result r = train_stage1(ds, cfg, ctx.rng, opt);
  r.vae.save(out / "vae");
  r.state.save(out / "state");
  r.log.write_jsonl(out / "log.jsonl", false);
  write_stage_meta(out / "vae", {{"stage", "vae"},
                                 {"subjects", sorted_ids(ds.subjects())},
                                 {"deterministic", f.deterministic},
                                 {"initial_val_mse", r.initial_val_mse},
                                 {"best_val_mse", r.best_val_mse},
                                 {"early_stopped", r.early_stopped}});
  std::cout << "val mse " << r.initial_val_mse << " -> " << r.best_val_mse << '\n';
}

BrainVae load_vae(Context& ctx) {
  require(ctx.flags.vae, "--vae");
  ctx.inputs.emplace_back(ctx.flags.vae);
  return BrainVae::load(ctx.flags.vae);
}

std::optional<S2nMapper> load_s2n(Context& ctx, bool required) {
  if (ctx.flags.s2n.empty()) {
    if (required) throw UsageError("missing required --s2n");
    return std::nullopt;
  }
  ctx.inputs.emplace_back(ctx.flags.s2n);
  return S2nMapper::load(ctx.flags.s2n);
}

void cmd_train_s2n(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const Dataset ds = load_training_data(ctx);
  const BrainVae vae = load_vae(ctx);
  const ModelConfig cfg = with_training_settings(vae.config(), ctx.config);
  std::optional<S2nMapper> init;
  Stage2Options opt;
  opt.partition = parse_partition(f.partition);
  if (!f.init.empty()) {
    ctx.inputs.emplace_back(f.init);
    init = S2nMapper::load(f.init);
    opt.init = &*init;
  }
  const fs::path out(f.out);
  Stage2Result r = train_stage2(ds, vae, cfg, ctx.rng, opt);
  r.s2n.save(out / "s2n");
  r.log.write_jsonl(out / "log.jsonl", false);
  write_stage_meta(out / "s2n", {{"stage", "s2n"},
                                 {"subjects", sorted_ids(ds.subjects())},
                                 {"partition", partition_name(opt.partition)},
                                 {"initial_val", r.initial_val},
                                 {"best_val", r.best_val},
                                 {"zero_baseline", r.zero_baseline}});
  std::cout << "val loss " << r.initial_val << " -> " << r.best_val << " (zero baseline "
            << r.zero_baseline << ")\n";
}

void cmd_adapt(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const SubjectId subject = require_subject(f);
  require(f.data, "--data");
  ctx.inputs.emplace_back(f.data);
  const Dataset full = load_dataset(f.data);
  const Dataset novel = subset_hours(filter_subjects(full, {subject}), f.hours);
  const BrainVae vae = load_vae(ctx);
  const S2nMapper s2n = *load_s2n(ctx, true);
  const json meta = read_stage_meta(f.vae);
  const auto source = meta.at("subjects").get<std::set<SubjectId>>();
  ModelConfig cfg = with_training_settings(vae.config(), ctx.config);
  cfg.voxel_counts_by_subject[subject] = full.voxel_counts.at(subject);
  AdaptResult r = adapt_few_shot(vae, s2n, source, novel, cfg, ctx.rng);
  const fs::path out(f.out);
  r.vae.save(out / "vae");
  r.s2n.save(out / "s2n");
  r.log.write_jsonl(out / "log.jsonl", false);
  const json stage = {{"stage", "adapt"},
                      {"subjects", std::vector<SubjectId>{subject}},
                      {"source_subjects", sorted_ids(source)},
                      {"sessions", f.hours},
                      {"samples", novel.samples.size()}};
  write_stage_meta(out / "vae", stage);
  write_stage_meta(out / "s2n", stage);
  std::cout << "adapted to subject " << subject << " on " << novel.samples.size() << " samples\n";
}

void cmd_synthesize(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const SubjectId subject = require_subject(f);
  require(f.data, "--data");
  ctx.inputs.emplace_back(f.data);
  const Dataset ds = load_dataset(f.data);
  const BrainVae vae = load_vae(ctx);
  const std::optional<S2nMapper> s2n = load_s2n(ctx, false);
  const std::size_t voxels = ds.voxel_counts.count(subject) ? ds.voxel_counts.at(subject)
                                                            : vae.config().voxel_count(subject);
  Dataset syn;
  syn.voxel_counts = {{subject, voxels}};
  syn.tokens = ds.tokens;
  syn.embed_dim = ds.embed_dim;
  syn.n_sessions = 1;
  for (StimulusId id : ds.stimuli(Split::test)) {
    const Tensor& emb = ds.embeddings.at(id);
    syn.samples.push_back({subject, id, 0, Split::test, 0,
                           synthesize(emb, s2n ? &*s2n : nullptr, vae, f.nf, ctx.rng, voxels)});
    syn.embeddings.emplace(id, emb);
  }
  save_dataset(syn, f.out);
  std::cout << "synthesized " << syn.samples.size() << " responses for subject " << subject << '\n';
}

std::string svg_bars(const EvalReport& r) {
  const std::vector<std::pair<std::string, double>> bars = {
      {"Pearson", r.voxel.pearson},        {"Cosine", r.voxel.cosine},
      {"Two-way", r.two_way},              {"Raw top-1", r.retrieval_raw.mean},
      {"Syn top-1", r.retrieval_syn.mean}, {"Cross-stim r", r.cross_stimulus_pearson}};
  const double w = 80, gap = 20, h = 240, top = 30, left = 40;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + bars.size() * (w + gap)
    << "\" height=\"" << h + top + 50 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + h << "\" x2=\"" << left + bars.size() * (w + gap)
    << "\" y2=\"" << top + h << "\" stroke=\"black\"/>\n";
  const double chance = r.candidates ? 1.0 / static_cast<double>(r.candidates) : 0.0;
  const double cy = top + h * (1.0 - chance);
  s << "<line x1=\"" << left << "\" y1=\"" << cy << "\" x2=\"" << left + bars.size() * (w + gap)
    << "\" y2=\"" << cy << "\" stroke=\"red\" stroke-dasharray=\"4\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(std::isfinite(bars[i].second) ? bars[i].second : 0.0, 0.0, 1.0);
    const double x = left + i * (w + gap);
    s << "<rect x=\"" << x << "\" y=\"" << top + h * (1.0 - v) << "\" width=\"" << w
      << "\" height=\"" << h * v << "\" fill=\"steelblue\"/>\n";
    s << "<text x=\"" << x + w / 2 << "\" y=\"" << top + h * (1.0 - v) - 4
      << "\" text-anchor=\"middle\">" << std::fixed << std::setprecision(3) << bars[i].second
      << "</text>\n";
    s << "<text x=\"" << x + w / 2 << "\" y=\"" << top + h + 18 << "\" text-anchor=\"middle\">"
      << bars[i].first << "</text>\n";
  }
  s << "<text x=\"" << left << "\" y=\"18\">dashed: chance at " << r.candidates
    << " candidates</text>\n</svg>\n";
  return s.str();
}

void cmd_evaluate(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const SubjectId subject = require_subject(f);
  require(f.data, "--data");
  ctx.inputs.emplace_back(f.data);
  const Dataset ds = load_dataset(f.data);
  const BrainVae vae = load_vae(ctx);
  const std::optional<S2nMapper> s2n = load_s2n(ctx, false);
  EvalOptions opt;
  opt.candidates = f.candidates;
  opt.repeats = f.repeats;
  opt.nf = f.nf;
  const EvalReport r = evaluate(vae, s2n ? &*s2n : nullptr, ds, subject, opt, ctx.rng);
  fs::create_directories(f.out);
  write_json(fs::path(f.out) / "report.json", r.to_json());
  if (!f.plot.empty()) {
    std::ofstream svg(fs::path(f.out) / f.plot, std::ios::trunc);
    svg << svg_bars(r);
  }
  std::cout << r.table();
}

void cmd_augment_decode(Context& ctx) {
  const Flags& f = ctx.flags;
  require(f.out, "--out");
  const SubjectId subject = require_subject(f);
  require(f.data, "--data");
  ctx.inputs.emplace_back(f.data);
  const Dataset full = filter_subjects(load_dataset(f.data), {subject});
  const Dataset real = subset_hours(full, f.hours);
  const BrainVae vae = load_vae(ctx);
  const S2nMapper s2n = *load_s2n(ctx, true);

  // synthesis sources: embeddings no real sample of this subject uses
  const std::set<StimulusId> used = full.stimuli();
  std::map<StimulusId, Tensor> unseen;
  for (const auto& [id, emb] : full.embeddings) {
    if (!used.contains(id)) unseen.emplace(id, emb);
  }
  const std::uint64_t eval_seed = ctx.rng();
  std::vector<AugmentedSet> sets;
  std::set<StimulusId> synthetic;
  for (double h : f.da) {
    sets.push_back(generate_augmented_set(vae, s2n, f.s2n, real, unseen, h, f.nf, ctx.rng));
    const auto ids = sets.back().synthetic_stimuli();
    synthetic.insert(ids.begin(), ids.end());
  }
  // one gallery for every condition: synthesis sources never appear in it
  auto run_eval = [&](const ToyDecoder& dec) {
    std::mt19937_64 er(eval_seed);
    return eval_decoder(dec, full, subject, f.candidates, f.repeats, er, synthetic);
  };

  json out = json::object();
  const DecoderEval base = run_eval(train_toy_decoder(real, f.ridge));
  out["real_only"] = base.to_json();
  out["da"] = json::object();
  const fs::path dir(f.out);
  for (const AugmentedSet& aug : sets) {
    const DecoderEval e = run_eval(train_toy_decoder(aug.data, f.ridge));
    json row = e.to_json();
    row["synthetic_count"] = aug.synthetic_count();
    row["gain"] = e.image_retrieval.mean - base.image_retrieval.mean;
    std::ostringstream key;
    key << aug.hours_equiv;
    out["da"][key.str()] = row;
    aug.save(dir / ("augmented_" + key.str()));
    std::cout << "DA(" << key.str() << "x) retrieval " << e.image_retrieval.mean << " vs real-only "
              << base.image_retrieval.mean << '\n';
  }
  fs::create_directories(dir);
  write_json(dir / "decode.json", out);
}

// ---- dispatch ------------------------------------------------------------

std::vector<std::string> list_outputs(const fs::path& out) {
  std::vector<std::string> files;
  if (!fs::is_directory(out)) return files;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), out).generic_string();
    if (rel != "run.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_command(const std::string& name, Context& ctx, const std::vector<std::string>& argv) {
  static const std::map<std::string, void (*)(Context&)> table = {
      {"gen-data", cmd_gen_data},   {"train-vae", cmd_train_vae}, {"train-s2n", cmd_train_s2n},
      {"adapt", cmd_adapt},         {"synthesize", cmd_synthesize}, {"evaluate", cmd_evaluate},
      {"augment-decode", cmd_augment_decode}};
  const auto t0 = std::chrono::steady_clock::now();
  table.at(name)(ctx);
  RunManifest m;
  m.command = name;
  m.argv = argv;
  m.config = ctx.config.to_json();
  m.seed = ctx.config.seed;
  for (const auto& p : ctx.inputs) m.inputs.push_back(p.string());
  m.input_hash = content_hash(ctx.inputs);
  m.outputs = list_outputs(ctx.flags.out);
  m.save(fs::path(ctx.flags.out) / "run.json");
  // wall time stays out of run.json so reruns are byte-identical
  std::cerr << name << " finished in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return kOk;
}

int replay(const Flags& f) {
  require(f.manifest, "--manifest");
  const RunManifest m = RunManifest::load(f.manifest);
  std::vector<fs::path> inputs(m.inputs.begin(), m.inputs.end());
  const std::string now = content_hash(inputs);
  if (now != m.input_hash) {
    throw FormatError("inputs changed since the recorded run (hash " + now + " != " +
                      m.input_hash + ")");
  }
  std::vector<std::string> argv = m.argv;
  if (!f.out.empty()) {
    const auto it = std::find(argv.begin(), argv.end(), "--out");
    if (it == argv.end() || it + 1 == argv.end()) throw FormatError("recorded argv has no --out");
    *(it + 1) = f.out;
  }
  return run_cli(argv);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Desk-scale visual-to-fMRI synthesis"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", f.config_file, "JSON config; defaults to the desk preset")
        ->check(CLI::ExistingFile);
    c->add_option("--set", f.overrides, "Config override key=value (repeatable)");
    c->add_option("--seed", f.seed, "RNG seed (overrides config)");
    c->add_option("--out", f.out, "Output directory");
  };
  auto data = [&](CLI::App* c) { c->add_option("--data", f.data, "Dataset directory"); };
  auto models = [&](CLI::App* c, bool with_s2n) {
    c->add_option("--vae", f.vae, "BrainVAE checkpoint directory");
    if (with_s2n) c->add_option("--s2n", f.s2n, "S2N checkpoint directory");
  };

  auto* gen = app.add_subcommand("gen-data", "Sample a synthetic dataset");
  common(gen);
  gen->add_option("--world,--spec", f.world, "World spec JSON");
  gen->add_option("--subjects", f.subjects, "Subjects to record (default: all)")->delimiter(',');
  gen->add_option("--distractors", f.distractors, "Extra unused embeddings for retrieval galleries");

  auto* tv = app.add_subcommand("train-vae", "Stage 1: train the BrainVAE");
  common(tv);
  data(tv);
  tv->add_option("--subjects", f.subjects, "Train on these subjects only")->delimiter(',');
  tv->add_option("--resume", f.resume, "Resume from a saved train state directory");
  tv->add_flag("--deterministic", f.deterministic, "Decode the posterior mean (plain autoencoder)");

  auto* ts = app.add_subcommand("train-s2n", "Stage 2: train the semantic-to-neural mapper");
  common(ts);
  data(ts);
  models(ts, false);
  ts->add_option("--subjects", f.subjects, "Train on these subjects only")->delimiter(',');
  ts->add_option("--partition", f.partition, "full or mlp-only");
  ts->add_option("--init", f.init, "Warm-start S2N checkpoint");

  auto* ad = app.add_subcommand("adapt", "Few-shot adaptation to a new subject");
  common(ad);
  data(ad);
  models(ad, true);
  ad->add_option("--subject", f.subject, "Target subject");
  ad->add_option("--hours", f.hours, "Number of sessions to adapt on");

  auto* sy = app.add_subcommand("synthesize", "Synthesize responses for test stimuli");
  common(sy);
  data(sy);
  models(sy, true);
  sy->add_option("--subject", f.subject, "Subject whose voxel layout to synthesize");
  sy->add_option("--nf", f.nf, "Latent noise factor");

  auto* ev = app.add_subcommand("evaluate", "Metric battery on a subject's test split");
  common(ev);
  data(ev);
  models(ev, true);
  ev->add_option("--subject", f.subject, "Subject to evaluate");
  ev->add_option("--nf", f.nf, "Latent noise factor for synthesis");
  ev->add_option("--candidates", f.candidates, "Retrieval candidates per query");
  ev->add_option("--repeats", f.repeats, "Retrieval repeats");
  ev->add_option("--plot", f.plot, "Write an SVG bar chart with this file name into --out");

  auto* aug = app.add_subcommand("augment-decode", "Decoder with and without synthetic pairs");
  common(aug);
  data(aug);
  models(aug, true);
  aug->add_option("--subject", f.subject, "Subject");
  aug->add_option("--hours", f.hours, "Sessions of real data");
  aug->add_option("--da", f.da, "Synthetic amounts in session equivalents")->delimiter(',');
  aug->add_option("--nf", f.nf, "Latent noise factor for synthesis");
  aug->add_option("--ridge", f.ridge, "Ridge strength");
  aug->add_option("--candidates", f.candidates, "Retrieval candidates per query");
  aug->add_option("--repeats", f.repeats, "Retrieval repeats");

  auto* rp = app.add_subcommand("replay", "Rerun a command from its run.json");
  rp->add_option("--manifest", f.manifest, "run.json of the original command")->required();
  rp->add_option("--out", f.out, "Write to this directory instead of the recorded one");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == rp) return replay(f);
    Context ctx;
    ctx.flags = f;
    ctx.config = resolve_config(f);
    ctx.rng.seed(ctx.config.seed);
    if (!f.config_file.empty()) ctx.inputs.emplace_back(f.config_file);
    return run_command(sub->get_name(), ctx, args);
  } catch (const NanLossError& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return kNanAbort;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
}

}  // namespace synbrain::cli
