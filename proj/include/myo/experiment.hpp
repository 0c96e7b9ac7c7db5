#pragma once

#include "myo/kvconfig.hpp"
#include "myo/training.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace myo {

namespace fs = std::filesystem;

namespace detail {

inline std::string fmt(double v) { return nlohmann::json(v).dump(); }
inline std::string fmt(long long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(std::array<double, 2> v) { return fmt(v[0]) + ", " + fmt(v[1]); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic dataset spec file

inline KvSchema synthetic_schema() {
  using detail::fmt;
  const SyntheticSpec d;
  return {
      {"n_subjects", KvType::Int, fmt(d.n_subjects), "number of synthetic subjects"},
      {"master_seed", KvType::Int, fmt(static_cast<long long>(d.master_seed)), "generator master seed"},
      {"sample_rate_hz", KvType::Int, fmt(d.sample_rate_hz), "sampling rate"},
      {"duration_s", KvType::Real, fmt(d.duration_s), "trial duration in seconds"},
      {"trials_per_gesture", KvType::Int, fmt(d.trials_per_gesture), "trials per subject and gesture"},
      {"subject_gain_range", KvType::RealList, fmt(d.subject_gain_range), "per-subject channel gain range"},
      {"noise_floor_range", KvType::RealList, fmt(d.noise_floor_range), "per-subject noise std range (uV)"},
      {"amplitude_jitter", KvType::Real, fmt(d.amplitude_jitter), "per-trial relative amplitude jitter"},
      {"frequency_jitter", KvType::Real, fmt(d.frequency_jitter), "per-trial relative carrier jitter"},
      {"shift.subjects", KvType::IntList, "", "subjects receiving the domain shift"},
      {"shift.gain_skew", KvType::RealList, fmt(d.shift.gain_skew), "per-channel gain multiplier under shift"},
      {"shift.channel_swap", KvType::Bool, fmt(d.shift.channel_swap), "swap electrodes under shift"},
      {"shift.time_shift_s", KvType::Real, fmt(d.shift.time_shift_s), "envelope delay under shift"},
  };
}

inline std::array<double, 2> pair_of(const std::vector<double>& v, const std::string& key) {
  if (v.size() != 2) throw ConfigError("field '" + key + "' needs exactly 2 values");
  return {v[0], v[1]};
}

inline SyntheticSpec synthetic_spec_from_kv(const KvDoc& doc) {
  const KvReader r(doc, synthetic_schema());
  SyntheticSpec s;
  s.n_subjects = static_cast<int>(r.integer("n_subjects"));
  s.master_seed = static_cast<std::uint64_t>(r.integer("master_seed"));
  s.sample_rate_hz = static_cast<int>(r.integer("sample_rate_hz"));
  s.duration_s = r.real("duration_s");
  s.trials_per_gesture = static_cast<int>(r.integer("trials_per_gesture"));
  s.subject_gain_range = pair_of(r.real_list("subject_gain_range"), "subject_gain_range");
  s.noise_floor_range = pair_of(r.real_list("noise_floor_range"), "noise_floor_range");
  s.amplitude_jitter = r.real("amplitude_jitter");
  s.frequency_jitter = r.real("frequency_jitter");
  for (long long v : r.int_list("shift.subjects")) s.shift.subjects.push_back(static_cast<int>(v));
  s.shift.gain_skew = pair_of(r.real_list("shift.gain_skew"), "shift.gain_skew");
  s.shift.channel_swap = r.boolean("shift.channel_swap");
  s.shift.time_shift_s = r.real("shift.time_shift_s");
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Experiment config file

inline KvSchema experiment_schema() {
  using detail::fmt;
  const ModelConfig m;
  const TrainConfig t;
  const AugmentConfig a;
  KvSchema s = {
      {"run_id", KvType::String, "run", "run identifier; names the output subdirectory"},
      {"output_dir", KvType::String, "runs", "output root, relative to the config file (overridden by MYO_OUTPUT_ROOT)"},
      {"seed", KvType::Int, "42", "master seed for init, augmentation, shuffling and dropout"},
      {"folds", KvType::String, "0", "'all' or a comma-separated list of fold indices"},
      {"dataset.manifest", KvType::String, "", "manifest.json of an existing dataset"},
      {"dataset.spec", KvType::String, "", "synthetic spec file; generated under the run directory"},
      {"model.d_model", KvType::Int, fmt(m.d_model), "encoder width"},
      {"model.n_layers", KvType::Int, fmt(m.n_layers), "encoder layers"},
      {"model.n_heads", KvType::Int, fmt(m.n_heads), "attention heads"},
      {"model.d_ff", KvType::Int, fmt(m.d_ff), "feed-forward hidden width"},
      {"model.d_t2v", KvType::Int, fmt(m.d_t2v), "Time2Vec width"},
      {"model.d_head", KvType::Int, fmt(m.d_head), "classifier hidden width"},
      {"model.fusion", KvType::String, std::string(fusion_name(m.fusion)),
       "concat | add | norm_add | sinusoidal_add | none"},
      {"model.variant", KvType::String, std::string(variant_name(m.variant)), "time2vec | standard_pe | no_pe"},
      {"model.leaky_alpha", KvType::Real, fmt(m.leaky_alpha), "LeakyReLU negative slope"},
      {"model.dropout", KvType::Real, fmt(m.dropout), "dropout rate inside residual branches"},
      {"model.droppath", KvType::Real, fmt(m.droppath), "residual branch drop rate"},
      {"model.f1", KvType::Int, fmt(m.f1), "first convolution channels"},
      {"model.f2", KvType::Int, fmt(m.f2), "second convolution channels"},
      {"model.k1", KvType::Int, fmt(m.k1), "first convolution kernel"},
      {"model.k2", KvType::Int, fmt(m.k2), "second convolution kernel"},
  };
  for (const auto& [name, sc] : {std::pair{"stage1", t.stage1}, {"stage2", t.stage2}, {"adapt", t.adapt}}) {
    const std::string p = std::string("train.") + name + ".";
    s.push_back({p + "learning_rate", KvType::Real, fmt(sc.learning_rate), std::string(name) + " Adam rate"});
    s.push_back({p + "epochs_max", KvType::Int, fmt(sc.epochs_max), std::string(name) + " epoch cap"});
    s.push_back({p + "batch_size", KvType::Int, fmt(sc.batch_size), std::string(name) + " batch size"});
    s.push_back({p + "patience", KvType::Int, fmt(sc.patience), std::string(name) + " early-stopping patience"});
  }
  const KvSchema rest = {
      {"train.adapt.head_only", KvType::Bool, "false", "fine-tune only the classifier head"},
      {"adam.beta1", KvType::Real, fmt(t.adam.beta1), "first-moment decay"},
      {"adam.beta2", KvType::Real, fmt(t.adam.beta2), "second-moment decay"},
      {"adam.epsilon", KvType::Real, fmt(t.adam.epsilon), "denominator epsilon"},
      {"augment.p_jitter", KvType::Real, fmt(a.p_jitter), "Gaussian jitter probability"},
      {"augment.p_scale", KvType::Real, fmt(a.p_scale), "channel scaling probability"},
      {"augment.p_warp", KvType::Real, fmt(a.p_warp), "time warp probability"},
      {"augment.p_mask", KvType::Real, fmt(a.p_mask), "time mask probability"},
      {"augment.p_mixup", KvType::Real, fmt(a.p_mixup), "mixup probability"},
      {"augment.jitter_sigma", KvType::Real, fmt(a.jitter_sigma), "jitter std as a fraction of window std"},
      {"augment.scale_range", KvType::RealList, fmt(a.scale_range), "channel scale factor range"},
      {"augment.warp_crop_range", KvType::RealList, fmt(a.warp_crop_range), "warp crop fraction range"},
      {"augment.mask_fraction_range", KvType::RealList, fmt(a.mask_fraction_range), "mask length fraction range"},
      {"augment.mixup_alpha", KvType::Real, fmt(a.mixup_beta_alpha), "Beta(alpha, alpha) for mixup"},
      {"ablate.dims", KvType::IntList, "4, 16, 32, 64, 96", "d_t2v values for ablate-dt2v"},
      {"probe.windows", KvType::Int, "50", "ms_test windows used by the interference probe"},
  };
  s.insert(s.end(), rest.begin(), rest.end());
  return s;
}

struct ExperimentConfig {
  std::string run_id = "run";
  std::string output_dir = "runs";
  std::uint64_t seed = 42;
  std::string folds = "0";
  fs::path manifest;        // resolved against the config file directory
  fs::path synthetic_spec;  // idem
  ModelConfig model;
  TrainConfig train;
  std::vector<int> ablate_dims{4, 16, 32, 64, 96};
  int probe_windows = 50;
  nlohmann::json echo = nlohmann::json::object();  // the config file's key/values, verbatim

  static ExperimentConfig from_kv(const KvDoc& doc, const fs::path& base_dir = ".") {
    const KvReader r(doc, experiment_schema());
    ExperimentConfig c;
    c.run_id = r.str("run_id");
    if (c.run_id.empty() || c.run_id.find('/') != std::string::npos)
      throw ConfigError("field 'run_id' must be a non-empty name without '/'");
    c.output_dir = (base_dir / r.str("output_dir")).lexically_normal().string();
    c.seed = static_cast<std::uint64_t>(r.integer("seed"));
    c.folds = r.str("folds");
    auto resolve = [&](const std::string& p) { return p.empty() ? fs::path() : base_dir / p; };
    c.manifest = resolve(r.str("dataset.manifest"));
    c.synthetic_spec = resolve(r.str("dataset.spec"));
    if (c.manifest.empty() == c.synthetic_spec.empty())
      throw ConfigError("exactly one of 'dataset.manifest' and 'dataset.spec' must be set");

    ModelConfig& m = c.model;
    m.d_model = static_cast<int>(r.integer("model.d_model"));
    m.n_layers = static_cast<int>(r.integer("model.n_layers"));
    m.n_heads = static_cast<int>(r.integer("model.n_heads"));
    m.d_ff = static_cast<int>(r.integer("model.d_ff"));
    m.d_t2v = static_cast<int>(r.integer("model.d_t2v"));
    m.d_head = static_cast<int>(r.integer("model.d_head"));
    m.fusion = parse_fusion(r.str("model.fusion"));
    m.variant = parse_variant(r.str("model.variant"));
    m.leaky_alpha = r.real("model.leaky_alpha");
    m.dropout = r.real("model.dropout");
    m.droppath = r.real("model.droppath");
    m.f1 = static_cast<int>(r.integer("model.f1"));
    m.f2 = static_cast<int>(r.integer("model.f2"));
    m.k1 = static_cast<int>(r.integer("model.k1"));
    m.k2 = static_cast<int>(r.integer("model.k2"));
    m.validate();

    TrainConfig& t = c.train;
    for (auto [name, sc] : {std::pair{"stage1", &t.stage1}, {"stage2", &t.stage2}, {"adapt", &t.adapt}}) {
      const std::string p = std::string("train.") + name + ".";
      sc->learning_rate = r.real(p + "learning_rate");
      sc->epochs_max = static_cast<int>(r.integer(p + "epochs_max"));
      sc->batch_size = static_cast<int>(r.integer(p + "batch_size"));
      sc->patience = static_cast<int>(r.integer(p + "patience"));
    }
    t.adapt_head_only = r.boolean("train.adapt.head_only");
    t.adam = {r.real("adam.beta1"), r.real("adam.beta2"), r.real("adam.epsilon")};
    AugmentConfig& a = t.augment;
    a.p_jitter = r.real("augment.p_jitter");
    a.p_scale = r.real("augment.p_scale");
    a.p_warp = r.real("augment.p_warp");
    a.p_mask = r.real("augment.p_mask");
    a.p_mixup = r.real("augment.p_mixup");
    a.jitter_sigma = r.real("augment.jitter_sigma");
    a.scale_range = pair_of(r.real_list("augment.scale_range"), "augment.scale_range");
    a.warp_crop_range = pair_of(r.real_list("augment.warp_crop_range"), "augment.warp_crop_range");
    a.mask_fraction_range = pair_of(r.real_list("augment.mask_fraction_range"), "augment.mask_fraction_range");
    a.mixup_beta_alpha = r.real("augment.mixup_alpha");
    t.seed = c.seed;
    t.validate();

    c.ablate_dims.clear();
    for (long long d : r.int_list("ablate.dims")) c.ablate_dims.push_back(static_cast<int>(d));
    c.probe_windows = static_cast<int>(r.integer("probe.windows"));
    if (c.probe_windows < 1) throw ConfigError("field 'probe.windows' must be >= 1");
    for (const auto& [k, v] : doc.values) c.echo[k] = v;
    return c;
  }

  /// Effective settings plus the verbatim file contents.
  nlohmann::json to_json() const {
    const auto& t = train;
    auto stage = [](const StageConfig& s) {
      return nlohmann::json{{"learning_rate", s.learning_rate},
                            {"epochs_max", s.epochs_max},
                            {"batch_size", s.batch_size},
                            {"patience", s.patience}};
    };
    const auto& a = t.augment;
    return {{"run_id", run_id},
            {"seed", seed},
            {"folds", folds},
            {"dataset", {{"manifest", manifest.string()}, {"spec", synthetic_spec.string()}}},
            {"model", model.to_json()},
            {"train",
             {{"stage1", stage(t.stage1)},
              {"stage2", stage(t.stage2)},
              {"adapt", stage(t.adapt)},
              {"adapt_head_only", t.adapt_head_only},
              {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
              {"augment",
               {{"p_jitter", a.p_jitter},
                {"p_scale", a.p_scale},
                {"p_warp", a.p_warp},
                {"p_mask", a.p_mask},
                {"p_mixup", a.p_mixup},
                {"jitter_sigma", a.jitter_sigma},
                {"scale_range", a.scale_range},
                {"warp_crop_range", a.warp_crop_range},
                {"mask_fraction_range", a.mask_fraction_range},
                {"mixup_alpha", a.mixup_beta_alpha}}}}},
            {"seeds",
             {{"master", seed},
              {"init", derive_seed(seed, "init")},
              {"train", t.seed}}},
            {"ablate_dims", ablate_dims},
            {"probe_windows", probe_windows},
            {"file", echo}};
  }
};

inline ExperimentConfig load_experiment(const fs::path& path) {
  return ExperimentConfig::from_kv(read_kv(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

/// MYO_OUTPUT_ROOT, if set, replaces the configured output directory.
inline fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("MYO_OUTPUT_ROOT"); env && *env) return env;
  return cfg.output_dir;
}

// ---------------------------------------------------------------------------
// Shared plumbing

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw OutputDirError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw OutputDirError("cannot write " + path.string());
  out << text;
}

/// Loads the configured manifest, or generates the synthetic spec under
/// {run_dir}/dataset (reusing an existing copy made from the same spec).
inline DatasetManifest prepare_dataset(const ExperimentConfig& cfg, const fs::path& run_dir) {
  if (!cfg.manifest.empty()) {
    if (!fs::exists(cfg.manifest)) throw ManifestError("manifest " + cfg.manifest.string() + " does not exist");
    return load_dataset(cfg.manifest);
  }
  const SyntheticSpec spec = synthetic_spec_from_kv(read_kv(cfg.synthetic_spec));
  const fs::path dir = run_dir / "dataset";
  if (fs::exists(dir / "manifest.json")) {
    DatasetManifest m = load_dataset(dir / "manifest.json");
    if (m.extra != synthetic_spec_json(spec))
      throw OutputDirError(dir.string() + " holds a dataset generated from a different spec");
    return m;
  }
  generate_synthetic(spec, dir);
  return load_dataset(dir / "manifest.json");
}

inline std::vector<FoldPlan> select_folds(const ExperimentConfig& cfg, const DatasetManifest& m) {
  std::vector<FoldPlan> all = plan_folds(m);
  if (cfg.folds == "all") return all;
  std::vector<FoldPlan> out;
  KvDoc tmp;
  tmp.values["f"] = cfg.folds;
  tmp.line_of["f"] = 0;
  const KvReader r(tmp, {{"f", KvType::IntList, "", "folds"}});
  for (long long k : r.int_list("f")) {
    if (k < 0 || k >= static_cast<long long>(all.size()))
      throw ConfigError("field 'folds': index " + std::to_string(k) + " out of range for " +
                        std::to_string(all.size()) + " subjects");
    out.push_back(all[static_cast<std::size_t>(k)]);
  }
  if (out.empty()) throw ConfigError("field 'folds' selects no folds");
  return out;
}

inline WindowingParams windowing_for(const ModelConfig& m) { return {m.window, m.window / 2}; }

/// Evenly spaced subset of `windows` (the first `n` when spacing is 1).
inline std::vector<Window> probe_subset(const std::vector<Window>& windows, int n) {
  std::vector<Window> out;
  if (windows.empty()) return out;
  const std::size_t step = std::max<std::size_t>(1, windows.size() / static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < windows.size() && out.size() < static_cast<std::size_t>(n); i += step)
    out.push_back(windows[i]);
  return out;
}

struct FoldRun {
  Checkpoint stage1;
  Checkpoint stage2;
  TrainLog log1, log2;
  MetricsReport test1, test2;
  std::optional<InterferenceReport> interference;
};

/// Stage 1 → ms_test report → (optionally) stage 2 → ms_test report.
inline FoldRun run_fold(const ExperimentConfig& cfg, const ModelConfig& model, const FoldPlan& fold,
                        const FoldData& data, bool stage1_only) {
  FoldRun r;
  Checkpoint init;
  init.config = model;
  init.seed = cfg.seed;
  init.params = build_variant<float>(model, derive_seed(cfg.seed, "init"));
  auto s1 = train_stage(1, fold, data, init, cfg.train);
  r.stage1 = std::move(s1.checkpoint);
  r.log1 = std::move(s1.log);
  r.test1 = evaluate(r.stage1.params, model, data.ms_test);
  r.test1.fold_index = fold.fold_index;
  const Checkpoint* final_ck = &r.stage1;
  if (!stage1_only) {
    auto s2 = train_stage(2, fold, data, r.stage1, cfg.train);
    r.stage2 = std::move(s2.checkpoint);
    r.log2 = std::move(s2.log);
    r.test2 = evaluate(r.stage2.params, model, data.ms_test);
    r.test2.fold_index = fold.fold_index;
    final_ck = &r.stage2;
  }
  if (model.fusion == FusionMode::Add || model.fusion == FusionMode::NormAdd)
    r.interference = interference_probe(final_ck->params, model, probe_subset(data.ms_test, cfg.probe_windows));
  return r;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  bool stage1_only = false;
};

struct TrainSummary {
  fs::path run_dir;
  std::vector<nlohmann::json> fold_metrics;
  std::optional<FoldAggregate> aggregate;
};

inline TrainSummary run_train(const ExperimentConfig& cfg, const fs::path& root, const TrainOptions& opt = {}) {
  TrainSummary s;
  s.run_dir = root / cfg.run_id;
  if (fs::exists(s.run_dir / "run.json"))
    throw ConfigError("run_id '" + cfg.run_id + "' already used in " + root.string());
  const DatasetManifest m = prepare_dataset(cfg, s.run_dir);
  const auto folds = select_folds(cfg, m);
  std::vector<MetricsReport> finals;
  for (const auto& fold : folds) {
    const FoldData data = FoldData::load(fold, m, windowing_for(cfg.model));
    const FoldRun r = run_fold(cfg, cfg.model, fold, data, opt.stage1_only);
    const fs::path dir = s.run_dir / ("fold" + std::to_string(fold.fold_index));
    save_checkpoint(dir / (cfg.run_id + ".stage1.ckpt"), r.stage1);
    if (!opt.stage1_only) save_checkpoint(dir / (cfg.run_id + ".stage2.ckpt"), r.stage2);
    write_text(dir / "train_log.jsonl", r.log1.to_jsonl() + r.log2.to_jsonl());
    nlohmann::json j = {{"config", cfg.to_json()},
                        {"fold", fold.to_json()},
                        {"params", count_params(r.stage1.params).to_json()},
                        {"stage1", {{"best_epoch", r.log1.best_epoch}, {"ms_test", r.test1.to_json()}}}};
    if (!opt.stage1_only)
      j["stage2"] = {{"best_epoch", r.log2.best_epoch}, {"ms_test", r.test2.to_json()}};
    if (r.interference) j["interference"] = r.interference->to_json();
    write_json(dir / "metrics.json", j);
    s.fold_metrics.push_back(std::move(j));
    finals.push_back(opt.stage1_only ? r.test1 : r.test2);
  }
  nlohmann::json run = {{"config", cfg.to_json()}, {"folds", nlohmann::json::array()}};
  for (const auto& f : folds) run["folds"].push_back(f.fold_index);
  if (finals.size() >= 2) {
    s.aggregate = aggregate_folds(finals);
    run["aggregate"] = s.aggregate->to_json();
  }
  write_json(s.run_dir / "run.json", run);
  return s;
}

// ---------------------------------------------------------------------------
// ablate-dt2v

inline nlohmann::json run_ablate_dt2v(const ExperimentConfig& cfg, const fs::path& root) {
  if (cfg.model.fusion != FusionMode::Concat || cfg.model.variant != Variant::Time2Vec)
    throw ConfigError("ablate-dt2v requires model.variant = time2vec and model.fusion = concat");
  for (int d : cfg.ablate_dims)
    if (d < 1 || d >= cfg.model.d_model)
      throw ConfigError("ablate.dims entry " + std::to_string(d) + " must lie in [1, d_model)");
  const fs::path run_dir = root / cfg.run_id;
  if (fs::exists(run_dir / "sweep.json")) throw ConfigError("run_id '" + cfg.run_id + "' already has a sweep");
  const DatasetManifest m = prepare_dataset(cfg, run_dir);
  const auto folds = select_folds(cfg, m);

  std::vector<int> dims = cfg.ablate_dims;
  std::sort(dims.begin(), dims.end());
  std::map<int, std::vector<double>> per_dim;
  for (const auto& fold : folds) {
    const FoldData data = FoldData::load(fold, m, windowing_for(cfg.model));
    for (int d : dims) {
      ModelConfig mc = cfg.model;
      mc.d_t2v = d;
      mc.validate();
      per_dim[d].push_back(run_fold(cfg, mc, fold, data, false).test2.macro_f1);
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  for (int d : dims) {
    const auto& v = per_dim[d];
    const MeanSe ms = v.size() >= 2 ? mean_se(v) : MeanSe{v.front(), 0.0};
    rows.push_back({{"d_t2v", d},
                    {"d_spatial", cfg.model.d_model - d},
                    {"n_folds", v.size()},
                    {"mean_f1", ms.mean},
                    {"se", ms.se},
                    {"per_fold", v}});
  }
  const nlohmann::json out = {{"config", cfg.to_json()}, {"rows", rows}};
  write_json(run_dir / "sweep.json", out);
  return out;
}

// ---------------------------------------------------------------------------
// ablate-variants

inline std::vector<ModelConfig> variant_configs(const ModelConfig& base) {
  ModelConfig t2v = base, spe = base, nope = base;
  t2v.variant = Variant::Time2Vec;
  if (t2v.fusion != FusionMode::Concat && t2v.fusion != FusionMode::Add) t2v.fusion = FusionMode::NormAdd;
  spe.variant = Variant::StandardPE;
  spe.fusion = FusionMode::SinusoidalAdd;
  nope.variant = Variant::NoPE;
  nope.fusion = FusionMode::None;
  return {t2v, spe, nope};
}

inline nlohmann::json run_ablate_variants(const ExperimentConfig& cfg, const fs::path& root) {
  const fs::path run_dir = root / cfg.run_id;
  if (fs::exists(run_dir / "variants.json"))
    throw ConfigError("run_id '" + cfg.run_id + "' already has a variant comparison");
  const DatasetManifest m = prepare_dataset(cfg, run_dir);
  const auto folds = select_folds(cfg, m);
  if (folds.size() < 2) throw ConfigError("ablate-variants needs at least 2 folds (set folds = all)");

  const auto variants = variant_configs(cfg.model);
  std::vector<std::vector<MetricsReport>> s1(variants.size()), s2(variants.size());
  for (const auto& fold : folds) {
    const FoldData data = FoldData::load(fold, m, windowing_for(cfg.model));
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const FoldRun r = run_fold(cfg, variants[v], fold, data, false);
      s1[v].push_back(r.test1);
      s2[v].push_back(r.test2);
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::vector<double>> macro2(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const FoldAggregate a1 = aggregate_folds(s1[v]), a2 = aggregate_folds(s2[v]);
    macro2[v] = a2.per_fold_macro;
    rows.push_back({{"variant", variant_name(variants[v].variant)},
                    {"fusion", fusion_name(variants[v].fusion)},
                    {"params", build_variant<float>(variants[v], 0).count()},
                    {"stage1", a1.to_json()},
                    {"stage2", a2.to_json()}});
  }
  auto compare = [&](std::size_t other) -> nlohmann::json {
    try {
      return wilcoxon_signed_rank(macro2[0], macro2[other]).to_json();
    } catch (const DegenerateError& e) {
      return {{"error", e.what()}};
    }
  };
  const nlohmann::json out = {{"config", cfg.to_json()},
                              {"rows", rows},
                              {"wilcoxon",
                               {{"time2vec_vs_standard_pe", compare(1)}, {"time2vec_vs_no_pe", compare(2)}}}};
  write_json(run_dir / "variants.json", out);
  return out;
}

// ---------------------------------------------------------------------------
// adapt

struct AdaptOptions {
  fs::path pretrained_run;  // defaults to {root}/{run_id}
  std::optional<int> epochs_override;
};

inline nlohmann::json run_adapt(const ExperimentConfig& cfg, const fs::path& root, const AdaptOptions& opt = {}) {
  const fs::path run_dir = opt.pretrained_run.empty() ? root / cfg.run_id : opt.pretrained_run;
  TrainConfig tc = cfg.train;
  if (opt.epochs_override) tc.adapt.epochs_max = *opt.epochs_override;
  const DatasetManifest m = prepare_dataset(cfg, run_dir);
  const auto folds = select_folds(cfg, m);

  std::vector<MetricsReport> pre, post;
  nlohmann::json per_fold = nlohmann::json::array();
  for (const auto& fold : folds) {
    const fs::path dir = run_dir / ("fold" + std::to_string(fold.fold_index));
    const fs::path ck_path = dir / (cfg.run_id + ".stage2.ckpt");
    if (!fs::exists(ck_path)) throw ConfigError("missing stage-2 checkpoint " + ck_path.string());
    const Checkpoint pretrained = load_checkpoint(ck_path);
    const FoldData data = FoldData::load(fold, m, windowing_for(pretrained.config));
    const AdaptResult a = fine_tune_adapt(fold, data, pretrained, tc);
    save_checkpoint(dir / (cfg.run_id + ".adapted.ckpt"), a.checkpoint);
    write_text(dir / "adapt_log.jsonl", a.log.to_jsonl());
    const nlohmann::json j = {{"config", cfg.to_json()},
                              {"fold", fold.fold_index},
                              {"calibration_windows", data.adapt_calib.size() + data.adapt_val.size()},
                              {"best_epoch", a.log.best_epoch},
                              {"pre", a.pre.to_json()},
                              {"post", a.post.to_json()}};
    write_json(dir / "adapt.json", j);
    per_fold.push_back(j);
    pre.push_back(a.pre);
    post.push_back(a.post);
  }
  nlohmann::json out = {{"config", cfg.to_json()},
                        {"folds", per_fold},
                        {"reference_not_asserted", {{"pre_macro", "21.0 +/- 2.98"}, {"post_macro", "96.9 +/- 0.52"}}}};
  if (pre.size() >= 2) out["aggregate"] = {{"pre", aggregate_folds(pre).to_json()}, {"post", aggregate_folds(post).to_json()}};
  write_json(run_dir / "adapt.json", out);
  return out;
}

// ---------------------------------------------------------------------------
// export

struct ExportResult {
  std::vector<fs::path> written;
};

/// Plot-ready CSVs from whatever reports the run directory holds.
inline ExportResult run_export(const fs::path& run_dir, const fs::path& out_dir) {
  if (!fs::is_directory(run_dir)) throw OutputDirError("run directory " + run_dir.string() + " does not exist");
  ExportResult res;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    res.written.push_back(out_dir / name);
  };
  auto num = [](const nlohmann::json& v) { return v.dump(); };

  if (fs::exists(run_dir / "sweep.json")) {
    const nlohmann::json rows = read_json(run_dir / "sweep.json").at("rows");
    std::vector<nlohmann::json> sorted(rows.begin(), rows.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a["d_t2v"] < b["d_t2v"]; });
    std::string csv = "d_t2v,d_spatial,mean_f1,se,n_folds\n";
    for (const auto& r : sorted)
      csv += num(r["d_t2v"]) + "," + num(r["d_spatial"]) + "," + num(r["mean_f1"]) + "," + num(r["se"]) + "," +
             num(r["n_folds"]) + "\n";
    emit("sweep.csv", csv);
  }
  if (fs::exists(run_dir / "variants.json")) {
    std::string csv = "variant,fusion,params,stage1_mean,stage1_se,stage2_mean,stage2_se\n";
    const nlohmann::json doc = read_json(run_dir / "variants.json");
    for (const auto& r : doc.at("rows"))
      csv += r["variant"].get<std::string>() + "," + r["fusion"].get<std::string>() + "," + num(r["params"]) + "," +
             num(r["stage1"]["macro"]["mean"]) + "," + num(r["stage1"]["macro"]["se"]) + "," +
             num(r["stage2"]["macro"]["mean"]) + "," + num(r["stage2"]["macro"]["se"]) + "\n";
    emit("variants.csv", csv);
  }

  std::vector<fs::path> fold_dirs;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.is_directory() && e.path().filename().string().starts_with("fold")) fold_dirs.push_back(e.path());
  std::sort(fold_dirs.begin(), fold_dirs.end());

  std::string hist = "bin_lo,bin_hi,spatial_count,temporal_count,fusion_mode,fold\n";
  bool any_hist = false;
  std::string adapt = "fold,class,pre_f1,post_f1\n";
  bool any_adapt = false;
  for (const auto& dir : fold_dirs) {
    if (fs::exists(dir / "metrics.json")) {
      const auto j = read_json(dir / "metrics.json");
      if (j.contains("interference")) {
        const auto& ir = j["interference"];
        const auto& h = ir["histogram"];
        const std::string fold = num(j["fold"]["fold"]);
        for (std::size_t b = 0; b + 1 < h["edges"].size(); ++b)
          hist += num(h["edges"][b]) + "," + num(h["edges"][b + 1]) + "," + num(h["spatial_counts"][b]) + "," +
                  num(h["temporal_counts"][b]) + "," + ir["fusion"].get<std::string>() + "," + fold + "\n";
        any_hist = true;
      }
    }
    if (fs::exists(dir / "adapt.json")) {
      const auto j = read_json(dir / "adapt.json");
      const std::string fold = num(j["fold"]);
      const auto& pre = j["pre"]["per_class"];
      const auto& post = j["post"]["per_class"];
      for (std::size_t k = 0; k < pre.size(); ++k)
        adapt += fold + "," + pre[k]["class"].get<std::string>() + "," + num(pre[k]["f1"]) + "," +
                 num(post[k]["f1"]) + "\n";
      adapt += fold + ",macro," + num(j["pre"]["macro_f1"]) + "," + num(j["post"]["macro_f1"]) + "\n";
      any_adapt = true;
    }
  }
  if (any_hist) emit("interference_hist.csv", hist);
  if (any_adapt) emit("adapt.csv", adapt);
  if (res.written.empty()) throw OutputDirError("run directory " + run_dir.string() + " holds no exportable reports");
  return res;
}

}  // namespace myo
