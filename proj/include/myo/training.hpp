#pragma once

#include "myo/augment.hpp"
#include "myo/checkpoint.hpp"
#include "myo/evaluation.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace myo {

struct StageConfig {
  double learning_rate = 1e-3;
  int epochs_max = 50;
  int batch_size = 64;
  int patience = 5;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  StageConfig stage1{1e-3, 50, 64, 5};
  StageConfig stage2{1e-4, 20, 64, 5};
  StageConfig adapt{1e-4, 30, 64, 5};
  AugmentConfig augment;
  AdamConfig adam;
  bool adapt_head_only = false;
  std::uint64_t seed = 0;

  void validate() const {
    for (const StageConfig* s : {&stage1, &stage2, &adapt}) {
      if (!(s->learning_rate > 0)) throw ConfigError("learning rates must be > 0");
      if (s->epochs_max < 0) throw ConfigError("epochs_max must be >= 0");
      if (s->batch_size < 1) throw ConfigError("batch_size must be >= 1");
      if (s->patience < 1) throw ConfigError("patience must be >= 1");
    }
    if (!(stage2.learning_rate < stage1.learning_rate))
      throw ConfigError("stage2 learning rate must be below the stage1 rate");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0))
      throw ConfigError("invalid Adam hyperparameters");
    augment.validate();
  }
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double learning_rate = 0.0;
  double wall_time_s = 0.0;

  nlohmann::json to_json() const {
    return {{"stage", stage},
            {"epoch", epoch},
            {"train_loss", train_loss},
            {"val_macro_f1", val_macro_f1},
            {"learning_rate", learning_rate},
            {"wall_time_s", wall_time_s}};
  }
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_macro_f1 = 0.0;
  double initial_batch_loss = 0.0;
  double wall_time_s = 0.0;

  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) out += e.to_json().dump() + "\n";
    return out;
  }
};

// ---------------------------------------------------------------------------
// Loss

template <typename S>
struct LossResult {
  S loss = S(0);
  Matrix<S> dlogits;  // 1×K
};

/// −Σ y log softmax(z), computed as −Σ y (z − max − log Σ exp(z − max)).
template <typename S>
LossResult<S> cce_loss(const Matrix<S>& logits, const Label& target) {
  const Eigen::Index K = logits.cols();
  if (K > kNumGestures) throw std::invalid_argument("more logits than label entries");
  const S m = logits.maxCoeff();
  const Matrix<S> shifted = logits.array() - m;
  const S log_z = std::log(shifted.array().exp().sum());
  LossResult<S> r;
  r.dlogits.resize(1, K);
  S ysum = S(0);
  for (Eigen::Index k = 0; k < K; ++k) {
    const S y = S(target.probs[k]);
    r.loss -= y * (shifted(0, k) - log_z);
    ysum += y;
  }
  for (Eigen::Index k = 0; k < K; ++k)
    r.dlogits(0, k) = std::exp(shifted(0, k) - log_z) * ysum - S(target.probs[k]);
  return r;
}

// ---------------------------------------------------------------------------
// Gradients

template <typename S>
struct GradResult {
  S loss = S(0);
  ModelParams<S> grads;
};

/// Mean batch CCE and its exact gradient; dropout and droppath masks come from
/// `rng` in the order the forward pass requests them.
template <typename S>
GradResult<S> compute_gradients(const std::vector<const Window*>& batch, const ModelParams<S>& params,
                                const ModelConfig& cfg, Mode mode, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  GradResult<S> r;
  r.grads = params.zeros_like();
  for (const Window* w : batch) {
    ModelCache<S> cache;
    ForwardOptions<S> opt;
    opt.mode = mode;
    opt.rng = &rng;
    opt.cache = &cache;
    Matrix<S> logits;
    if constexpr (std::is_same_v<S, float>) logits = model_forward<S>(w->samples, params, cfg, opt);
    else logits = model_forward<S>(w->samples.template cast<S>(), params, cfg, opt);
    const LossResult<S> l = cce_loss(logits, w->label);
    r.loss += l.loss;
    model_backward<S>(l.dlogits, params, cfg, cache, r.grads);
  }
  const S inv = S(1) / S(batch.size());
  r.loss *= inv;
  r.grads.for_each([&](const std::string& name, Matrix<S>& g) {
    g *= inv;
    if (!g.allFinite()) throw NumericsError("non-finite gradient in " + name);
  });
  return r;
}

// ---------------------------------------------------------------------------
// Adam

template <typename S>
struct AdamState {
  ModelParams<S> m, v;
  long t = 0;

  static AdamState fresh(const ModelParams<S>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

/// One bias-corrected Adam update. `trainable` (optional) filters tensors by name.
template <typename S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state, double lr,
               const AdamConfig& ac, const std::function<bool(const std::string&)>& trainable = {}) {
  ++state.t;
  const double c1 = 1.0 - std::pow(ac.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(ac.beta2, static_cast<double>(state.t));
  std::vector<const Matrix<S>*> g;
  std::vector<Matrix<S>*> m, v;
  grads.for_each([&](const std::string&, const Matrix<S>& t) { g.push_back(&t); });
  state.m.for_each([&](const std::string&, Matrix<S>& t) { m.push_back(&t); });
  state.v.for_each([&](const std::string&, Matrix<S>& t) { v.push_back(&t); });
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Matrix<S>& p) {
    const std::size_t k = i++;
    if (trainable && !trainable(name)) return;
    const auto& gk = g[k]->array();
    m[k]->array() = S(ac.beta1) * m[k]->array() + S(1 - ac.beta1) * gk;
    v[k]->array() = S(ac.beta2) * v[k]->array() + S(1 - ac.beta2) * gk.square();
    p.array() -= S(lr) * (m[k]->array() / S(c1)) / ((v[k]->array() / S(c2)).sqrt() + S(ac.epsilon));
  });
}

// ---------------------------------------------------------------------------
// Training loops

struct FoldData {
  std::vector<Window> ms_train, ms_val, ms_test;
  std::vector<Window> adapt_calib, adapt_val, adapt_test;

  static FoldData load(const FoldPlan& fold, const DatasetManifest& manifest, const WindowingParams& wp = {}) {
    FoldData d;
    d.ms_train = materialize_split(fold, Role::ms_train, manifest, wp);
    d.ms_val = materialize_split(fold, Role::ms_val, manifest, wp);
    d.ms_test = materialize_split(fold, Role::ms_test, manifest, wp);
    d.adapt_calib = materialize_split(fold, Role::adapt_calib, manifest, wp);
    d.adapt_val = materialize_split(fold, Role::adapt_val, manifest, wp);
    d.adapt_test = materialize_split(fold, Role::adapt_test, manifest, wp);
    return d;
  }
};

inline void require_no_subject(const std::vector<Window>& windows, int held_out, const std::string& what) {
  for (const auto& w : windows)
    if (w.provenance.subject == held_out)
      throw LeakageError(what + " contains a window of held-out subject " + std::to_string(held_out));
}

inline void require_only_subject(const std::vector<Window>& windows, int subject, const std::string& what) {
  for (const auto& w : windows)
    if (w.provenance.subject != subject)
      throw LeakageError(what + " contains a window of subject " + std::to_string(w.provenance.subject));
}

struct FitOptions {
  std::string stage;
  StageConfig sc;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::function<bool(const std::string&)> trainable;
};

/// Mini-batch Adam with a seeded per-epoch shuffle and early stopping on
/// validation macro-F1. Returns the parameters of the best epoch.
inline TrainLog fit(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<Window>& train,
                    const std::vector<Window>& val, const FitOptions& fo) {
  TrainLog log;
  const auto t_start = std::chrono::steady_clock::now();
  if (fo.sc.epochs_max == 0) return log;
  if (train.empty() || val.empty()) throw FoldPlanError("stage " + fo.stage + " has an empty split");

  AdamState<float> adam = AdamState<float>::fresh(params);
  Rng shuffle_rng(derive_seed(fo.seed, "shuffle:" + fo.stage));
  Rng dropout_rng(derive_seed(fo.seed, "dropout:" + fo.stage));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  ModelParams<float> best = params;
  double best_f1 = -1.0;
  int stale = 0;
  bool first_batch = true;
  for (int epoch = 1; epoch <= fo.sc.epochs_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    std::vector<const Window*> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(fo.sc.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(fo.sc.batch_size));
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
      const GradResult<float> gr = compute_gradients(batch, params, cfg, Mode::train, dropout_rng);
      if (first_batch) {
        log.initial_batch_loss = gr.loss;
        first_batch = false;
      }
      adam_step(params, gr.grads, adam, fo.sc.learning_rate, fo.adam, fo.trainable);
      loss_sum += gr.loss;
      ++n_batches;
    }
    EpochRecord rec;
    rec.stage = fo.stage;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    rec.val_macro_f1 = evaluate(params, cfg, val).macro_f1;
    rec.learning_rate = fo.sc.learning_rate;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    log.epochs.push_back(rec);
    if (rec.val_macro_f1 > best_f1) {
      best_f1 = rec.val_macro_f1;
      best = params;
      log.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= fo.sc.patience) {
      break;
    }
  }
  params = std::move(best);
  log.best_val_macro_f1 = best_f1;
  log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return log;
}

struct StageResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Stage 1 trains on augment_set(ms_train); stage 2 continues from `start` on
/// raw ms_train with a lower rate and fresh optimizer moments.
inline StageResult train_stage(int stage, const FoldPlan& fold, const FoldData& data, const Checkpoint& start,
                               const TrainConfig& tc) {
  tc.validate();
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (stage == 2 && start.stage != "stage1") throw ConfigError("stage 2 requires a stage-1 checkpoint");
  if (start.subjects_seen.count(fold.held_out_subject))
    throw LeakageError("starting checkpoint has seen held-out subject " + std::to_string(fold.held_out_subject));
  if (data.ms_train.empty() || data.ms_val.empty()) throw FoldPlanError("ms_train or ms_val split is empty");
  require_no_subject(data.ms_train, fold.held_out_subject, "ms_train");
  require_no_subject(data.ms_val, fold.held_out_subject, "ms_val");

  StageResult r;
  r.checkpoint = start;
  r.checkpoint.stage = stage == 1 ? "stage1" : "stage2";
  FitOptions fo;
  fo.stage = r.checkpoint.stage;
  fo.sc = stage == 1 ? tc.stage1 : tc.stage2;
  fo.adam = tc.adam;
  fo.seed = derive_seed(tc.seed, {fold.fold_index, stage});
  if (stage == 1) {
    AugmentConfig ac = tc.augment;
    ac.seed = derive_seed(tc.seed, {fold.fold_index, 101});
    const std::vector<Window> augmented = augment_set(data.ms_train, ac);
    r.log = fit(r.checkpoint.params, start.config, augmented, data.ms_val, fo);
  } else {
    r.log = fit(r.checkpoint.params, start.config, data.ms_train, data.ms_val, fo);
  }
  if (!r.log.epochs.empty())
    for (const auto& w : data.ms_train) r.checkpoint.subjects_seen.insert(w.provenance.subject);
  return r;
}

struct AdaptResult {
  Checkpoint checkpoint;
  MetricsReport pre;
  MetricsReport post;
  TrainLog log;
};

/// Direct-transfer report, fine-tune on adapt_calib (early stopping on
/// adapt_val), then the post-adaptation report on adapt_test.
inline AdaptResult fine_tune_adapt(const FoldPlan& fold, const FoldData& data, const Checkpoint& pretrained,
                                   const TrainConfig& tc) {
  tc.validate();
  if (pretrained.subjects_seen.count(fold.held_out_subject))
    throw LeakageError("pretrained checkpoint has seen held-out subject " + std::to_string(fold.held_out_subject));
  for (const auto* split : {&data.adapt_calib, &data.adapt_val, &data.adapt_test})
    require_only_subject(*split, fold.held_out_subject, "adaptation split");
  if (data.adapt_test.empty()) throw FoldPlanError("adapt_test split is empty");

  AdaptResult r;
  r.checkpoint = pretrained;
  r.checkpoint.stage = "adapted";
  r.pre = evaluate(pretrained.params, pretrained.config, data.adapt_test);
  FitOptions fo;
  fo.stage = "adapt";
  fo.sc = tc.adapt;
  fo.adam = tc.adam;
  fo.seed = derive_seed(tc.seed, {fold.fold_index, 3});
  if (tc.adapt_head_only) fo.trainable = [](const std::string& name) { return name.starts_with("head."); };
  r.log = fit(r.checkpoint.params, pretrained.config, data.adapt_calib, data.adapt_val, fo);
  r.post = r.log.epochs.empty() ? r.pre : evaluate(r.checkpoint.params, pretrained.config, data.adapt_test);
  r.pre.fold_index = r.post.fold_index = fold.fold_index;
  if (!r.log.epochs.empty()) r.checkpoint.subjects_seen.insert(fold.held_out_subject);
  return r;
}

}  // namespace myo
