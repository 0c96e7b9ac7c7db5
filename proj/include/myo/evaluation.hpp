#pragma once

#include "myo/encoder.hpp"
#include "myo/windowing.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#ifdef __linux__
#include <sched.h>
#endif

namespace myo {

// ---------------------------------------------------------------------------
// Classification metrics

struct MetricsReport {
  int n_classes = kNumGestures;
  std::vector<std::vector<long>> confusion;  // rows = truth, cols = prediction
  std::vector<double> per_class_f1;
  /// Classes with no true and no predicted instances; they score 0.
  std::vector<int> undefined_classes;
  double macro_f1 = 0.0;
  long n_windows = 0;
  int fold_index = -1;
  std::string variant;
  std::string fusion;

  nlohmann::json to_json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (int k = 0; k < n_classes; ++k) {
      const std::string name = n_classes == kNumGestures ? std::string(kGestureNames[k]) : std::to_string(k);
      per_class.push_back({{"class", name}, {"f1", per_class_f1[k]}});
    }
    return {{"fold", fold_index},
            {"variant", variant},
            {"fusion", fusion},
            {"n_windows", n_windows},
            {"macro_f1", macro_f1},
            {"per_class", per_class},
            {"undefined_classes", undefined_classes},
            {"confusion", confusion}};
  }
};

/// Per-class F1 = 2TP / (2TP + FP + FN); macro = unweighted mean over classes.
inline MetricsReport metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& pred,
                                              int n_classes = kNumGestures) {
  if (truth.empty()) throw EvalError("cannot evaluate an empty window set");
  if (truth.size() != pred.size()) throw std::invalid_argument("truth and prediction lengths differ");
  MetricsReport r;
  r.n_classes = n_classes;
  r.confusion.assign(n_classes, std::vector<long>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes)
      throw std::invalid_argument("class index out of range");
    ++r.confusion[truth[i]][pred[i]];
  }
  r.n_windows = static_cast<long>(truth.size());
  r.per_class_f1.assign(n_classes, 0.0);
  for (int k = 0; k < n_classes; ++k) {
    long tp = r.confusion[k][k], fp = 0, fn = 0;
    for (int j = 0; j < n_classes; ++j) {
      if (j == k) continue;
      fp += r.confusion[j][k];
      fn += r.confusion[k][j];
    }
    const long denom = 2 * tp + fp + fn;
    if (denom == 0) r.undefined_classes.push_back(k);
    r.per_class_f1[k] = denom == 0 ? 0.0 : 2.0 * tp / denom;
  }
  r.macro_f1 = std::accumulate(r.per_class_f1.begin(), r.per_class_f1.end(), 0.0) / n_classes;
  return r;
}

inline int argmax_row(const Matrix<float>& logits) {
  Eigen::Index k;
  logits.row(0).maxCoeff(&k);
  return static_cast<int>(k);
}

template <typename S>
std::vector<int> predict(const ModelParams<S>& params, const ModelConfig& cfg, const std::vector<Window>& windows) {
  std::vector<int> pred;
  pred.reserve(windows.size());
  for (const auto& w : windows) {
    Matrix<S> logits;
    if constexpr (std::is_same_v<S, float>) logits = model_forward<S>(w.samples, params, cfg);
    else logits = model_forward<S>(w.samples.template cast<S>(), params, cfg);
    Eigen::Index k;
    logits.row(0).maxCoeff(&k);
    pred.push_back(static_cast<int>(k));
  }
  return pred;
}

/// Eval-mode argmax predictions scored against hard labels.
template <typename S>
MetricsReport evaluate(const ModelParams<S>& params, const ModelConfig& cfg, const std::vector<Window>& windows) {
  if (windows.empty()) throw EvalError("cannot evaluate an empty window set");
  std::vector<int> truth;
  truth.reserve(windows.size());
  for (const auto& w : windows) {
    if (!w.label.is_hard()) throw EvalError("evaluation requires hard labels");
    truth.push_back(w.label.argmax());
  }
  MetricsReport r = metrics_from_predictions(truth, predict(params, cfg, windows), cfg.n_classes);
  r.variant = std::string(variant_name(cfg.variant));
  r.fusion = std::string(fusion_name(cfg.fusion));
  return r;
}

// ---------------------------------------------------------------------------
// Fold aggregation: mean and standard error (sample std, ddof = 1, / √n).

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  if (v.size() < 2) throw EvalError("standard error needs at least 2 values");
  const double n = static_cast<double>(v.size());
  // Shifted by the first value so identical inputs give exactly zero spread.
  const double k = v.front();
  double sum = 0.0, ss = 0.0;
  for (double x : v) sum += x - k;
  const double shift = sum / n;
  for (double x : v) ss += (x - k - shift) * (x - k - shift);
  return {k + shift, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

struct FoldAggregate {
  std::vector<MeanSe> per_class;
  MeanSe macro;
  std::vector<std::vector<double>> per_fold_class_f1;  // [fold][class]
  std::vector<double> per_fold_macro;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < per_class.size(); ++k) {
      const std::string name = per_class.size() == kNumGestures ? std::string(kGestureNames[k]) : std::to_string(k);
      rows.push_back({{"class", name}, {"mean", per_class[k].mean}, {"se", per_class[k].se}});
    }
    return {{"per_class", rows},
            {"macro", {{"mean", macro.mean}, {"se", macro.se}}},
            {"per_fold_macro", per_fold_macro},
            {"per_fold_class_f1", per_fold_class_f1}};
  }
};

inline FoldAggregate aggregate_folds(const std::vector<MetricsReport>& reports) {
  if (reports.size() < 2) throw EvalError("fold aggregation needs at least 2 reports");
  const int K = reports.front().n_classes;
  FoldAggregate a;
  for (const auto& r : reports) {
    if (r.n_classes != K) throw EvalError("reports disagree on the number of classes");
    a.per_fold_class_f1.push_back(r.per_class_f1);
    a.per_fold_macro.push_back(r.macro_f1);
  }
  for (int k = 0; k < K; ++k) {
    std::vector<double> col;
    for (const auto& r : reports) col.push_back(r.per_class_f1[k]);
    a.per_class.push_back(mean_se(col));
  }
  a.macro = mean_se(a.per_fold_macro);
  return a;
}

// ---------------------------------------------------------------------------
// Exact Wilcoxon signed-rank test

struct WilcoxonResult {
  double w = 0.0;         // min(W+, W−)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;   // exact, two-sided
  int n_nonzero = 0;

  nlohmann::json to_json() const {
    return {{"W", w}, {"W_plus", w_plus}, {"W_minus", w_minus}, {"p", p_value}, {"n", n_nonzero}};
  }
};

/// Midranks of |d| (1-based), ties sharing the mean of their positions.
inline std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t m = values.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(m);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Zero differences are dropped; p counts, over all 2^m sign assignments of
/// the nonzero |differences|, those whose min rank-sum is ≤ the observed one.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon needs paired samples");
  if (a.size() < 2 || a.size() > 20) throw std::invalid_argument("exact wilcoxon supports 2 <= n <= 20");
  std::vector<double> mags;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    mags.push_back(std::abs(d));
    positive.push_back(d > 0);
  }
  if (mags.empty()) throw DegenerateError("all paired differences are zero");
  const std::vector<double> ranks = midranks(mags);
  const int m = static_cast<int>(ranks.size());

  // Midranks are multiples of 1/2, so doubled ranks are exact integers.
  std::vector<std::int64_t> r2(m);
  std::int64_t total2 = 0;
  for (int i = 0; i < m; ++i) total2 += r2[i] = std::llround(2.0 * ranks[i]);
  std::int64_t plus2 = 0;
  for (int i = 0; i < m; ++i)
    if (positive[i]) plus2 += r2[i];
  const std::int64_t observed2 = std::min(plus2, total2 - plus2);

  std::uint64_t hits = 0;
  const std::uint64_t patterns = std::uint64_t{1} << m;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    std::int64_t s = 0;
    for (int i = 0; i < m; ++i)
      if (mask >> i & 1U) s += r2[i];
    if (std::min(s, total2 - s) <= observed2) ++hits;
  }
  WilcoxonResult r;
  r.n_nonzero = m;
  r.w_plus = plus2 / 2.0;
  r.w_minus = (total2 - plus2) / 2.0;
  r.w = observed2 / 2.0;
  r.p_value = static_cast<double>(hits) / static_cast<double>(patterns);
  return r;
}

// ---------------------------------------------------------------------------
// Branch-norm interference probe

struct Histogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<long> spatial_counts;
  std::vector<long> temporal_counts;
};

struct InterferenceReport {
  std::string fusion;
  std::vector<double> spatial_norms;
  std::vector<double> temporal_norms;
  double spatial_mean = 0.0;
  double temporal_mean = 0.0;
  Histogram histogram;

  double ratio() const { return spatial_mean / temporal_mean; }

  nlohmann::json to_json() const {
    nlohmann::json ref = fusion == "add" ? nlohmann::json{{"spatial_mean", 32.1}, {"temporal_mean", 7.9}}
                                         : nlohmann::json{{"spatial_mean", 3.04}, {"temporal_mean", 0.73}};
    return {{"fusion", fusion},
            {"spatial_mean", spatial_mean},
            {"temporal_mean", temporal_mean},
            {"ratio", ratio()},
            {"n_samples", spatial_norms.size()},
            {"histogram",
             {{"edges", histogram.edges},
              {"spatial_counts", histogram.spatial_counts},
              {"temporal_counts", histogram.temporal_counts}}},
            {"reference_not_asserted", ref}};
  }
};

inline Histogram shared_histogram(const std::vector<double>& a, const std::vector<double>& b, int n_bins) {
  double hi = 0.0;
  for (double x : a) hi = std::max(hi, x);
  for (double x : b) hi = std::max(hi, x);
  if (hi <= 0.0) hi = 1.0;
  Histogram h;
  h.edges.resize(n_bins + 1);
  for (int i = 0; i <= n_bins; ++i) h.edges[i] = hi * i / n_bins;
  auto fill = [&](const std::vector<double>& v, std::vector<long>& counts) {
    counts.assign(n_bins, 0);
    for (double x : v) ++counts[std::min(n_bins - 1, static_cast<int>(x / hi * n_bins))];
  };
  fill(a, h.spatial_counts);
  fill(b, h.temporal_counts);
  return h;
}

template <typename S>
InterferenceReport interference_probe(const ModelParams<S>& params, const ModelConfig& cfg,
                                      const std::vector<Window>& probe, int n_bins = 40) {
  if (cfg.fusion != FusionMode::Add && cfg.fusion != FusionMode::NormAdd)
    throw ConfigError("interference probe needs add or norm_add fusion, got " + std::string(fusion_name(cfg.fusion)));
  if (probe.empty()) throw EvalError("interference probe needs at least one window");
  InterferenceReport r;
  r.fusion = std::string(fusion_name(cfg.fusion));
  for (const auto& w : probe) {
    FusionDiagnostics diag;
    ForwardOptions<S> opt;
    opt.diagnostics = &diag;
    if constexpr (std::is_same_v<S, float>) model_forward<S>(w.samples, params, cfg, opt);
    else model_forward<S>(w.samples.template cast<S>(), params, cfg, opt);
    r.spatial_norms.insert(r.spatial_norms.end(), diag.spatial_norms.begin(), diag.spatial_norms.end());
    r.temporal_norms.insert(r.temporal_norms.end(), diag.temporal_norms.begin(), diag.temporal_norms.end());
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  r.spatial_mean = mean(r.spatial_norms);
  r.temporal_mean = mean(r.temporal_norms);
  r.histogram = shared_histogram(r.spatial_norms, r.temporal_norms, n_bins);
  return r;
}

// ---------------------------------------------------------------------------
// Parameter counting

struct ParamCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_tensor;
  std::map<std::string, std::size_t> per_module;  // stem, time2vec, fusion, layers.N, final_norm, head

  nlohmann::json to_json() const {
    return {{"total", total}, {"per_module", per_module}, {"per_tensor", per_tensor}};
  }
};

template <typename S>
ParamCount count_params(const ModelParams<S>& params) {
  ParamCount c;
  params.for_each([&](const std::string& name, const Matrix<S>& t) {
    const auto n = static_cast<std::size_t>(t.size());
    c.total += n;
    c.per_tensor[name] = n;
    std::string module = name.substr(0, name.find('.'));
    if (module == "layers") module = name.substr(0, name.find('.', 7));
    c.per_module[module] += n;
  });
  return c;
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyReport {
  int n_runs = 0;
  int warmup = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double budget_ms = 125.0;
  double reference_ms = 21.5;  // not asserted

  bool within_budget() const { return mean_ms < budget_ms; }

  nlohmann::json to_json() const {
    return {{"n_runs", n_runs},         {"warmup", warmup},
            {"mean_ms", mean_ms},       {"p50_ms", p50_ms},
            {"p95_ms", p95_ms},         {"budget_ms", budget_ms},
            {"within_budget", within_budget()}, {"reference_ms_not_asserted", reference_ms}};
  }
};

/// Restricts the calling thread to one CPU; best effort.
inline void pin_to_single_cpu() {
#ifdef __linux__
  cpu_set_t current;
  CPU_ZERO(&current);
  if (sched_getaffinity(0, sizeof(current), &current) != 0) return;
  for (int cpu = 0; cpu < CPU_SETSIZE; ++cpu) {
    if (CPU_ISSET(cpu, &current)) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(cpu, &one);
      sched_setaffinity(0, sizeof(one), &one);
      return;
    }
  }
#endif
}

inline double nearest_rank(std::vector<double> sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

template <typename S>
LatencyReport profile_latency(const ModelParams<S>& params, const ModelConfig& cfg, int n_runs, int warmup = 10,
                              std::uint64_t seed = 0) {
  if (n_runs < 1) throw ConfigError("profile needs at least one run");
  pin_to_single_cpu();
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 100.0);
  Matrix<S> window(cfg.window, cfg.channels);
  for (Eigen::Index i = 0; i < window.size(); ++i) window.data()[i] = static_cast<S>(noise(rng));
  volatile S sink = 0;
  for (int i = 0; i < warmup; ++i) sink = sink + model_forward<S>(window, params, cfg)(0, 0);
  std::vector<double> ms;
  ms.reserve(n_runs);
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + model_forward<S>(window, params, cfg)(0, 0);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  LatencyReport r;
  r.n_runs = n_runs;
  r.warmup = warmup;
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / n_runs;
  r.p50_ms = nearest_rank(ms, 0.5);
  r.p95_ms = nearest_rank(ms, 0.95);
  return r;
}

}  // namespace myo
