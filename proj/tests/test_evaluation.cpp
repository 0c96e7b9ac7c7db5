#include "myo/evaluation.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace myo;

TEST(Metrics, HandComputedTwoClassExample) {
  const auto r = metrics_from_predictions({0, 0, 1}, {0, 1, 1}, 2);
  EXPECT_NEAR(r.per_class_f1[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.per_class_f1[1], 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.macro_f1, 2.0 / 3, 1e-12);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<long>>{{1, 1}, {0, 1}}));
  EXPECT_TRUE(r.undefined_classes.empty());
}

TEST(Metrics, PerfectPredictionsScoreOne) {
  std::vector<int> t(50);
  for (int i = 0; i < 50; ++i) t[i] = i % 10;
  const auto r = metrics_from_predictions(t, t, 10);
  for (double f : r.per_class_f1) EXPECT_EQ(f, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(Metrics, AbsentClassScoresZeroAndIsFlagged) {
  const auto r = metrics_from_predictions({0, 1, 1}, {0, 1, 1}, 3);
  EXPECT_EQ(r.per_class_f1[2], 0.0);
  EXPECT_EQ(r.undefined_classes, std::vector<int>{2});
  EXPECT_NEAR(r.macro_f1, 2.0 / 3, 1e-12);
}

TEST(Metrics, EmptyInputIsEvalError) { EXPECT_THROW(metrics_from_predictions({}, {}, 10), EvalError); }

TEST(Metrics, ConservationBoundsAndRelabelingInvariance) {
  Rng rng(3);
  std::uniform_int_distribution<int> cls(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(200), p(200);
    for (int i = 0; i < 200; ++i) t[i] = cls(rng), p[i] = rng() % 3 == 0 ? cls(rng) : t[i];
    const auto r = metrics_from_predictions(t, p, 10);
    long sum = 0;
    for (const auto& row : r.confusion)
      for (long c : row) sum += c;
    EXPECT_EQ(sum, 200);
    EXPECT_EQ(r.n_windows, 200);
    for (double f : r.per_class_f1) EXPECT_TRUE(f >= 0 && f <= 1);
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> t2(200), p2(200);
    for (int i = 0; i < 200; ++i) t2[i] = perm[t[i]], p2[i] = perm[p[i]];
    const auto r2 = metrics_from_predictions(t2, p2, 10);
    EXPECT_NEAR(r2.macro_f1, r.macro_f1, 1e-12);
    for (int k = 0; k < 10; ++k) EXPECT_NEAR(r2.per_class_f1[perm[k]], r.per_class_f1[k], 1e-12);
  }
}

TEST(Aggregate, StandardErrorClosedForm) {
  const auto s = mean_se({0.9, 1.0});
  EXPECT_NEAR(s.mean, 0.95, 1e-12);
  EXPECT_NEAR(s.se, 0.05, 1e-12);
  EXPECT_EQ(mean_se({0.7, 0.7, 0.7}).se, 0.0);
  EXPECT_THROW(mean_se({1.0}), EvalError);
}

TEST(Aggregate, ScaleEquivariance) {
  const std::vector<double> v{0.91, 0.87, 0.95, 0.99, 0.9};
  const auto base = mean_se(v);
  for (double c : {2.0, -3.0, 0.5}) {
    std::vector<double> w;
    for (double x : v) w.push_back(c * x);
    const auto s = mean_se(w);
    EXPECT_NEAR(s.mean, c * base.mean, 1e-12);
    EXPECT_NEAR(s.se, std::abs(c) * base.se, 1e-12);
  }
}

TEST(Aggregate, IdenticalFoldsHaveZeroSe) {
  const auto r = metrics_from_predictions({0, 1, 2, 2}, {0, 1, 2, 1}, 3);
  const auto a = aggregate_folds(std::vector<MetricsReport>(8, r));
  EXPECT_EQ(a.macro.se, 0.0);
  for (const auto& c : a.per_class) EXPECT_EQ(c.se, 0.0);
  EXPECT_NEAR(a.macro.mean, r.macro_f1, 1e-12);
  EXPECT_THROW(aggregate_folds({r}), EvalError);
}

TEST(Wilcoxon, AllPositiveEightPairs) {
  const std::vector<double> a{0.96, 0.95, 0.97, 0.94, 0.98, 0.95, 0.96, 0.97};
  const std::vector<double> b{0.90, 0.91, 0.89, 0.92, 0.88, 0.93, 0.87, 0.86};
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.w, 0.0);
  EXPECT_EQ(r.n_nonzero, 8);
  EXPECT_DOUBLE_EQ(r.p_value, 0.0078125);
}

TEST(Wilcoxon, ThreePairsByHand) {
  const auto r = wilcoxon_signed_rank({1, 2, 0}, {0, 0, 3});
  EXPECT_EQ(r.w_plus, 3.0);
  EXPECT_EQ(r.w_minus, 3.0);
  EXPECT_EQ(r.w, 3.0);
  EXPECT_DOUBLE_EQ(r.p_value, oracles::wilcoxon_p({1, 2, -3}));
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(Wilcoxon, MatchesReverseOrderEnumeration) {
  Rng rng(17);
  std::uniform_int_distribution<int> size(2, 10), val(-4, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng);
    std::vector<double> a(n), b(n, 0.0), d(n);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      a[i] = d[i] = val(rng) * 0.5;  // coarse values force ties and zeros
      any = any || d[i] != 0.0;
    }
    if (!any) continue;
    EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(a, b).p_value, oracles::wilcoxon_p(d));
  }
}

TEST(Wilcoxon, Errors) {
  EXPECT_THROW(wilcoxon_signed_rank({0.5, 0.6, 0.7}, {0.5, 0.6, 0.7}), DegenerateError);
  EXPECT_THROW(wilcoxon_signed_rank({1.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank(std::vector<double>(21, 1.0), std::vector<double>(21, 0.0)), std::invalid_argument);
}

TEST(Wilcoxon, MidranksShareTiedPositions) {
  EXPECT_EQ(midranks({3.0, 1.0, 3.0, 2.0}), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
}

namespace {

ModelConfig small(FusionMode f, Variant v = Variant::Time2Vec) {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 1;
  c.n_heads = 4;
  c.d_ff = 32;
  c.d_t2v = f == FusionMode::Concat ? 16 : 32;
  c.d_head = 16;
  c.fusion = f;
  c.variant = v;
  return c;
}

std::vector<Window> probe_windows(int n) {
  Rng rng(5);
  std::normal_distribution<double> x(0.0, 80.0);
  std::vector<Window> out;
  for (int i = 0; i < n; ++i) {
    Window w;
    w.samples.resize(1000, 2);
    for (Eigen::Index j = 0; j < w.samples.size(); ++j) w.samples.data()[j] = static_cast<float>(x(rng));
    w.label = Label::hard(i % 10);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST(Interference, NormAddIdentityAffineGivesUnitRatio) {
  const auto cfg = small(FusionMode::NormAdd);
  const auto p = build_variant<float>(cfg, 1);
  const auto r = interference_probe(p, cfg, probe_windows(3));
  EXPECT_EQ(r.spatial_norms.size(), 750u);
  for (double n : r.spatial_norms) EXPECT_NEAR(n, std::sqrt(32.0), 1e-3);
  EXPECT_NEAR(r.ratio(), 1.0, 1e-3);
  long total = 0;
  for (long c : r.histogram.spatial_counts) total += c;
  EXPECT_EQ(total, 750);
  const auto j = r.to_json();
  EXPECT_EQ(j["reference_not_asserted"]["spatial_mean"], 3.04);
}

TEST(Interference, AddModeRecordsRawNorms) {
  const auto cfg = small(FusionMode::Add);
  const auto p = build_variant<float>(cfg, 1);
  const auto r = interference_probe(p, cfg, probe_windows(2));
  long s = 0, t = 0;
  for (long c : r.histogram.spatial_counts) s += c;
  for (long c : r.histogram.temporal_counts) t += c;
  EXPECT_EQ(s, 500);
  EXPECT_EQ(t, 500);
  for (double n : r.temporal_norms) EXPECT_GE(n, 0.0);
  EXPECT_EQ(r.to_json()["reference_not_asserted"]["spatial_mean"], 32.1);
}

TEST(Interference, NonAdditiveFusionIsConfigError) {
  for (const auto& cfg : {small(FusionMode::Concat), small(FusionMode::None, Variant::NoPE)}) {
    const auto p = build_variant<float>(cfg, 1);
    EXPECT_THROW(interference_probe(p, cfg, probe_windows(1)), ConfigError);
  }
}

TEST(ParamCount, LinearLayerAndModuleBreakdown) {
  ModelParams<float> p;
  p.head_w1 = Matrix<float>::Zero(7, 5);
  p.head_b1 = Matrix<float>::Zero(1, 5);
  EXPECT_EQ(count_params(p).total, 7u * 5 + 5);
  const ModelConfig cfg;
  const auto c = count_params(build_variant<float>(cfg, 1));
  EXPECT_EQ(c.total, 451370u);
  EXPECT_EQ(c.per_module.at("time2vec"), 2u * 128);
  std::size_t sum = 0;
  for (const auto& [name, n] : c.per_tensor) sum += n;
  EXPECT_EQ(sum, c.total);
}

TEST(Latency, ReportIsSane) {
  const auto cfg = small(FusionMode::NormAdd);
  const auto p = build_variant<float>(cfg, 1);
  const auto r = profile_latency(p, cfg, 30, 5);
  EXPECT_EQ(r.n_runs, 30);
  EXPECT_GT(r.mean_ms, 0.0);
  EXPECT_LE(r.p50_ms, 1.5 * r.mean_ms);
  EXPECT_LE(r.p50_ms, r.p95_ms);
  EXPECT_TRUE(r.within_budget());
  EXPECT_EQ(r.to_json()["reference_ms_not_asserted"], 21.5);
}

TEST(Latency, NearestRank) {
  EXPECT_EQ(nearest_rank({5, 1, 4, 2, 3}, 0.5), 3.0);
  EXPECT_EQ(nearest_rank({5, 1, 4, 2, 3}, 0.95), 5.0);
  EXPECT_EQ(nearest_rank({7}, 0.95), 7.0);
}
