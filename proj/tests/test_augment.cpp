#include "myo/augment.hpp"

#include <gtest/gtest.h>

using namespace myo;

namespace {

Window random_window(int gesture, std::uint64_t seed, int offset = 0) {
  Window w;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 50.0);
  w.samples.resize(1000, 2);
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) w.samples.data()[i] = static_cast<float>(n(rng));
  w.label = Label::hard(gesture);
  w.provenance = {1, gesture, 1, offset};
  return w;
}

bool same(const Window& a, const Window& b) {
  return a.samples == b.samples && a.label.probs == b.label.probs && a.provenance == b.provenance;
}

}  // namespace

TEST(Jitter, ZeroSigmaIsIdentity) {
  Rng rng(1);
  const Window w = random_window(3, 1);
  const Window out = gaussian_jitter(w, 0.0, rng);
  EXPECT_EQ(out.samples, w.samples);
  EXPECT_TRUE(out.is_augmented);
}

TEST(Jitter, SeededAndStatisticallyCorrect) {
  Window w;
  w.samples = Matrix<float>::Zero(50000, 2);
  Rng a(9), b(9);
  const Window x = gaussian_jitter(w, 0.1, a), y = gaussian_jitter(w, 0.1, b);
  EXPECT_EQ(x.samples, y.samples);
  const double mean = x.samples.cast<double>().mean();
  const double sd = std::sqrt((x.samples.cast<double>().array() - mean).square().mean());
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(Scaling, UnitRangeIsIdentityAndForcedFactorsAreExact) {
  Rng rng(2);
  const Window w = random_window(0, 2);
  EXPECT_EQ(channel_scaling(w, {1.0, 1.0}, rng).samples, w.samples);
  const Window s = channel_scaling(w, std::vector<double>{2.0, 0.5});
  EXPECT_EQ(s.samples.col(0), (w.samples.col(0) * 2.0f).eval());
  EXPECT_EQ(s.samples.col(1), (w.samples.col(1) * 0.5f).eval());
}

TEST(Scaling, FactorMeanIsCentered) {
  Window w;
  w.samples = Matrix<float>::Ones(1, 2);
  Rng rng(3);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += channel_scaling(w, {0.8, 1.2}, rng).samples(0, 0);
  EXPECT_NEAR(sum / n, 1.0, 0.01);
}

TEST(Warp, FullCropIsIdentity) {
  Rng rng(4);
  const Window w = random_window(1, 4);
  EXPECT_TRUE(time_warp(w, 1.0, rng).samples.isApprox(w.samples, 1e-6f));
}

TEST(Warp, RampCropResizesLinearly) {
  Window w;
  w.samples.resize(1000, 2);
  for (int t = 0; t < 1000; ++t) w.samples.row(t) << static_cast<float>(t), static_cast<float>(t);
  const Window out = time_warp_segment(w, 0, 500);
  ASSERT_EQ(out.samples.rows(), 1000);
  ASSERT_EQ(out.samples.cols(), 2);
  for (int t = 0; t < 1000; ++t) EXPECT_NEAR(out.samples(t, 0), 499.0 * t / 999.0, 1e-3);
}

TEST(Warp, TooShortCropThrows) {
  Rng rng(5);
  EXPECT_THROW(time_warp(random_window(1, 5), 0.001, rng), WarpError);
  EXPECT_THROW(time_warp_segment(random_window(1, 5), 0, 1), WarpError);
}

TEST(Mask, ZeroesExactlyTheSegment) {
  Rng rng(6);
  const Window w = random_window(2, 6);
  EXPECT_EQ(time_mask(w, 0.0, rng).samples, w.samples);
  const Window out = time_mask(w, 0.1, rng);
  int zero_rows = 0;
  for (int t = 0; t < 1000; ++t) {
    if (out.samples(t, 0) == 0.0f && out.samples(t, 1) == 0.0f) ++zero_rows;
    else EXPECT_EQ(out.samples.row(t), w.samples.row(t));
  }
  EXPECT_EQ(zero_rows, 100);
}

TEST(Mask, ExpectedZeroCountMatchesFraction) {
  Rng rng(7);
  std::uniform_real_distribution<double> frac(0.05, 0.15);
  const Window w = random_window(2, 7);
  double total = 0, expected = 0;
  for (int i = 0; i < 400; ++i) {
    const double f = frac(rng);
    expected += std::lround(f * 1000);
    total += (time_mask(w, f, rng).samples.col(0).array() == 0.0f).count();
  }
  EXPECT_NEAR(total / expected, 1.0, 1e-9);
}

TEST(Mixup, EndpointsAndSoftLabels) {
  const Window a = random_window(2, 8), b = random_window(7, 9);
  const Window one = mixup(a, b, 1.0), zero = mixup(a, b, 0.0), half = mixup(a, b, 0.5);
  EXPECT_EQ(one.samples, a.samples);
  EXPECT_EQ(one.label.probs, a.label.probs);
  EXPECT_EQ(zero.samples, b.samples);
  EXPECT_EQ(zero.label.probs, b.label.probs);
  for (int k = 0; k < kNumGestures; ++k) EXPECT_EQ(half.label.probs[k], (k == 2 || k == 7) ? 0.5 : 0.0);
}

TEST(Mixup, IsConvexElementwise) {
  const Window a = random_window(2, 10), b = random_window(7, 11);
  for (double lambda : {0.0, 0.13, 0.5, 0.91, 1.0}) {
    const Window m = mixup(a, b, lambda);
    const auto lo = a.samples.array().min(b.samples.array());
    const auto hi = a.samples.array().max(b.samples.array());
    EXPECT_TRUE(((m.samples.array() >= lo - 1e-4f) && (m.samples.array() <= hi + 1e-4f)).all());
    EXPECT_NEAR(m.label.sum(), 1.0, 1e-6);
  }
}

TEST(Mixup, ShapeMismatchIsContractViolation) {
  Window a = random_window(1, 1), b = random_window(1, 2);
  b.samples.conservativeResize(999, 2);
  EXPECT_THROW(mixup(a, b, 0.5), std::invalid_argument);
}

TEST(AugmentSet, DoublesAndKeepsOriginalsFirst) {
  std::vector<Window> in;
  for (int i = 0; i < 12; ++i) in.push_back(random_window(i % kNumGestures, 100 + i, 500 * i));
  AugmentConfig cfg;
  cfg.seed = 5;
  const auto out = augment_set(in, cfg);
  ASSERT_EQ(out.size(), 24u);
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_TRUE(same(out[i], in[i]));
    EXPECT_FALSE(out[i].is_augmented);
    EXPECT_TRUE(out[12 + i].is_augmented);
    EXPECT_EQ(out[12 + i].samples.rows(), 1000);
    EXPECT_NEAR(out[12 + i].label.sum(), 1.0, 1e-6);
  }
  const auto again = augment_set(in, cfg);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_TRUE(same(out[i], again[i]));
}

TEST(AugmentSet, ZeroProbabilitiesCopyOriginals) {
  std::vector<Window> in = {random_window(0, 1), random_window(1, 2, 500)};
  AugmentConfig cfg;
  cfg.p_jitter = cfg.p_scale = cfg.p_warp = cfg.p_mask = cfg.p_mixup = 0.0;
  const auto out = augment_set(in, cfg);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[2].samples, in[0].samples);
  EXPECT_TRUE(out[2].is_augmented);
}

TEST(AugmentSet, PerWindowStreamsIgnoreOrderWithoutMixup) {
  std::vector<Window> in;
  for (int i = 0; i < 6; ++i) in.push_back(random_window(i, 200 + i, 500 * i));
  AugmentConfig cfg;
  cfg.p_mixup = 0.0;
  cfg.seed = 3;
  const auto fwd = augment_set(in, cfg);
  std::vector<Window> rev(in.rbegin(), in.rend());
  const auto bwd = augment_set(rev, cfg);
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_TRUE(same(fwd[6 + i], bwd[6 + (5 - i)]));
}

TEST(AugmentSet, SingletonWithMixupThrows) {
  EXPECT_THROW(augment_set({random_window(0, 1)}, AugmentConfig{}), AugmentError);
}

TEST(AugmentConfig, RejectsBadRanges) {
  AugmentConfig c;
  c.scale_range = {1.2, 0.8};
  EXPECT_THROW(c.validate(), ConfigError);
  AugmentConfig d;
  d.p_mask = 1.5;
  EXPECT_THROW(d.validate(), ConfigError);
}
