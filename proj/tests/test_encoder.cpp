#include "myo/encoder.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace myo;

namespace {

Matrix<double> random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ModelConfig small_config(Variant v, FusionMode f) {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 48;
  c.d_t2v = 32;
  c.d_head = 16;
  c.variant = v;
  c.fusion = f;
  return c;
}

Matrix<double> permute_rows(const Matrix<double>& m, const std::vector<int>& perm) {
  Matrix<double> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

std::vector<int> random_perm(int n, std::uint64_t seed) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST(Attention, HandComputedExample) {
  Matrix<double> q(1, 1), k(2, 1), v(2, 1);
  q << 1;
  k << std::log(2.0), 0;
  v << 3, 0;
  const auto r = scaled_dot_product_attention(q, k, v);
  EXPECT_NEAR(r.weights(0, 0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.weights(0, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.output(0, 0), 2.0, 1e-12);
}

TEST(Attention, SingleTokenAndUniformCases) {
  const Matrix<double> v1 = random_matrix(1, 4, 1);
  const auto one = scaled_dot_product_attention(random_matrix(1, 4, 2), random_matrix(1, 4, 3), v1);
  EXPECT_DOUBLE_EQ(one.weights(0, 0), 1.0);
  EXPECT_TRUE(one.output.isApprox(v1, 1e-12));
  const Matrix<double> v = random_matrix(6, 3, 4);
  const auto uni = scaled_dot_product_attention(Matrix<double>::Zero(6, 3).eval(), random_matrix(6, 3, 5), v);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(uni.weights(i, j), 1.0 / 6, 1e-12);
    EXPECT_TRUE(uni.output.row(i).isApprox(v.colwise().mean(), 1e-12));
  }
}

TEST(Attention, RowsSumToOneAndLargeScoresStayFinite) {
  const auto r = scaled_dot_product_attention(random_matrix(50, 8, 6, 30.0), random_matrix(50, 8, 7, 30.0),
                                              random_matrix(50, 8, 8));
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(r.weights.row(i).sum(), 1.0, 1e-6);
  EXPECT_TRUE(r.output.allFinite());
  Matrix<double> bad = random_matrix(3, 2, 9);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(scaled_dot_product_attention(bad, random_matrix(3, 2, 10), random_matrix(3, 2, 11)), NumericsError);
}

TEST(Mhsa, SingleHeadCollapsesToAttentionThenProjection) {
  auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  cfg.n_heads = 1;
  const auto p = build_variant<double>(cfg, 12);
  const auto& L = p.layers[0];
  const Matrix<double> h = random_matrix(20, 32, 13);
  Matrix<double> q = h * L.wq, k = h * L.wk, v = h * L.wv;
  q.rowwise() += L.bq.row(0);
  k.rowwise() += L.bk.row(0);
  v.rowwise() += L.bv.row(0);
  Matrix<double> expect = scaled_dot_product_attention(q, k, v).output * L.wo;
  expect.rowwise() += L.bo.row(0);
  const Matrix<double> out = mhsa_forward(h, L, 1);
  EXPECT_EQ(out.rows(), 20);
  EXPECT_EQ(out.cols(), 32);
  EXPECT_TRUE(out.isApprox(expect, 1e-12));
}

TEST(Mhsa, AttentionParameterCountPerLayer) {
  const ModelConfig cfg;
  const auto shapes = expected_shapes(cfg);
  int n = 0;
  for (const auto& [name, s] : shapes)
    if (name.starts_with("layers.0.attn.")) n += s.first * s.second;
  EXPECT_EQ(n, 4 * 128 * 128 + 4 * 128);
}

TEST(Ffn, LeakyBranchAndZeroWeights) {
  auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  auto p = build_variant<double>(cfg, 14).layers[0];
  p.b1 = Matrix<double>::Constant(1, cfg.d_ff, -1e6);
  p.w2 = Matrix<double>::Identity(cfg.d_ff, cfg.d_model);
  const Matrix<double> x = random_matrix(3, 32, 15, 0.1);
  Matrix<double> u = x * p.w1;
  u.rowwise() += p.b1.row(0);
  const Matrix<double> y = ffn_forward(x, p, 0.25);
  EXPECT_TRUE(y.isApprox((0.25 * u).leftCols(32), 1e-12));
  p.w1.setZero();
  p.w2.setZero();
  p.b2 = random_matrix(1, 32, 16);
  const Matrix<double> z = ffn_forward(random_matrix(5, 32, 17), p, 0.01);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(z.row(i), p.b2.row(0));
}

TEST(EncoderLayer, DroppedBranchesAreIdentity) {
  const auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  const auto p = build_variant<double>(cfg, 18);
  const Matrix<double> h = random_matrix(30, 32, 19);
  Rng rng(1);
  const Matrix<double> out =
      encoder_layer_forward(h, p.layers[0], 4, 0.01, Mode::train, StochasticRates{0.1, 1.0}, &rng);
  EXPECT_EQ(out, h);
}

TEST(EncoderLayer, ZeroRatesMakeTrainEqualEval) {
  const auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  const auto p = build_variant<double>(cfg, 20);
  const Matrix<double> h = random_matrix(30, 32, 21);
  Rng rng(2);
  const auto train = encoder_layer_forward(h, p.layers[0], 4, 0.01, Mode::train, StochasticRates{}, &rng);
  const auto eval = encoder_layer_forward(h, p.layers[0], 4, 0.01, Mode::eval, StochasticRates{0.5, 0.99}, nullptr);
  EXPECT_EQ(train, eval);
}

TEST(Model, DefaultParameterCountIsPinned) {
  const ModelConfig cfg;
  const auto p = build_variant<float>(cfg, 1);
  EXPECT_EQ(p.count(), 451370u);
  EXPECT_GE(p.count(), 406000u);
  EXPECT_LE(p.count(), 496000u);
}

TEST(Model, VariantParameterBookkeeping) {
  const ModelConfig t2v;
  ModelConfig std_pe = t2v, no_pe = t2v;
  std_pe.variant = Variant::StandardPE;
  std_pe.fusion = FusionMode::SinusoidalAdd;
  no_pe.variant = Variant::NoPE;
  no_pe.fusion = FusionMode::None;
  const auto n_t2v = build_variant<float>(t2v, 1).count();
  const auto n_std = build_variant<float>(std_pe, 1).count();
  const auto n_no = build_variant<float>(no_pe, 1).count();
  EXPECT_EQ(n_std, n_no);
  EXPECT_EQ(n_t2v - n_no, static_cast<std::size_t>(2 * t2v.d_t2v + 4 * t2v.d_model));
  EXPECT_EQ(build_variant<float>(std_pe, 1).time2vec.omega.size(), 0);
}

TEST(Model, InconsistentVariantIsConfigError) {
  ModelConfig c;
  c.variant = Variant::NoPE;
  EXPECT_THROW(build_variant<float>(c, 1), ConfigError);
  ModelConfig d;
  d.fusion = FusionMode::Concat;
  d.d_t2v = 128;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Model, EvalIsDeterministicAndSoftmaxNormalized) {
  const auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  const auto p = build_variant<float>(cfg, 22);
  const Matrix<float> x = random_matrix(1000, 2, 23, 50.0).cast<float>();
  const Matrix<float> a = model_forward(x, p, cfg), b = model_forward(x, p, cfg);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.cols(), 10);
  const Eigen::ArrayXd e = (a.cast<double>().array() - a.maxCoeff()).exp().transpose();
  EXPECT_NEAR((e / e.sum()).sum(), 1.0, 1e-6);
  EXPECT_THROW(model_forward(Matrix<float>::Zero(999, 2).eval(), p, cfg), ConfigError);
}

TEST(Model, UniformLogitsGiveTenPercent) {
  auto cfg = small_config(Variant::NoPE, FusionMode::None);
  auto p = build_variant<double>(cfg, 24);
  p.head_w2.setZero();
  const Matrix<double> logits = model_forward(random_matrix(1000, 2, 25), p, cfg);
  const Eigen::ArrayXd e = logits.array().exp().transpose();
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(e(k) / e.sum(), 0.1, 1e-12);
}

TEST(Model, PermutationDichotomy) {
  const Matrix<double> zs = random_matrix(250, 32, 26);
  const auto perm = random_perm(250, 27);
  const Matrix<double> zp = permute_rows(zs, perm);

  const auto nope = small_config(Variant::NoPE, FusionMode::None);
  const auto pn = build_variant<double>(nope, 28);
  EXPECT_LT((forward_from_tokens(zs, pn, nope) - forward_from_tokens(zp, pn, nope)).cwiseAbs().maxCoeff(), 1e-5);

  for (const auto& cfg : {small_config(Variant::Time2Vec, FusionMode::NormAdd),
                          small_config(Variant::StandardPE, FusionMode::SinusoidalAdd)}) {
    const auto pt = build_variant<double>(cfg, 28);
    EXPECT_GT((forward_from_tokens(zs, pt, cfg) - forward_from_tokens(zp, pt, cfg)).cwiseAbs().maxCoeff(), 1e-3)
        << variant_name(cfg.variant);
  }
}

TEST(Model, DiagnosticsRecordPreFusionNorms) {
  const ModelConfig cfg;
  const auto p = build_variant<float>(cfg, 29);
  FusionDiagnostics diag;
  ForwardOptions<float> opt;
  opt.diagnostics = &diag;
  model_forward(random_matrix(1000, 2, 30, 50.0).cast<float>().eval(), p, cfg, opt);
  ASSERT_EQ(diag.spatial_norms.size(), 250u);
  ASSERT_EQ(diag.temporal_norms.size(), 250u);
  for (double n : diag.spatial_norms) EXPECT_NEAR(n, std::sqrt(128.0), 1e-3);
}

TEST(Model, TrainModeUsesRngAndEvalIgnoresIt) {
  const auto cfg = small_config(Variant::Time2Vec, FusionMode::NormAdd);
  const auto p = build_variant<float>(cfg, 31);
  const Matrix<float> x = random_matrix(1000, 2, 32, 50.0).cast<float>();
  Rng r1(5), r2(5), r3(6);
  ForwardOptions<float> o1{Mode::train, &r1}, o2{Mode::train, &r2}, o3{Mode::train, &r3};
  const auto a = model_forward(x, p, cfg, o1), b = model_forward(x, p, cfg, o2), c = model_forward(x, p, cfg, o3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  Rng r4(7);
  ForwardOptions<float> e{Mode::eval, &r4};
  EXPECT_EQ(model_forward(x, p, cfg, e), model_forward(x, p, cfg));
}

TEST(Model, CheckParamsRejectsWrongShapes) {
  const ModelConfig cfg;
  auto p = build_variant<float>(cfg, 1);
  EXPECT_NO_THROW(check_params(p, cfg));
  p.layers[1].w1.resize(128, 10);
  try {
    check_params(p, cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.1.ffn.w1"), std::string::npos);
  }
}
