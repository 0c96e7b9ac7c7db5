#pragma once

#include "myo/embedding.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace myo {

enum class Variant { Time2Vec, StandardPE, NoPE };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Time2Vec: return "time2vec";
    case Variant::StandardPE: return "standard_pe";
    case Variant::NoPE: return "no_pe";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::Time2Vec, Variant::StandardPE, Variant::NoPE})
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

enum class Mode { train, eval };

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 144;
  int d_t2v = 128;
  int d_head = 64;  // hidden width of the MLP head
  FusionMode fusion = FusionMode::NormAdd;
  Variant variant = Variant::Time2Vec;
  double leaky_alpha = 0.01;
  double dropout = 0.1;
  double droppath = 0.1;
  int n_classes = kNumGestures;
  int window = 1000;
  int channels = 2;
  int f1 = 32;
  int f2 = 64;
  int k1 = 61;
  int k2 = 7;

  int d_spatial() const { return fusion == FusionMode::Concat ? d_model - d_t2v : d_model; }
  int d_temporal() const {
    switch (variant) {
      case Variant::Time2Vec: return d_t2v;
      case Variant::StandardPE: return d_model;
      case Variant::NoPE: return 0;
    }
    return 0;
  }
  int seq_len() const { return conv_output_length(conv_output_length(window, 2), 2); }
  int d_k() const { return d_model / n_heads; }

  StemShape stem_shape() const { return {channels, k1, f1, k2, f2, d_spatial(), 2}; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(d_model >= 1 && n_layers >= 0 && n_heads >= 1 && d_ff >= 1 && d_head >= 1,
         "model dimensions must be positive");
    need(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    need(dropout >= 0 && dropout < 1, "dropout must lie in [0,1)");
    need(droppath >= 0 && droppath < 1, "droppath must lie in [0,1)");
    need(leaky_alpha > 0 && leaky_alpha < 1, "leaky_alpha must lie in (0,1)");
    need(n_classes >= 2, "n_classes must be >= 2");
    need(window >= 4 && window % 4 == 0, "window length must be divisible by 4");
    need(channels >= 1 && f1 >= 1 && f2 >= 1 && k1 >= 1 && k2 >= 1, "stem shape must be positive");
    switch (variant) {
      case Variant::Time2Vec:
        need(fusion == FusionMode::Concat || fusion == FusionMode::Add || fusion == FusionMode::NormAdd,
             "time2vec variant requires concat, add or norm_add fusion");
        need(d_t2v >= 1, "d_t2v must be >= 1");
        break;
      case Variant::StandardPE:
        need(fusion == FusionMode::SinusoidalAdd, "standard_pe variant requires sinusoidal_add fusion");
        need(d_model % 2 == 0, "sinusoidal encodings need an even d_model");
        break;
      case Variant::NoPE:
        need(fusion == FusionMode::None, "no_pe variant requires fusion 'none'");
        break;
    }
    need(d_spatial() >= 1, "d_spatial must be >= 1");
    check_fusion_dims(fusion, {d_spatial(), d_temporal(), d_model});
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},   {"n_layers", n_layers},
            {"n_heads", n_heads},   {"d_ff", d_ff},
            {"d_t2v", d_t2v},       {"d_head", d_head},
            {"fusion", std::string(fusion_name(fusion))},
            {"variant", std::string(variant_name(variant))},
            {"leaky_alpha", leaky_alpha}, {"dropout", dropout},
            {"droppath", droppath}, {"n_classes", n_classes},
            {"window", window},     {"channels", channels},
            {"f1", f1},             {"f2", f2},
            {"k1", k1},             {"k2", k2}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      c.d_model = j.at("d_model");
      c.n_layers = j.at("n_layers");
      c.n_heads = j.at("n_heads");
      c.d_ff = j.at("d_ff");
      c.d_t2v = j.at("d_t2v");
      c.d_head = j.at("d_head");
      c.fusion = parse_fusion(j.at("fusion").get<std::string>());
      c.variant = parse_variant(j.at("variant").get<std::string>());
      c.leaky_alpha = j.at("leaky_alpha");
      c.dropout = j.at("dropout");
      c.droppath = j.at("droppath");
      c.n_classes = j.at("n_classes");
      c.window = j.at("window");
      c.channels = j.at("channels");
      c.f1 = j.at("f1");
      c.f2 = j.at("f2");
      c.k1 = j.at("k1");
      c.k2 = j.at("k2");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
struct EncoderLayerParams {
  LayerNormParams<S> ln1, ln2;
  Matrix<S> wq, bq, wk, bk, wv, bv, wo, bo;  // attention; heads are column blocks of d_k
  Matrix<S> w1, b1, w2, b2;                  // feed-forward
};

template <typename S>
struct ModelParams {
  StemParams<S> stem;
  Time2VecParams<S> time2vec;  // empty unless variant is Time2Vec
  FusionParams<S> fusion;      // empty unless fusion is NormAdd
  std::vector<EncoderLayerParams<S>> layers;
  LayerNormParams<S> final_norm;
  Matrix<S> head_w1, head_b1, head_w2, head_b2;

  /// Calls f(name, tensor) for every non-empty learnable array, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each([](const std::string&, Matrix<S>& t) { t.setZero(); });
    return z;
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    out.layers.resize(layers.size());
    std::vector<Matrix<T>*> dst;
    out.for_each_slot([&](const std::string&, Matrix<T>& t) { dst.push_back(&t); });
    std::size_t i = 0;
    for_each_slot([&](const std::string&, const Matrix<S>& t) { *dst[i++] = t.template cast<T>(); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix<S>& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  /// Like for_each but includes empty slots (used for structural copies).
  template <typename F>
  void for_each_slot(F&& f) {
    visit_all(*this, f);
  }
  template <typename F>
  void for_each_slot(F&& f) const {
    visit_all(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    visit_all(self, [&](const std::string& name, auto& t) {
      if (t.size() > 0) f(name, t);
    });
  }

  template <typename Self, typename F>
  static void visit_all(Self& self, F&& f) {
    f("stem.conv1_w", self.stem.conv1_w);
    f("stem.conv1_b", self.stem.conv1_b);
    f("stem.conv2_w", self.stem.conv2_w);
    f("stem.conv2_b", self.stem.conv2_b);
    f("stem.proj_w", self.stem.proj_w);
    f("stem.proj_b", self.stem.proj_b);
    f("time2vec.omega", self.time2vec.omega);
    f("time2vec.phi", self.time2vec.phi);
    f("fusion.spatial.gamma", self.fusion.spatial.gamma);
    f("fusion.spatial.beta", self.fusion.spatial.beta);
    f("fusion.temporal.gamma", self.fusion.temporal.gamma);
    f("fusion.temporal.beta", self.fusion.temporal.beta);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1.gamma", L.ln1.gamma);
      f(p + "ln1.beta", L.ln1.beta);
      f(p + "attn.wq", L.wq);
      f(p + "attn.bq", L.bq);
      f(p + "attn.wk", L.wk);
      f(p + "attn.bk", L.bk);
      f(p + "attn.wv", L.wv);
      f(p + "attn.bv", L.bv);
      f(p + "attn.wo", L.wo);
      f(p + "attn.bo", L.bo);
      f(p + "ln2.gamma", L.ln2.gamma);
      f(p + "ln2.beta", L.ln2.beta);
      f(p + "ffn.w1", L.w1);
      f(p + "ffn.b1", L.b1);
      f(p + "ffn.w2", L.w2);
      f(p + "ffn.b2", L.b2);
    }
    f("final_norm.gamma", self.final_norm.gamma);
    f("final_norm.beta", self.final_norm.beta);
    f("head.w1", self.head_w1);
    f("head.b1", self.head_b1);
    f("head.w2", self.head_w2);
    f("head.b2", self.head_b2);
  }
};

/// Expected shape of every tensor for a config; absent tensors are omitted.
inline std::map<std::string, std::pair<int, int>> expected_shapes(const ModelConfig& c) {
  std::map<std::string, std::pair<int, int>> s;
  const int ds = c.d_spatial();
  s["stem.conv1_w"] = {c.k1 * c.channels, c.f1};
  s["stem.conv1_b"] = {1, c.f1};
  s["stem.conv2_w"] = {c.k2 * c.f1, c.f2};
  s["stem.conv2_b"] = {1, c.f2};
  s["stem.proj_w"] = {c.f2, ds};
  s["stem.proj_b"] = {1, ds};
  if (c.variant == Variant::Time2Vec) {
    s["time2vec.omega"] = {1, c.d_t2v};
    s["time2vec.phi"] = {1, c.d_t2v};
  }
  if (c.fusion == FusionMode::NormAdd) {
    for (const char* b : {"spatial", "temporal"}) {
      s[std::string("fusion.") + b + ".gamma"] = {1, c.d_model};
      s[std::string("fusion.") + b + ".beta"] = {1, c.d_model};
    }
  }
  const int d = c.d_model;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* n : {"ln1", "ln2"}) {
      s[p + n + ".gamma"] = {1, d};
      s[p + n + ".beta"] = {1, d};
    }
    for (const char* n : {"q", "k", "v", "o"}) {
      s[p + "attn.w" + n] = {d, d};
      s[p + "attn.b" + n] = {1, d};
    }
    s[p + "ffn.w1"] = {d, c.d_ff};
    s[p + "ffn.b1"] = {1, c.d_ff};
    s[p + "ffn.w2"] = {c.d_ff, d};
    s[p + "ffn.b2"] = {1, d};
  }
  s["final_norm.gamma"] = {1, d};
  s["final_norm.beta"] = {1, d};
  s["head.w1"] = {d, c.d_head};
  s["head.b1"] = {1, c.d_head};
  s["head.w2"] = {c.d_head, c.n_classes};
  s["head.b2"] = {1, c.n_classes};
  return s;
}

/// Scaled-uniform fan-in init (variance 1/fan_in) for weights, zero biases,
/// identity layer-norm affines; each tensor draws from its own named stream.
template <typename S>
ModelParams<S> build_variant(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> p;
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  const auto shapes = expected_shapes(cfg);
  const int L = cfg.seq_len();
  p.for_each_slot([&](const std::string& name, Matrix<S>& t) {
    const auto it = shapes.find(name);
    if (it == shapes.end()) return;
    const auto [rows, cols] = it->second;
    Rng rng(derive_seed(seed, name));
    const bool is_gamma = name.ends_with(".gamma");
    if (name == "time2vec.omega") {
      t.resize(1, cols);
      t(0, 0) = S(1.0 / L);
      const double lo = std::log(1.0 / L), hi = std::log(std::numbers::pi);
      for (int i = 1; i < cols; ++i) {
        const double frac = cols > 2 ? static_cast<double>(i - 1) / (cols - 2) : 0.0;
        t(0, i) = static_cast<S>(std::exp(lo + frac * (hi - lo)));
      }
    } else if (name == "time2vec.phi") {
      std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
      t.resize(1, cols);
      for (int i = 0; i < cols; ++i) t(0, i) = static_cast<S>(u(rng));
    } else if (is_gamma) {
      t = Matrix<S>::Ones(rows, cols);
    } else if (rows == 1) {  // biases and betas
      t = Matrix<S>::Zero(rows, cols);
    } else {
      const double bound = std::sqrt(3.0 / rows);
      std::uniform_real_distribution<double> u(-bound, bound);
      t.resize(rows, cols);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(u(rng));
    }
  });
  return p;
}

/// Throws ConfigError unless every tensor matches the config's shapes.
template <typename S>
void check_params(const ModelParams<S>& p, const ModelConfig& cfg) {
  const auto shapes = expected_shapes(cfg);
  if (p.layers.size() != static_cast<std::size_t>(cfg.n_layers))
    throw ConfigError("params hold " + std::to_string(p.layers.size()) + " layers, config wants " +
                      std::to_string(cfg.n_layers));
  std::size_t seen = 0;
  p.for_each([&](const std::string& name, const Matrix<S>& t) {
    const auto it = shapes.find(name);
    if (it == shapes.end()) throw ConfigError("unexpected tensor " + name + " for this config");
    if (t.rows() != it->second.first || t.cols() != it->second.second)
      throw ConfigError("tensor " + name + " has shape " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()) + ", expected " + std::to_string(it->second.first) + "x" +
                        std::to_string(it->second.second));
    ++seen;
  });
  if (seen != shapes.size()) throw ConfigError("params are missing tensors required by the config");
}

// ---------------------------------------------------------------------------
// Attention

/// Row-wise softmax with max subtraction.
template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& scores) {
  Matrix<S> a(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const S m = scores.row(i).maxCoeff();
    a.row(i) = (scores.row(i).array() - m).exp();
    const S sum = a.row(i).sum();
    if (!std::isfinite(m) || !std::isfinite(sum)) throw NumericsError("non-finite attention scores");
    a.row(i) /= sum;
  }
  return a;
}

template <typename S>
struct AttentionResult {
  Matrix<S> output;   // T×d_k
  Matrix<S> weights;  // T×T, rows sum to 1
};

template <typename Q, typename K, typename V>
auto scaled_dot_product_attention(const Q& q, const K& k, const V& v) {
  using S = typename Q::Scalar;
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() < 1)
    throw std::invalid_argument("attention operand shapes do not match");
  const Matrix<S> scores = (q * k.transpose()) / std::sqrt(S(q.cols()));
  AttentionResult<S> r;
  r.weights = softmax_rows(scores);
  r.output = r.weights * v;
  return r;
}

template <typename S>
struct AttentionCache {
  Matrix<S> q, k, v, concat;
  std::vector<Matrix<S>> weights;  // one T×T matrix per head
};

/// Concat(head_1..head_h)·W^O + b^O over an already-normalized input.
template <typename S>
Matrix<S> mhsa_forward(const Matrix<S>& h, const EncoderLayerParams<S>& p, int n_heads,
                       AttentionCache<S>* cache = nullptr) {
  const Eigen::Index d = h.cols();
  if (d % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  const Eigen::Index dk = d / n_heads;
  Matrix<S> q = h * p.wq, k = h * p.wk, v = h * p.wv;
  add_bias(q, p.bq);
  add_bias(k, p.bk);
  add_bias(v, p.bv);
  Matrix<S> concat(h.rows(), d);
  std::vector<Matrix<S>> weights;
  if (cache) weights.reserve(n_heads);
  for (int j = 0; j < n_heads; ++j) {
    auto r = scaled_dot_product_attention(q.middleCols(j * dk, dk), k.middleCols(j * dk, dk),
                                          v.middleCols(j * dk, dk));
    concat.middleCols(j * dk, dk) = r.output;
    if (cache) weights.push_back(std::move(r.weights));
  }
  Matrix<S> out = concat * p.wo;
  add_bias(out, p.bo);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->weights = std::move(weights);
  }
  return out;
}

/// Returns the gradient w.r.t. the (normalized) attention input.
template <typename S>
Matrix<S> mhsa_backward(const Matrix<S>& dout, const Matrix<S>& h, const EncoderLayerParams<S>& p, int n_heads,
                        const AttentionCache<S>& c, EncoderLayerParams<S>& g) {
  const Eigen::Index d = h.cols(), dk = d / n_heads;
  const S inv_sqrt = S(1) / std::sqrt(S(dk));
  g.wo.noalias() += c.concat.transpose() * dout;
  g.bo += dout.colwise().sum();
  const Matrix<S> dconcat = dout * p.wo.transpose();
  Matrix<S> dq(h.rows(), d), dk_(h.rows(), d), dv(h.rows(), d);
  for (int j = 0; j < n_heads; ++j) {
    const auto cols = Eigen::seqN(j * dk, dk);
    const Matrix<S>& a = c.weights[j];
    const Matrix<S> dO = dconcat(Eigen::all, cols);
    const Matrix<S> da = dO * c.v(Eigen::all, cols).transpose();
    dv(Eigen::all, cols).noalias() = a.transpose() * dO;
    Matrix<S> ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
    ds *= inv_sqrt;
    dq(Eigen::all, cols).noalias() = ds * c.k(Eigen::all, cols);
    dk_(Eigen::all, cols).noalias() = ds.transpose() * c.q(Eigen::all, cols);
  }
  g.wq.noalias() += h.transpose() * dq;
  g.wk.noalias() += h.transpose() * dk_;
  g.wv.noalias() += h.transpose() * dv;
  g.bq += dq.colwise().sum();
  g.bk += dk_.colwise().sum();
  g.bv += dv.colwise().sum();
  Matrix<S> dh = dq * p.wq.transpose();
  dh.noalias() += dk_ * p.wk.transpose();
  dh.noalias() += dv * p.wv.transpose();
  return dh;
}

// ---------------------------------------------------------------------------
// Feed-forward: LeakyReLU(x·W₁ + b₁)·W₂ + b₂, applied to every row.

template <typename S>
struct FfnCache {
  Matrix<S> u, hidden;
};

template <typename S>
Matrix<S> ffn_forward(const Matrix<S>& x, const EncoderLayerParams<S>& p, S alpha, FfnCache<S>* cache = nullptr) {
  Matrix<S> u = x * p.w1;
  add_bias(u, p.b1);
  Matrix<S> hidden = (u.array() > S(0)).select(u, alpha * u);
  Matrix<S> out = hidden * p.w2;
  add_bias(out, p.b2);
  if (cache) {
    cache->u = std::move(u);
    cache->hidden = std::move(hidden);
  }
  return out;
}

template <typename S>
Matrix<S> ffn_backward(const Matrix<S>& dout, const Matrix<S>& x, const EncoderLayerParams<S>& p, S alpha,
                       const FfnCache<S>& c, EncoderLayerParams<S>& g) {
  g.w2.noalias() += c.hidden.transpose() * dout;
  g.b2 += dout.colwise().sum();
  const Matrix<S> du = leaky_relu_backward<S>(dout * p.w2.transpose(), c.u, alpha);
  g.w1.noalias() += x.transpose() * du;
  g.b1 += du.colwise().sum();
  return du * p.w1.transpose();
}

// ---------------------------------------------------------------------------
// Pre-LN encoder layer with dropout on each sub-layer output and DropPath on
// each residual branch:
//   H' = H + b₁·Drop(MHSA(LN(H))),  out = H' + b₂·Drop(FFN(LN(H')))
// In train mode a branch survives with probability 1 − p_drop and is scaled
// by 1/(1 − p_drop); eval mode always runs both branches unscaled.

struct StochasticRates {
  double dropout = 0.0;
  double droppath = 0.0;
};

template <typename S>
struct BranchState {
  bool kept = true;
  S scale = S(1);
  Matrix<S> dropout_mask;  // empty when dropout is off; entries 0 or 1/(1 − p)
};

template <typename S>
struct EncoderLayerCache {
  LayerNormCache<S> ln1, ln2;
  Matrix<S> n1, n2;
  AttentionCache<S> attn;
  FfnCache<S> ffn;
  BranchState<S> branch1, branch2;
};

/// Draws the DropPath decision and, if kept, a dropout mask for a T×d branch.
template <typename S>
BranchState<S> draw_branch(Eigen::Index rows, Eigen::Index cols, Mode mode, const StochasticRates& rates, Rng* rng) {
  BranchState<S> b;
  if (mode == Mode::eval) return b;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (rates.droppath > 0) {
    if (!rng) throw std::invalid_argument("train mode with DropPath needs an RNG");
    b.kept = u(*rng) >= rates.droppath;
    b.scale = b.kept ? S(1.0 / (1.0 - rates.droppath)) : S(0);
  }
  if (b.kept && rates.dropout > 0) {
    if (!rng) throw std::invalid_argument("train mode with dropout needs an RNG");
    const S keep_scale = S(1.0 / (1.0 - rates.dropout));
    b.dropout_mask.resize(rows, cols);
    for (Eigen::Index i = 0; i < b.dropout_mask.size(); ++i)
      b.dropout_mask.data()[i] = u(*rng) >= rates.dropout ? keep_scale : S(0);
  }
  return b;
}

template <typename S>
void apply_branch(Matrix<S>& residual, Matrix<S>&& branch, const BranchState<S>& b) {
  if (!b.kept) return;
  if (b.dropout_mask.size() > 0) branch.array() *= b.dropout_mask.array();
  if (b.scale != S(1)) branch *= b.scale;
  residual += branch;
}

template <typename S>
Matrix<S> encoder_layer_forward(const Matrix<S>& h, const EncoderLayerParams<S>& p, int n_heads, S alpha,
                                Mode mode, const StochasticRates& rates, Rng* rng,
                                EncoderLayerCache<S>* cache = nullptr) {
  EncoderLayerCache<S> local;
  EncoderLayerCache<S>& c = cache ? *cache : local;
  Matrix<S> out = h;
  c.branch1 = draw_branch<S>(h.rows(), h.cols(), mode, rates, rng);
  if (c.branch1.kept) {
    c.n1 = layer_norm_rows(h, p.ln1, kLayerNormEps, &c.ln1);
    apply_branch(out, mhsa_forward(c.n1, p, n_heads, cache ? &c.attn : nullptr), c.branch1);
  }
  c.branch2 = draw_branch<S>(h.rows(), h.cols(), mode, rates, rng);
  if (c.branch2.kept) {
    c.n2 = layer_norm_rows(out, p.ln2, kLayerNormEps, &c.ln2);
    apply_branch(out, ffn_forward(c.n2, p, alpha, cache ? &c.ffn : nullptr), c.branch2);
  }
  return out;
}

template <typename S>
Matrix<S> encoder_layer_backward(const Matrix<S>& dout, const EncoderLayerParams<S>& p, int n_heads, S alpha,
                                 const EncoderLayerCache<S>& c, EncoderLayerParams<S>& g) {
  auto branch_grad = [](const Matrix<S>& d, const BranchState<S>& b) {
    Matrix<S> r = d * b.scale;
    if (b.dropout_mask.size() > 0) r.array() *= b.dropout_mask.array();
    return r;
  };
  Matrix<S> dh1 = dout;
  if (c.branch2.kept) {
    const Matrix<S> dn2 = ffn_backward(branch_grad(dout, c.branch2), c.n2, p, alpha, c.ffn, g);
    dh1 += layer_norm_backward(dn2, p.ln2, c.ln2, g.ln2);
  }
  Matrix<S> dh = dh1;
  if (c.branch1.kept) {
    const Matrix<S> dn1 = mhsa_backward(branch_grad(dh1, c.branch1), c.n1, p, n_heads, c.attn, g);
    dh += layer_norm_backward(dn1, p.ln1, c.ln1, g.ln1);
  }
  return dh;
}

// ---------------------------------------------------------------------------
// Whole model: stem → temporal embedding → fuse → encoder stack → final LN
// → mean over positions → MLP head.

template <typename S>
struct ModelCache {
  StemCache<S> stem;
  FusionCache<S> fusion;
  Matrix<S> zt;
  std::vector<EncoderLayerCache<S>> layers;
  LayerNormCache<S> final_norm;
  Matrix<S> pooled, head_u, head_a;
  int seq_len = 0;
};

template <typename S>
struct ForwardOptions {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;
  ModelCache<S>* cache = nullptr;
  FusionDiagnostics* diagnostics = nullptr;
};

template <typename S>
Matrix<S> temporal_stream(const ModelConfig& cfg, const ModelParams<S>& p, int seq_len) {
  switch (cfg.variant) {
    case Variant::Time2Vec: return time2vec_forward(seq_len, p.time2vec);
    case Variant::StandardPE: return sinusoidal_pe<S>(seq_len, cfg.d_model);
    case Variant::NoPE: return Matrix<S>();
  }
  return Matrix<S>();
}

/// Everything downstream of the stem; `zs` is the L×d_spatial token sequence.
template <typename S>
Matrix<S> forward_from_tokens(const Matrix<S>& zs, const ModelParams<S>& p, const ModelConfig& cfg,
                              const ForwardOptions<S>& opt = {}) {
  ModelCache<S>* c = opt.cache;
  const int L = static_cast<int>(zs.rows());
  const S alpha = S(cfg.leaky_alpha);
  Matrix<S> zt = temporal_stream(cfg, p, L);
  Matrix<S> h = fuse(zs, cfg.variant == Variant::NoPE ? nullptr : &zt, cfg.fusion, p.fusion,
                     c ? &c->fusion : nullptr, opt.diagnostics);
  if (c) {
    c->seq_len = L;
    c->zt = std::move(zt);
    c->layers.resize(p.layers.size());
  }
  const StochasticRates rates{cfg.dropout, cfg.droppath};
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    h = encoder_layer_forward(h, p.layers[l], cfg.n_heads, alpha, opt.mode, rates, opt.rng,
                              c ? &c->layers[l] : nullptr);
  const Matrix<S> hn = layer_norm_rows(h, p.final_norm, kLayerNormEps, c ? &c->final_norm : nullptr);
  Matrix<S> pooled = hn.colwise().mean();
  Matrix<S> u = pooled * p.head_w1;
  add_bias(u, p.head_b1);
  Matrix<S> a = (u.array() > S(0)).select(u, alpha * u);
  Matrix<S> logits = a * p.head_w2;
  add_bias(logits, p.head_b2);
  if (!logits.allFinite()) throw NumericsError("non-finite logits");
  if (c) {
    c->pooled = std::move(pooled);
    c->head_u = std::move(u);
    c->head_a = std::move(a);
  }
  return logits;
}

/// 1×n_classes logits for one T×C window.
template <typename S>
Matrix<S> model_forward(const Matrix<S>& window, const ModelParams<S>& p, const ModelConfig& cfg,
                        const ForwardOptions<S>& opt = {}) {
  if (window.rows() != cfg.window || window.cols() != cfg.channels)
    throw ConfigError("window shape " + std::to_string(window.rows()) + "x" + std::to_string(window.cols()) +
                      " does not match config " + std::to_string(cfg.window) + "x" + std::to_string(cfg.channels));
  const Matrix<S> zs = stem_forward(window, p.stem, cfg.stem_shape(), S(cfg.leaky_alpha),
                                    opt.cache ? &opt.cache->stem : nullptr);
  return forward_from_tokens(zs, p, cfg, opt);
}

/// Accumulates d(loss)/d(params) into `g` given d(loss)/d(logits).
template <typename S>
void model_backward(const Matrix<S>& dlogits, const ModelParams<S>& p, const ModelConfig& cfg,
                    const ModelCache<S>& c, ModelParams<S>& g) {
  const S alpha = S(cfg.leaky_alpha);
  g.head_w2.noalias() += c.head_a.transpose() * dlogits;
  g.head_b2 += dlogits;
  const Matrix<S> du = leaky_relu_backward<S>(dlogits * p.head_w2.transpose(), c.head_u, alpha);
  g.head_w1.noalias() += c.pooled.transpose() * du;
  g.head_b1 += du;
  const Matrix<S> dpooled = du * p.head_w1.transpose();
  const Matrix<S> dhn = dpooled.replicate(c.seq_len, 1) / S(c.seq_len);
  Matrix<S> dh = layer_norm_backward(dhn, p.final_norm, c.final_norm, g.final_norm);
  for (std::size_t l = p.layers.size(); l-- > 0;)
    dh = encoder_layer_backward(dh, p.layers[l], cfg.n_heads, alpha, c.layers[l], g.layers[l]);
  const FusionGrads<S> fg = fuse_backward(dh, cfg.fusion, cfg.d_spatial(), p.fusion, c.fusion, g.fusion);
  if (cfg.variant == Variant::Time2Vec) time2vec_backward(fg.dzt, p.time2vec, g.time2vec);
  stem_backward(fg.dzs, p.stem, cfg.stem_shape(), alpha, c.stem, g.stem);
}

}  // namespace myo
