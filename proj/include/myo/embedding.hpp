#pragma once

#include "myo/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

namespace myo {

inline constexpr double kLayerNormEps = 1e-5;

enum class FusionMode { Concat, Add, NormAdd, SinusoidalAdd, None };

inline std::string_view fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::Concat: return "concat";
    case FusionMode::Add: return "add";
    case FusionMode::NormAdd: return "norm_add";
    case FusionMode::SinusoidalAdd: return "sinusoidal_add";
    case FusionMode::None: return "none";
  }
  return "?";
}

inline FusionMode parse_fusion(std::string_view s) {
  for (auto m : {FusionMode::Concat, FusionMode::Add, FusionMode::NormAdd, FusionMode::SinusoidalAdd,
                 FusionMode::None})
    if (fusion_name(m) == s) return m;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Elementwise helpers

template <typename S>
void leaky_relu_inplace(Matrix<S>& m, S alpha) {
  m = (m.array() > S(0)).select(m, alpha * m);
}

/// dU = dA ⊙ leaky'(U)
template <typename S>
Matrix<S> leaky_relu_backward(const Matrix<S>& dA, const Matrix<S>& U, S alpha) {
  return (U.array() > S(0)).select(dA, alpha * dA);
}

template <typename S>
void add_bias(Matrix<S>& y, const Matrix<S>& b) {
  y.rowwise() += b.row(0);
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension.

template <typename S>
struct LayerNormParams {
  Matrix<S> gamma;  // 1×d
  Matrix<S> beta;   // 1×d

  static LayerNormParams identity(int d) {
    return {Matrix<S>::Ones(1, d), Matrix<S>::Zero(1, d)};
  }
};

template <typename S>
struct LayerNormCache {
  Matrix<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
Matrix<S> layer_norm_rows(const Matrix<S>& x, const LayerNormParams<S>& p, double eps,
                          LayerNormCache<S>* cache = nullptr) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix<S> xhat(n, d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    rstd(i) = S(1) / std::sqrt(var + S(eps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Matrix<S> y = (xhat.array().rowwise() * p.gamma.row(0).array()).rowwise() + p.beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

/// Single-vector form: (v − mean) / sqrt(popvar + eps) · gamma + beta.
template <typename S>
Matrix<S> layer_norm(const Matrix<S>& v, const Matrix<S>& gamma, const Matrix<S>& beta, double eps) {
  return layer_norm_rows<S>(v, LayerNormParams<S>{gamma, beta}, eps);
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const LayerNormParams<S>& p,
                              const LayerNormCache<S>& cache, LayerNormParams<S>& grad) {
  grad.gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.beta += dy.colwise().sum();
  const Matrix<S> dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  const Eigen::Index d = dy.cols();
  Matrix<S> dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).sum() / S(d);
    const S m2 = dxhat.row(i).dot(cache.xhat.row(i)) / S(d);
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Strided 1-D convolution with zero "same" padding, via im2col.
// Weights are (k·C_in)×C_out with row index tap·C_in + channel.

inline constexpr int conv_output_length(int in_len, int stride) { return (in_len + stride - 1) / stride; }

inline constexpr int same_pad_left(int in_len, int kernel, int stride) {
  const int out = conv_output_length(in_len, stride);
  const int total = std::max((out - 1) * stride + kernel - in_len, 0);
  return total / 2;
}

template <typename S>
Matrix<S> im2col(const Matrix<S>& x, int kernel, int stride) {
  const int in_len = static_cast<int>(x.rows()), cin = static_cast<int>(x.cols());
  const int out_len = conv_output_length(in_len, stride);
  const int pad = same_pad_left(in_len, kernel, stride);
  Matrix<S> cols = Matrix<S>::Zero(out_len, static_cast<Eigen::Index>(kernel) * cin);
  for (int o = 0; o < out_len; ++o) {
    const int base = o * stride - pad;
    const int tap_lo = std::max(0, -base), tap_hi = std::min(kernel, in_len - base);
    for (int tap = tap_lo; tap < tap_hi; ++tap)
      cols.row(o).segment(static_cast<Eigen::Index>(tap) * cin, cin) = x.row(base + tap);
  }
  return cols;
}

template <typename S>
Matrix<S> col2im(const Matrix<S>& dcols, int in_len, int cin, int kernel, int stride) {
  const int out_len = static_cast<int>(dcols.rows());
  const int pad = same_pad_left(in_len, kernel, stride);
  Matrix<S> dx = Matrix<S>::Zero(in_len, cin);
  for (int o = 0; o < out_len; ++o) {
    const int base = o * stride - pad;
    const int tap_lo = std::max(0, -base), tap_hi = std::min(kernel, in_len - base);
    for (int tap = tap_lo; tap < tap_hi; ++tap)
      dx.row(base + tap) += dcols.row(o).segment(static_cast<Eigen::Index>(tap) * cin, cin);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// CNN stem: conv(k1, stride 2) → LeakyReLU → conv(k2, stride 2) → LeakyReLU
// → position-wise projection to d_spatial.

struct StemShape {
  int channels = 2;
  int k1 = 61;
  int f1 = 32;
  int k2 = 7;
  int f2 = 64;
  int d_spatial = 128;
  int stride = 2;
};

template <typename S>
struct StemParams {
  Matrix<S> conv1_w, conv1_b;
  Matrix<S> conv2_w, conv2_b;
  Matrix<S> proj_w, proj_b;
};

template <typename S>
struct StemCache {
  int in_len = 0;
  Matrix<S> cols1, u1, cols2, u2, a2;
};

template <typename S>
Matrix<S> stem_forward(const Matrix<S>& x, const StemParams<S>& p, const StemShape& shape, S alpha,
                       StemCache<S>* cache = nullptr) {
  if (!x.allFinite()) throw NumericsError("non-finite input window");
  if (x.cols() != shape.channels)
    throw ConfigError("window has " + std::to_string(x.cols()) + " channels, stem expects " +
                      std::to_string(shape.channels));
  Matrix<S> cols1 = im2col(x, shape.k1, shape.stride);
  Matrix<S> u1 = cols1 * p.conv1_w;
  add_bias(u1, p.conv1_b);
  Matrix<S> a1 = u1;
  leaky_relu_inplace(a1, alpha);
  Matrix<S> cols2 = im2col(a1, shape.k2, shape.stride);
  Matrix<S> u2 = cols2 * p.conv2_w;
  add_bias(u2, p.conv2_b);
  Matrix<S> a2 = u2;
  leaky_relu_inplace(a2, alpha);
  Matrix<S> z = a2 * p.proj_w;
  add_bias(z, p.proj_b);
  if (cache) {
    cache->in_len = static_cast<int>(x.rows());
    cache->cols1 = std::move(cols1);
    cache->u1 = std::move(u1);
    cache->cols2 = std::move(cols2);
    cache->u2 = std::move(u2);
    cache->a2 = std::move(a2);
  }
  return z;
}

/// Accumulates parameter gradients; the input gradient is not needed.
template <typename S>
void stem_backward(const Matrix<S>& dz, const StemParams<S>& p, const StemShape& shape, S alpha,
                   const StemCache<S>& c, StemParams<S>& grad) {
  grad.proj_w.noalias() += c.a2.transpose() * dz;
  grad.proj_b += dz.colwise().sum();
  const Matrix<S> da2 = dz * p.proj_w.transpose();
  const Matrix<S> du2 = leaky_relu_backward(da2, c.u2, alpha);
  grad.conv2_w.noalias() += c.cols2.transpose() * du2;
  grad.conv2_b += du2.colwise().sum();
  const Matrix<S> dcols2 = du2 * p.conv2_w.transpose();
  const Matrix<S> da1 = col2im(dcols2, static_cast<int>(c.u1.rows()), shape.f1, shape.k2, shape.stride);
  const Matrix<S> du1 = leaky_relu_backward(da1, c.u1, alpha);
  grad.conv1_w.noalias() += c.cols1.transpose() * du1;
  grad.conv1_b += du1.colwise().sum();
}

// ---------------------------------------------------------------------------
// Temporal embeddings

template <typename S>
struct Time2VecParams {
  Matrix<S> omega;  // 1×d, index 0 is the linear term
  Matrix<S> phi;    // 1×d

  int dim() const { return static_cast<int>(omega.cols()); }
};

/// Row tau: [ω₀τ + ϕ₀, sin(ω₁τ + ϕ₁), ..., sin(ω_{d−1}τ + ϕ_{d−1})], τ = 0..L−1.
template <typename S>
Matrix<S> time2vec_forward(int seq_len, const Time2VecParams<S>& p) {
  const int d = p.dim();
  if (d < 1) throw ConfigError("time2vec dimension must be >= 1");
  Matrix<S> z(seq_len, d);
  for (int tau = 0; tau < seq_len; ++tau) {
    z(tau, 0) = p.omega(0, 0) * S(tau) + p.phi(0, 0);
    for (int i = 1; i < d; ++i) z(tau, i) = std::sin(p.omega(0, i) * S(tau) + p.phi(0, i));
  }
  return z;
}

template <typename S>
void time2vec_backward(const Matrix<S>& dz, const Time2VecParams<S>& p, Time2VecParams<S>& grad) {
  const int d = p.dim();
  for (Eigen::Index tau = 0; tau < dz.rows(); ++tau) {
    const S t = S(tau);
    grad.omega(0, 0) += dz(tau, 0) * t;
    grad.phi(0, 0) += dz(tau, 0);
    for (int i = 1; i < d; ++i) {
      const S g = dz(tau, i) * std::cos(p.omega(0, i) * t + p.phi(0, i));
      grad.omega(0, i) += g * t;
      grad.phi(0, i) += g;
    }
  }
}

/// Fixed encodings: PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
template <typename S>
Matrix<S> sinusoidal_pe(int seq_len, int d_model) {
  if (d_model % 2 != 0) throw ConfigError("sinusoidal encodings need an even d_model, got " + std::to_string(d_model));
  Matrix<S> pe(seq_len, d_model);
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe(pos, i) = static_cast<S>(std::sin(angle));
      pe(pos, i + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Fusion of the spatial and temporal streams.

template <typename S>
struct FusionParams {
  LayerNormParams<S> spatial;   // NormAdd only
  LayerNormParams<S> temporal;  // NormAdd only
};

struct FusionDims {
  int d_spatial = 0;
  int d_temporal = 0;  // 0 when there is no temporal stream
  int d_model = 0;
};

inline void check_fusion_dims(FusionMode mode, const FusionDims& d) {
  auto fail = [&](const std::string& rule) {
    throw ConfigError(std::string(fusion_name(mode)) + " fusion requires " + rule + " (d_spatial=" +
                      std::to_string(d.d_spatial) + ", d_t2v=" + std::to_string(d.d_temporal) +
                      ", d_model=" + std::to_string(d.d_model) + ")");
  };
  switch (mode) {
    case FusionMode::Concat:
      if (d.d_spatial + d.d_temporal != d.d_model || d.d_temporal < 1 || d.d_spatial < 1)
        fail("d_spatial + d_t2v = d_model");
      break;
    case FusionMode::Add:
    case FusionMode::NormAdd:
      if (d.d_spatial != d.d_model || d.d_temporal != d.d_model) fail("d_spatial = d_t2v = d_model");
      break;
    case FusionMode::SinusoidalAdd:
    case FusionMode::None:
      if (d.d_spatial != d.d_model) fail("d_spatial = d_model");
      break;
  }
}

template <typename S>
struct FusionCache {
  LayerNormCache<S> spatial, temporal;
};

/// Per-position L2 norms of both streams immediately before they are combined.
struct FusionDiagnostics {
  std::vector<double> spatial_norms;
  std::vector<double> temporal_norms;
};

template <typename S>
void record_norms(const Matrix<S>& m, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = static_cast<double>(m.row(i).norm());
}

template <typename S>
Matrix<S> fuse(const Matrix<S>& zs, const Matrix<S>* zt, FusionMode mode, const FusionParams<S>& p,
               FusionCache<S>* cache = nullptr, FusionDiagnostics* diag = nullptr) {
  const bool needs_time = mode != FusionMode::None;
  if (needs_time && (!zt || zt->rows() != zs.rows()))
    throw ConfigError(std::string(fusion_name(mode)) + " fusion needs a temporal stream of matching length");
  switch (mode) {
    case FusionMode::Concat: {
      if (diag) {
        record_norms(zs, diag->spatial_norms);
        record_norms(*zt, diag->temporal_norms);
      }
      Matrix<S> z(zs.rows(), zs.cols() + zt->cols());
      z << zs, *zt;
      return z;
    }
    case FusionMode::Add:
    case FusionMode::SinusoidalAdd:
      if (zs.cols() != zt->cols()) throw ConfigError("additive fusion needs equal stream widths");
      if (diag) {
        record_norms(zs, diag->spatial_norms);
        record_norms(*zt, diag->temporal_norms);
      }
      return zs + *zt;
    case FusionMode::NormAdd: {
      if (zs.cols() != zt->cols()) throw ConfigError("additive fusion needs equal stream widths");
      Matrix<S> ns = layer_norm_rows(zs, p.spatial, kLayerNormEps, cache ? &cache->spatial : nullptr);
      Matrix<S> nt = layer_norm_rows(*zt, p.temporal, kLayerNormEps, cache ? &cache->temporal : nullptr);
      if (diag) {
        record_norms(ns, diag->spatial_norms);
        record_norms(nt, diag->temporal_norms);
      }
      return ns + nt;
    }
    case FusionMode::None:
      if (diag) record_norms(zs, diag->spatial_norms);
      return zs;
  }
  return zs;
}

template <typename S>
struct FusionGrads {
  Matrix<S> dzs;
  Matrix<S> dzt;  // empty when there is no temporal stream
};

template <typename S>
FusionGrads<S> fuse_backward(const Matrix<S>& dz, FusionMode mode, int d_spatial, const FusionParams<S>& p,
                             const FusionCache<S>& cache, FusionParams<S>& grad) {
  switch (mode) {
    case FusionMode::Concat:
      return {dz.leftCols(d_spatial), dz.rightCols(dz.cols() - d_spatial)};
    case FusionMode::Add:
    case FusionMode::SinusoidalAdd:
      return {dz, dz};
    case FusionMode::NormAdd:
      return {layer_norm_backward(dz, p.spatial, cache.spatial, grad.spatial),
              layer_norm_backward(dz, p.temporal, cache.temporal, grad.temporal)};
    case FusionMode::None:
      return {dz, Matrix<S>()};
  }
  return {dz, Matrix<S>()};
}

}  // namespace myo
