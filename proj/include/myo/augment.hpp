#pragma once

#include "myo/windowing.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace myo {

struct AugmentConfig {
  double p_jitter = 0.5;
  double p_scale = 0.5;
  double p_warp = 0.5;
  double p_mask = 0.5;
  double p_mixup = 0.5;
  double jitter_sigma = 0.05;  // fraction of the per-window signal std
  std::array<double, 2> scale_range{0.8, 1.2};
  std::array<double, 2> warp_crop_range{0.7, 1.0};
  std::array<double, 2> mask_fraction_range{0.05, 0.15};
  double mixup_beta_alpha = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : {p_jitter, p_scale, p_warp, p_mask, p_mixup})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0,1]");
    if (jitter_sigma < 0) throw ConfigError("jitter_sigma must be >= 0");
    if (!(scale_range[0] > 0 && scale_range[0] <= scale_range[1]))
      throw ConfigError("scale_range must satisfy 0 < lo <= hi");
    if (!(warp_crop_range[0] > 0 && warp_crop_range[0] <= warp_crop_range[1] && warp_crop_range[1] <= 1))
      throw ConfigError("warp_crop_range must satisfy 0 < lo <= hi <= 1");
    if (!(mask_fraction_range[0] >= 0 && mask_fraction_range[0] <= mask_fraction_range[1] &&
          mask_fraction_range[1] < 1))
      throw ConfigError("mask_fraction_range must satisfy 0 <= lo <= hi < 1");
    if (!(mixup_beta_alpha > 0)) throw ConfigError("mixup_beta_alpha must be > 0");
  }
};

inline Window gaussian_jitter(const Window& w, double sigma, Rng& rng) {
  Window out = w;
  out.is_augmented = true;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (Eigen::Index t = 0; t < out.samples.rows(); ++t)
    for (Eigen::Index c = 0; c < out.samples.cols(); ++c)
      out.samples(t, c) = static_cast<float>(out.samples(t, c) + noise(rng));
  return out;
}

inline Window channel_scaling(const Window& w, const std::vector<double>& factors) {
  if (factors.size() != static_cast<std::size_t>(w.samples.cols()))
    throw std::invalid_argument("one scale factor per channel required");
  Window out = w;
  out.is_augmented = true;
  for (Eigen::Index c = 0; c < out.samples.cols(); ++c)
    out.samples.col(c) *= static_cast<float>(factors[c]);
  return out;
}

inline Window channel_scaling(const Window& w, std::array<double, 2> range, Rng& rng) {
  std::uniform_real_distribution<double> factor(range[0], range[1]);
  std::vector<double> f(static_cast<std::size_t>(w.samples.cols()));
  for (auto& x : f) x = factor(rng);
  return channel_scaling(w, f);
}

/// Resizes rows [offset, offset + length) back to the full window length by
/// per-channel linear interpolation.
inline Window time_warp_segment(const Window& w, int offset, int length) {
  const int T = static_cast<int>(w.samples.rows());
  if (length < 2) throw WarpError("crop length " + std::to_string(length) + " < 2");
  if (offset < 0 || offset + length > T) throw WarpError("crop segment outside the window");
  Window out = w;
  out.is_augmented = true;
  const double scale = T > 1 ? static_cast<double>(length - 1) / (T - 1) : 0.0;
  for (int t = 0; t < T; ++t) {
    const double pos = t * scale;
    const int i0 = std::min(static_cast<int>(pos), length - 2);
    const double frac = pos - i0;
    for (Eigen::Index c = 0; c < w.samples.cols(); ++c) {
      const double a = w.samples(offset + i0, c), b = w.samples(offset + i0 + 1, c);
      out.samples(t, c) = static_cast<float>(a + frac * (b - a));
    }
  }
  return out;
}

inline Window time_warp(const Window& w, double crop_fraction, Rng& rng) {
  if (!(crop_fraction > 0 && crop_fraction <= 1)) throw WarpError("crop_fraction must lie in (0,1]");
  const int T = static_cast<int>(w.samples.rows());
  const int length = static_cast<int>(std::lround(crop_fraction * T));
  if (length < 2) throw WarpError("crop length " + std::to_string(length) + " < 2");
  std::uniform_int_distribution<int> offset(0, T - length);
  return time_warp_segment(w, offset(rng), length);
}

inline Window time_mask_segment(const Window& w, int offset, int length) {
  Window out = w;
  out.is_augmented = true;
  if (length > 0) out.samples.middleRows(offset, length).setZero();
  return out;
}

inline Window time_mask(const Window& w, double fraction, Rng& rng) {
  if (!(fraction >= 0 && fraction < 1)) throw std::invalid_argument("mask fraction must lie in [0,1)");
  const int T = static_cast<int>(w.samples.rows());
  const int length = static_cast<int>(std::lround(fraction * T));
  std::uniform_int_distribution<int> offset(0, T - length);
  return time_mask_segment(w, offset(rng), length);
}

/// Convex combination of samples and labels: lambda·w1 + (1 − lambda)·w2.
inline Window mixup(const Window& w1, const Window& w2, double lambda) {
  if (w1.samples.rows() != w2.samples.rows() || w1.samples.cols() != w2.samples.cols())
    throw std::invalid_argument("mixup requires equal window shapes");
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("mixup lambda must lie in [0,1]");
  Window out = w1;
  out.is_augmented = true;
  const float l = static_cast<float>(lambda);
  out.samples = l * w1.samples + (1.0f - l) * w2.samples;
  out.label = Label::mix(w1.label, w2.label, lambda);
  return out;
}

inline double sample_beta(double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng), y = gamma(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

inline Rng window_rng(std::uint64_t seed, const Provenance& p) {
  return Rng(derive_seed(seed, {p.subject, p.gesture, p.trial_index, p.start_offset}));
}

/// Originals followed by one compound augmentation per original. Transforms
/// run in the order jitter → scale → warp → mask → mixup, each gated by its
/// own probability. Mixup partners are fixed up front by a seeded permutation.
inline std::vector<Window> augment_set(const std::vector<Window>& windows, const AugmentConfig& cfg) {
  cfg.validate();
  const std::size_t n = windows.size();
  if (cfg.p_mixup > 0 && n < 2) throw AugmentError("mixup needs at least two windows");

  std::vector<std::size_t> partner(n);
  std::iota(partner.begin(), partner.end(), 0);
  {
    Rng perm_rng(derive_seed(cfg.seed, "mixup-partners"));
    std::shuffle(partner.begin(), partner.end(), perm_rng);
    for (std::size_t i = 0; i < n; ++i)
      if (partner[i] == i) partner[i] = (i + 1) % n;
  }

  std::vector<Window> out;
  out.reserve(2 * n);
  out.insert(out.end(), windows.begin(), windows.end());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Window& src = windows[i];
    Rng rng = window_rng(cfg.seed, src.provenance);
    Window w = src;
    w.is_augmented = true;
    if (coin(rng) < cfg.p_jitter) {
      const double mean = w.samples.cast<double>().mean();
      const double var = (w.samples.cast<double>().array() - mean).square().mean();
      w = gaussian_jitter(w, cfg.jitter_sigma * std::sqrt(var), rng);
    }
    if (coin(rng) < cfg.p_scale) w = channel_scaling(w, cfg.scale_range, rng);
    if (coin(rng) < cfg.p_warp) {
      std::uniform_real_distribution<double> crop(cfg.warp_crop_range[0], cfg.warp_crop_range[1]);
      w = time_warp(w, crop(rng), rng);
    }
    if (coin(rng) < cfg.p_mask) {
      std::uniform_real_distribution<double> frac(cfg.mask_fraction_range[0], cfg.mask_fraction_range[1]);
      w = time_mask(w, frac(rng), rng);
    }
    if (coin(rng) < cfg.p_mixup) w = mixup(w, windows[partner[i]], sample_beta(cfg.mixup_beta_alpha, rng));
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace myo
