/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The sonoray Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SONORAY_IMAGING_HPP
#define SONORAY_IMAGING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sonoray/acoustics.hpp"
#include "sonoray/error.hpp"
#include "sonoray/geometry.hpp"
#include "sonoray/parallel.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

/// Row-major 2-D array of doubles.
class Image2D {
 public:
  Image2D() = default;
  Image2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Image2D(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ConfigError("image data does not match its dims");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/**
 * B-mode image in fan coordinates: row = ray (index 0 at the most negative
 * angle), column = depth index. Column k holds the echo gained between
 * truncation depths k and k+1 and is displayed at depth k * sample_step.
 */
struct BModeImage {
  Image2D raw;  ///< pre-normalization polar image
  double scale = 1.0;  ///< divisor applied by normalization
  std::size_t divergent_rays = 0;  ///< rays whose bounce series diverges (see bounce_series_converges)
  Image2D polar;
  std::optional<Image2D> cartesian;
  FanConfig fan;
  TransducerPose pose;
};

/**
 * Pixel (ray, k) = d0[k] - d0[k-1] with d0[-1] = 0. All profiles must have
 * the same length N; the result is n_rays x N.
 */
inline Image2D form_image(std::span<const EchoProfile> profiles) {
  if (profiles.empty()) return {};
  const std::size_t n = profiles.front().size();
  Image2D img(profiles.size(), n);
  for (std::size_t r = 0; r < profiles.size(); ++r) {
    if (profiles[r].size() != n) throw ConfigError("echo profiles have different lengths");
    double prev = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      img(r, k) = profiles[r][k] - prev;
      prev = profiles[r][k];
    }
  }
  return img;
}

namespace detail {

/// Sum of squared deviations indistinguishable from rounding noise around the mean.
inline bool is_flat(double sum_sq_dev, double mean, double n) {
  const double noise = 1e-12 * std::abs(mean);
  return !(sum_sq_dev > n * noise * noise);
}

}  // namespace detail

enum class NormalizeMode { Max, Percentile99 };

/**
 * Scales pixels linearly into [0, 1]: by the maximum, or by the 99th
 * percentile with values above it saturating at 1. Returns the divisor used
 * (0 for an all-zero image, which is left unchanged).
 */
inline double normalize(Image2D& img, NormalizeMode mode = NormalizeMode::Max) {
  double peak = 0.0;
  for (double v : img.data()) peak = std::max(peak, v);
  if (!(peak > 0.0)) {
    std::fill(img.data().begin(), img.data().end(), 0.0);
    return 0.0;
  }
  double scale = peak;
  if (mode == NormalizeMode::Percentile99) {
    auto sorted = img.data();
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.99 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double p99 = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
    if (p99 > 0.0) scale = p99;
  }
  for (auto& v : img.data()) v = std::clamp(v / scale, 0.0, 1.0);
  return scale;
}

/// Extent of the Cartesian raster: x in [-half_width, half_width], y (depth) in [0, depth].
inline double fan_half_width(const FanConfig& fan) {
  return fan.depth_mm * std::sin(0.5 * fan.fan_angle);
}

/**
 * Resamples a polar image onto an H x W raster with the apex at the top
 * center. Pixel centers sit on a grid spanning the wedge bounding box
 * corner-to-corner; each pixel inside the wedge bilinearly interpolates the
 * polar image at its (angle, depth), others are 0.
 */
inline Image2D scan_convert(const Image2D& polar, const FanConfig& fan, std::size_t height,
                            std::size_t width) {
  if (height < 2 || width < 2) throw ConfigError("scan conversion needs at least a 2x2 raster");
  if (polar.empty()) throw ConfigError("scan conversion needs a polar image");
  Image2D out(height, width, 0.0);
  const double half = 0.5 * fan.fan_angle;
  const double xmax = fan_half_width(fan);
  const double step = fan.depth_mm / static_cast<double>(polar.cols());
  const double max_ray = static_cast<double>(polar.rows() - 1);
  const double max_k = static_cast<double>(polar.cols() - 1);
  for (std::size_t i = 0; i < height; ++i) {
    const double y = fan.depth_mm * static_cast<double>(i) / static_cast<double>(height - 1);
    for (std::size_t j = 0; j < width; ++j) {
      const double x = -xmax + 2.0 * xmax * static_cast<double>(j) / static_cast<double>(width - 1);
      const double r = std::hypot(x, y);
      const double theta = std::atan2(x, y);
      if (r > fan.depth_mm * (1.0 + 1e-12) || std::abs(theta) > half * (1.0 + 1e-12)) continue;
      const double fr =
          polar.rows() == 1 ? 0.0 : std::clamp((theta + half) / fan.fan_angle * max_ray, 0.0, max_ray);
      const double fk = std::clamp(r / step, 0.0, max_k);
      const auto r0 = static_cast<std::size_t>(fr);
      const auto k0 = static_cast<std::size_t>(fk);
      const auto r1 = std::min(r0 + 1, polar.rows() - 1);
      const auto k1 = std::min(k0 + 1, polar.cols() - 1);
      const double a = fr - static_cast<double>(r0), b = fk - static_cast<double>(k0);
      out(i, j) = (1 - a) * (1 - b) * polar(r0, k0) + (1 - a) * b * polar(r0, k1) +
                  a * (1 - b) * polar(r1, k0) + a * b * polar(r1, k1);
    }
  }
  return out;
}

/**
 * Optional post-processing. Speckle multiplies each pixel by
 * 1 + s(k) (u_radial + u_granular), s(k) = strength * ((k+1)/N)^power.
 * Blur convolves each depth column across rays with a Gaussian of
 * sigma(k) = blur_sigma0 + blur_slope * k pixels.
 */
struct ArtifactConfig {
  bool speckle_enabled = false;
  double speckle_strength = 0.3;
  double speckle_power = 1.0;
  double granularity_mm = 0.5;
  bool blur_enabled = false;
  double blur_sigma0 = 0.0;
  double blur_slope = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(speckle_strength >= 0.0) || !(speckle_power > 0.0) || !(granularity_mm >= 0.0) ||
        !(blur_sigma0 >= 0.0) || !(blur_slope >= 0.0))
      throw ConfigError("artifact parameters must be non-negative (speckle_power positive)");
  }

  static ArtifactConfig from_json(const nlohmann::json& j) {
    ArtifactConfig c;
    try {
      c.speckle_enabled = j.value("speckle_enabled", c.speckle_enabled);
      c.speckle_strength = j.value("speckle_strength", c.speckle_strength);
      c.speckle_power = j.value("speckle_power", c.speckle_power);
      c.granularity_mm = j.value("granularity_mm", c.granularity_mm);
      c.blur_enabled = j.value("blur_enabled", c.blur_enabled);
      c.blur_sigma0 = j.value("blur_sigma0", c.blur_sigma0);
      c.blur_slope = j.value("blur_slope", c.blur_slope);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed artifact config: ") + e.what());
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"speckle_enabled", speckle_enabled}, {"speckle_strength", speckle_strength},
            {"speckle_power", speckle_power},     {"granularity_mm", granularity_mm},
            {"blur_enabled", blur_enabled},       {"blur_sigma0", blur_sigma0},
            {"blur_slope", blur_slope},           {"seed", seed}};
  }
};

namespace detail {

/// Normalized, sampled Gaussian of radius ceil(4 sigma); {1} for sigma == 0.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const auto radius = static_cast<std::size_t>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    w[i] = std::exp(-0.5 * x * x / (sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Half-sample symmetric reflection of index i into [0, n).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

/**
 * Unit-variance band-limited noise: white Gaussian noise on a padded grid,
 * smoothed separably, rescaled by the kernel energy so every output sample
 * has variance exactly 1.
 */
inline Image2D smooth_noise(std::size_t rows, std::size_t cols, double sigma_rows, double sigma_cols,
                            std::mt19937_64& rng) {
  const auto kr = gaussian_kernel(sigma_rows);
  const auto kc = gaussian_kernel(sigma_cols);
  const std::size_t pr = kr.size() / 2, pc = kc.size() / 2;
  const std::size_t rows_p = rows + 2 * pr, cols_p = cols + 2 * pc;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(rows_p * cols_p);
  for (auto& v : white) v = normal(rng);

  std::vector<double> tmp(rows_p * cols);
  for (std::size_t r = 0; r < rows_p; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < kc.size(); ++t) s += kc[t] * white[r * cols_p + c + t];
      tmp[r * cols + c] = s;
    }
  double energy_r = 0.0, energy_c = 0.0;
  for (double v : kr) energy_r += v * v;
  for (double v : kc) energy_c += v * v;
  const double gain = 1.0 / std::sqrt(energy_r * energy_c);
  Image2D out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < kr.size(); ++t) s += kr[t] * tmp[(r + t) * cols + c];
      out(r, c) = s * gain;
    }
  return out;
}

}  // namespace detail

/**
 * Depth-dependent multiplicative speckle. The radial field is independent
 * per ray and correlated along depth; the granular field is correlated in
 * both directions. Both use a correlation length of granularity_mm expressed
 * in depth samples. Output is clamped at 0.
 */
inline Image2D apply_speckle(const Image2D& img, const ArtifactConfig& cfg, const FanConfig& fan) {
  cfg.validate();
  if (cfg.speckle_strength == 0.0 || img.empty()) return img;
  std::mt19937_64 rng(cfg.seed);
  const double sigma_px = cfg.granularity_mm / fan.sample_step();
  const auto radial = detail::smooth_noise(img.rows(), img.cols(), 0.0, sigma_px, rng);
  const auto granular = detail::smooth_noise(img.rows(), img.cols(), sigma_px, sigma_px, rng);
  Image2D out = img;
  const double n = static_cast<double>(img.cols());
  for (std::size_t k = 0; k < img.cols(); ++k) {
    const double s = cfg.speckle_strength * std::pow(static_cast<double>(k + 1) / n, cfg.speckle_power);
    for (std::size_t r = 0; r < img.rows(); ++r)
      out(r, k) = std::max(0.0, img(r, k) * (1.0 + s * radial(r, k) + s * granular(r, k)));
  }
  return out;
}

/**
 * Lateral Gaussian blur whose width grows linearly with depth. Each depth
 * column is convolved across rays with a normalized kernel and half-sample
 * symmetric boundaries, which preserves the column sum.
 */
inline Image2D apply_depth_blur(const Image2D& img, const ArtifactConfig& cfg) {
  cfg.validate();
  if ((cfg.blur_sigma0 == 0.0 && cfg.blur_slope == 0.0) || img.empty()) return img;
  Image2D out(img.rows(), img.cols());
  std::vector<double> column(img.rows());
  for (std::size_t k = 0; k < img.cols(); ++k) {
    const auto w = detail::gaussian_kernel(cfg.blur_sigma0 + cfg.blur_slope * static_cast<double>(k));
    const auto radius = static_cast<std::ptrdiff_t>(w.size() / 2);
    for (std::size_t r = 0; r < img.rows(); ++r) {
      double s = 0.0;
      for (std::size_t t = 0; t < w.size(); ++t) {
        const auto src = static_cast<std::ptrdiff_t>(r) + static_cast<std::ptrdiff_t>(t) - radius;
        s += w[t] * img(detail::reflect_index(src, img.rows()), k);
      }
      out(r, k) = s;
    }
  }
  return out;
}

struct RenderOptions {
  SamplingOptions sampling;
  double attenuation = 1.0;  ///< per-sample one-way amplitude factor, 1 = off
  /// When false, the sampled ray values (samples 1..N) are used as pixels directly.
  bool propagate = true;
  bool normalize = true;
  NormalizeMode normalize_mode = NormalizeMode::Max;
  ArtifactConfig artifacts;
  std::optional<std::pair<std::size_t, std::size_t>> cartesian;  ///< (H, W)
  unsigned threads = 1;
};

/**
 * Unnormalized echo image (n_rays x (n_samples - 1)): the differentiable part
 * of the pipeline. Rays are processed in parallel; each ray writes only its
 * own row, so the result does not depend on the thread count.
 */
inline Image2D render_echo_image(const VolumeGrid& volume, const TransducerPose& pose,
                                 const FanConfig& fan, const SamplingOptions& sampling = {},
                                 double attenuation = 1.0, unsigned threads = 1) {
  const auto rays = generate_rays(pose, fan);
  Image2D img(fan.n_rays, fan.n_samples - 1);
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    const auto profile = extract_profile(volume, rays[r], fan, sampling);
    const auto d0 = depth_profile(profile, attenuation);
    double prev = 0.0;
    for (std::size_t k = 0; k < d0.size(); ++k) {
      img(r, k) = d0[k] - prev;
      prev = d0[k];
    }
  });
  return img;
}

/// Number of rays whose full-depth bounce series diverges; their echoes are
/// the linear-system values and may be negative.
inline std::size_t count_divergent_rays(const VolumeGrid& volume, const TransducerPose& pose,
                                        const FanConfig& fan, const SamplingOptions& sampling = {},
                                        double attenuation = 1.0, unsigned threads = 1) {
  const auto rays = generate_rays(pose, fan);
  std::vector<char> divergent(rays.size(), 0);
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    const auto profile = extract_profile(volume, rays[r], fan, sampling);
    divergent[r] = bounce_series_converges(coefficients(profile, attenuation)) ? 0 : 1;
  });
  return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
}

/// Ray samples 1..N used directly as pixels (no wave propagation).
inline Image2D render_sampled_image(const VolumeGrid& volume, const TransducerPose& pose,
                                    const FanConfig& fan, const SamplingOptions& sampling = {},
                                    unsigned threads = 1) {
  const auto rays = generate_rays(pose, fan);
  Image2D img(fan.n_rays, fan.n_samples - 1);
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    const auto values = sample_ray(volume, rays[r], fan, sampling);
    for (std::size_t k = 0; k + 1 < values.size(); ++k) img(r, k) = values[k + 1];
  });
  return img;
}

/**
 * Full pipeline: profiles, depth-resolved echoes, first differences,
 * normalization, optional speckle and blur, optional scan conversion.
 */
inline BModeImage render(const VolumeGrid& volume, const TransducerPose& pose, const FanConfig& fan,
                         const RenderOptions& opt = {}) {
  BModeImage out;
  out.fan = fan;
  out.pose = pose;
  out.polar = opt.propagate
                  ? render_echo_image(volume, pose, fan, opt.sampling, opt.attenuation, opt.threads)
                  : render_sampled_image(volume, pose, fan, opt.sampling, opt.threads);
  if (opt.propagate)
    out.divergent_rays = count_divergent_rays(volume, pose, fan, opt.sampling, opt.attenuation, opt.threads);
  out.raw = out.polar;
  if (opt.normalize) out.scale = normalize(out.polar, opt.normalize_mode);
  if (opt.artifacts.speckle_enabled) out.polar = apply_speckle(out.polar, opt.artifacts, fan);
  if (opt.artifacts.blur_enabled) out.polar = apply_depth_blur(out.polar, opt.artifacts);
  if (opt.cartesian) out.cartesian = scan_convert(out.polar, fan, opt.cartesian->first, opt.cartesian->second);
  return out;
}

}  // namespace sonoray

#endif /* SONORAY_IMAGING_HPP */
