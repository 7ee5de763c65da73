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

#ifndef SONORAY_METRICS_HPP
#define SONORAY_METRICS_HPP

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sonoray/error.hpp"
#include "sonoray/geometry.hpp"
#include "sonoray/imaging.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

namespace detail {

inline void require_same_dims(const Image2D& a, const Image2D& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("image dims differ");
  if (a.empty()) throw ConfigError("images are empty");
}

}  // namespace detail

inline double mse(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double mae(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

/// Zero-mean normalized cross-correlation.
inline double ncc(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b);
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data()[i];
    mb += b.data()[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data()[i] - ma, db = b.data()[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (detail::is_flat(saa, ma, n) || detail::is_flat(sbb, mb, n))
    throw NumericError("NCC is undefined for a constant image");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  nlohmann::json to_json() const {
    return {{"window", window}, {"sigma", sigma}, {"k1", k1}, {"k2", k2}, {"dynamic_range", dynamic_range}};
  }
};

/// Normalized 1-D Gaussian of odd length `window`; the 2-D window is its outer product.
inline std::vector<double> ssim_kernel(const SsimParams& p) {
  if (p.window % 2 == 0 || p.window == 0) throw ConfigError("SSIM window must be odd");
  const auto half = static_cast<double>(p.window / 2);
  std::vector<double> k(p.window);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.window; ++i) {
    const double x = static_cast<double>(i) - half;
    k[i] = std::exp(-x * x / (2.0 * p.sigma * p.sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/**
 * Mean SSIM over every window position fully inside the image (no padding).
 * Local moments are Gaussian-weighted population moments.
 */
inline double ssim(const Image2D& a, const Image2D& b, const SsimParams& p = {}) {
  detail::require_same_dims(a, b);
  if (!(p.dynamic_range > 0.0)) throw ConfigError("SSIM dynamic range must be positive");
  if (a.rows() < p.window || a.cols() < p.window) throw ConfigError("image is smaller than the SSIM window");
  const auto k = ssim_kernel(p);
  const std::size_t w = p.window;
  const std::size_t orows = a.rows() - w + 1, ocols = a.cols() - w + 1;

  // Separable valid-mode filter: columns first, then rows.
  auto filter = [&](auto&& value) {
    Image2D tmp(a.rows(), ocols);
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < ocols; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < w; ++t) s += k[t] * value(r, c + t);
        tmp(r, c) = s;
      }
    Image2D out(orows, ocols);
    for (std::size_t r = 0; r < orows; ++r)
      for (std::size_t c = 0; c < ocols; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < w; ++t) s += k[t] * tmp(r + t, c);
        out(r, c) = s;
      }
    return out;
  };
  const auto mu_a = filter([&](std::size_t r, std::size_t c) { return a(r, c); });
  const auto mu_b = filter([&](std::size_t r, std::size_t c) { return b(r, c); });
  const auto e_aa = filter([&](std::size_t r, std::size_t c) { return a(r, c) * a(r, c); });
  const auto e_bb = filter([&](std::size_t r, std::size_t c) { return b(r, c) * b(r, c); });
  const auto e_ab = filter([&](std::size_t r, std::size_t c) { return a(r, c) * b(r, c); });

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data()[i], mb = mu_b.data()[i];
    const double va = e_aa.data()[i] - ma * ma;
    const double vb = e_bb.data()[i] - mb * mb;
    const double cov = e_ab.data()[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return std::clamp(total / static_cast<double>(mu_a.size()), -1.0, 1.0);
}

/// Circular shift: out(r, c) = img(r - dy, c - dx).
inline Image2D circular_shift(const Image2D& img, long dy, long dx) {
  const auto rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
  Image2D out(img.rows(), img.cols());
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      const long sr = ((r - dy) % rows + rows) % rows;
      const long sc = ((c - dx) % cols + cols) % cols;
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
          img(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
    }
  return out;
}

struct PhaseAlignment {
  long dy = 0;
  long dx = 0;
  Image2D b_shifted;  ///< b moved back onto a
};

namespace detail {

/// FFTW planning is not thread-safe; executing distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline void fft2d(std::vector<std::complex<double>>& data, std::size_t rows, std::size_t cols, int sign) {
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), ptr, ptr, sign, FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw NumericError("FFT planning failed");
  fftw_execute(plan);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

/**
 * Integer translation (dy, dx) such that b is approximately a circularly
 * shifted by (dy, dx), from the peak of the inverse normalized cross-power
 * spectrum. Ties resolve to the first peak in row-major order.
 */
inline PhaseAlignment phase_align(const Image2D& a, const Image2D& b) {
  detail::require_same_dims(a, b);
  const std::size_t rows = a.rows(), cols = a.cols(), n = a.size();
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = a.data()[i];
    fb[i] = b.data()[i];
  }
  detail::fft2d(fa, rows, cols, FFTW_FORWARD);
  detail::fft2d(fb, rows, cols, FFTW_FORWARD);
  std::vector<std::complex<double>> cross(n);
  double peak_mag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cross[i] = fb[i] * std::conj(fa[i]);
    peak_mag = std::max(peak_mag, std::abs(cross[i]));
  }
  if (!(peak_mag > 0.0)) throw NumericError("phase correlation of an all-zero spectrum");
  const double eps = peak_mag * 1e-12;
  for (auto& c : cross) {
    const double m = std::abs(c);
    c = m > eps ? c / m : std::complex<double>{};
  }
  detail::fft2d(cross, rows, cols, FFTW_BACKWARD);
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (cross[i].real() > cross[best].real()) best = i;
  auto dy = static_cast<long>(best / cols), dx = static_cast<long>(best % cols);
  if (dy > static_cast<long>(rows / 2)) dy -= static_cast<long>(rows);
  if (dx > static_cast<long>(cols / 2)) dx -= static_cast<long>(cols);
  return {dy, dx, circular_shift(b, -dy, -dx)};
}

struct MetricReport {
  double mse = 0.0;
  double ssim = 0.0;
  double ncc = 0.0;
  double mae = 0.0;
  long shift_dy = 0;
  long shift_dx = 0;

  nlohmann::json to_json() const {
    return {{"mse", mse}, {"ssim", ssim}, {"ncc", ncc}, {"mae", mae}, {"shift_applied", {shift_dy, shift_dx}}};
  }
};

/// Phase-aligns b onto a, then evaluates all four metrics. Also returns the aligned b.
inline std::pair<MetricReport, Image2D> compare_images(const Image2D& a, const Image2D& b,
                                                       const SsimParams& p = {}) {
  auto aligned = phase_align(a, b);
  MetricReport r;
  r.shift_dy = aligned.dy;
  r.shift_dx = aligned.dx;
  r.mse = mse(a, aligned.b_shifted);
  r.mae = mae(a, aligned.b_shifted);
  r.ncc = ncc(a, aligned.b_shifted);
  r.ssim = ssim(a, aligned.b_shifted, p);
  return {r, std::move(aligned.b_shifted)};
}

enum class Stage { Mapping, Propagation, Artifacts };

inline std::string stage_label(const std::set<Stage>& stages) {
  std::string s = "sampling";
  if (stages.contains(Stage::Mapping)) s += "+mapping";
  if (stages.contains(Stage::Propagation)) s += "+propagation";
  if (stages.contains(Stage::Artifacts)) s += "+artifacts";
  return s;
}

/// The six rows of the ablation table, sampling always on.
inline std::vector<std::set<Stage>> ablation_configurations() {
  return {{},
          {Stage::Mapping},
          {Stage::Mapping, Stage::Propagation},
          {Stage::Mapping, Stage::Propagation, Stage::Artifacts},
          {Stage::Propagation},
          {Stage::Propagation, Stage::Artifacts}};
}

struct AblationOptions {
  ArtifactConfig artifacts;        ///< used by rows containing Artifacts (enabled flags honored)
  bool cartesian = true;           ///< compare scan-converted images; false compares polar images
  double intensity_background = 0.0;
  SamplingOptions sampling;        ///< impedance sampling (background, floor, interpolation)
  SsimParams ssim;
  unsigned threads = 1;
};

struct AblationRow {
  std::set<Stage> stages;
  MetricReport report;
  Image2D image;       ///< rendered variant after alignment
  Image2D difference;  ///< reference minus aligned variant
};

/**
 * Renders one pipeline variant. Without Mapping the intensity volume is used
 * in place of impedance (floored when it feeds the solver); without
 * Propagation the sampled ray values become pixels. Images are max-normalized.
 */
inline Image2D render_variant(const VolumeGrid& intensity, const VolumeGrid& impedance,
                              const TransducerPose& pose, const FanConfig& fan,
                              const std::set<Stage>& stages, const AblationOptions& opt,
                              std::size_t height, std::size_t width) {
  const bool mapped = stages.contains(Stage::Mapping);
  RenderOptions ro;
  ro.sampling = opt.sampling;
  if (!mapped) ro.sampling.background = opt.intensity_background;
  ro.propagate = stages.contains(Stage::Propagation);
  ro.normalize = true;
  ro.threads = opt.threads;
  if (stages.contains(Stage::Artifacts)) ro.artifacts = opt.artifacts;
  if (opt.cartesian) ro.cartesian = std::pair{height, width};
  auto img = render(mapped ? impedance : intensity, pose, fan, ro);
  return opt.cartesian ? std::move(*img.cartesian) : std::move(img.polar);
}

/**
 * Metrics of every requested configuration against `reference`, each after
 * integer phase alignment. Dynamic range for SSIM is 1 (normalized images).
 */
inline std::vector<AblationRow> ablation_report(const VolumeGrid& intensity, const VolumeGrid& impedance,
                                                const TransducerPose& pose, const FanConfig& fan,
                                                const Image2D& reference,
                                                const std::vector<std::set<Stage>>& configurations,
                                                const AblationOptions& opt = {}) {
  if (!opt.cartesian && (reference.rows() != fan.n_rays || reference.cols() != fan.n_samples - 1))
    throw ConfigError("reference image does not match the fan dims");
  std::vector<AblationRow> rows;
  for (const auto& stages : configurations) {
    const auto img = render_variant(intensity, impedance, pose, fan, stages, opt, reference.rows(),
                                    reference.cols());
    auto [report, aligned] = compare_images(reference, img, opt.ssim);
    Image2D diff(reference.rows(), reference.cols());
    for (std::size_t i = 0; i < diff.size(); ++i) diff.data()[i] = reference.data()[i] - aligned.data()[i];
    rows.push_back({stages, report, std::move(aligned), std::move(diff)});
  }
  return rows;
}

}  // namespace sonoray

#endif /* SONORAY_METRICS_HPP */
