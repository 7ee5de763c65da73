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

#ifndef SONORAY_GRADIENTS_HPP
#define SONORAY_GRADIENTS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sonoray/acoustics.hpp"
#include "sonoray/error.hpp"
#include "sonoray/geometry.hpp"
#include "sonoray/imaging.hpp"
#include "sonoray/parallel.hpp"
#include "sonoray/vec3.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

/// Gradient of a scalar loss with respect to each coefficient entering A.
struct CoefficientGradient {
  std::vector<double> r_fwd, r_bwd, t_fwd, t_bwd;

  explicit CoefficientGradient(std::size_t n = 0)
      : r_fwd(n, 0.0), r_bwd(n, 0.0), t_fwd(n, 0.0), t_bwd(n, 0.0) {}
};

namespace detail {

/// dL/dA = -lambda x^T gathered onto the coefficient slots of the first k interfaces.
inline void gather_coefficient_gradient(std::size_t k, std::span<const double> lambda,
                                        std::span<const double> x, CoefficientGradient& g) {
  for (std::size_t i = 0; i < k; ++i) {
    g.r_fwd[i] += lambda[2 * i + 1] * x[2 * i];
    g.t_bwd[i] += lambda[2 * i + 1] * x[2 * i + 3];
    g.t_fwd[i] += lambda[2 * i + 2] * x[2 * i];
    g.r_bwd[i] += lambda[2 * i + 2] * x[2 * i + 3];
  }
}

}  // namespace detail

/**
 * Adjoint of the wave solve: given dL/dx at the solution of A x = b, returns
 * dL/d(coefficients) via one transposed banded solve. A holds the negated
 * coefficients, so dL/dc = lambda_r x_c for the slot (r, c) holding -c.
 */
inline CoefficientGradient solve_adjoint(const WaveSystem& sys, std::span<const double> dl_dx) {
  if (dl_dx.size() != sys.dimension()) throw ConfigError("dL/dx has the wrong length");
  const BandedFactorization lu(sys);
  const auto x = lu.solve();
  std::vector<double> lambda(sys.dimension());
  lu.solve_transposed_truncated(sys.interfaces(), dl_dx, lambda);
  for (double v : lambda)
    if (!std::isfinite(v)) throw NumericError("transposed wave solve produced non-finite values");
  CoefficientGradient g(sys.interfaces());
  detail::gather_coefficient_gradient(sys.interfaces(), lambda, x, g);
  return g;
}

/**
 * Chain rule from coefficient gradients to impedance samples. At exact ties
 * z_i == z_{i+1} the reflection kink takes subgradient 0.
 */
inline std::vector<double> coefficient_to_impedance_gradient(const ImpedanceProfile& z,
                                                             const CoefficientGradient& g,
                                                             double attenuation = 1.0) {
  std::vector<double> dz(z.samples(), 0.0);
  for (std::size_t i = 0; i < z.interfaces(); ++i) {
    const double z1 = z[i], z2 = z[i + 1];
    const double s = z1 + z2;
    const double inv = 1.0 / (s * s);
    const double sign = z2 > z1 ? 1.0 : (z2 < z1 ? -1.0 : 0.0);
    const double dr = g.r_fwd[i] + g.r_bwd[i];
    dz[i] += dr * sign * (-2.0 * z2 * inv) + attenuation * 2.0 * inv * (g.t_bwd[i] * z2 - g.t_fwd[i] * z2);
    dz[i + 1] += dr * sign * (2.0 * z1 * inv) + attenuation * 2.0 * inv * (g.t_fwd[i] * z1 - g.t_bwd[i] * z1);
  }
  return dz;
}

/**
 * Vector-Jacobian product of the depth-resolved echo profile: returns
 * sum_k w[k] * d(d0[k])/dz for every impedance sample. One transposed solve
 * per truncation depth with non-zero weight.
 */
inline std::vector<double> echo_profile_vjp(const ImpedanceProfile& z, std::span<const double> w,
                                            double attenuation = 1.0) {
  const auto coeff = coefficients(z, attenuation);
  const WaveSystem sys(coeff);
  const BandedFactorization lu(sys);
  const std::size_t n = sys.interfaces();
  if (w.size() != n) throw ConfigError("echo weights must match the profile length");
  CoefficientGradient g(n);
  std::vector<double> x(sys.dimension()), rhs(sys.dimension(), 0.0), lambda(sys.dimension());
  for (std::size_t k = 1; k <= n; ++k) {
    if (w[k - 1] == 0.0) continue;
    const std::size_t dim = 2 * k + 2;
    lu.back_substitute(k, x);
    std::fill(rhs.begin(), rhs.begin() + static_cast<std::ptrdiff_t>(dim), 0.0);
    rhs[1] = w[k - 1];
    lu.solve_transposed_truncated(k, std::span<const double>(rhs).first(dim),
                                  std::span<double>(lambda).first(dim));
    detail::gather_coefficient_gradient(k, lambda, x, g);
  }
  return coefficient_to_impedance_gradient(z, g, attenuation);
}

/// Pixel weights of one image row to weights on d0 (pixel k = d0[k] - d0[k-1]).
inline std::vector<double> pixel_to_echo_weights(std::span<const double> pixel_weights) {
  const std::size_t n = pixel_weights.size();
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = pixel_weights[k] - (k + 1 < n ? pixel_weights[k + 1] : 0.0);
  return w;
}

struct PixelIndex {
  std::size_t ray = 0;
  std::size_t depth = 0;
};

/// Sparse vector over voxel linear indices, sorted and duplicate-free.
using SparseGradient = std::vector<std::pair<std::size_t, double>>;

/**
 * Sensitivities of selected pre-artifact, unnormalized pixels. Row p of
 * d_pixels_d_impedance is sparse over voxels; row p of d_pixels_d_pose is the
 * derivative w.r.t. the pose vector (tx, ty, tz, wx, wy, wz).
 */
struct RenderGradient {
  std::vector<PixelIndex> pixels;
  std::vector<SparseGradient> d_pixels_d_impedance;
  std::vector<PoseVector> d_pixels_d_pose;
};

namespace detail {

struct RayBackward {
  std::vector<std::pair<std::size_t, double>> voxel_terms;  ///< unmerged (voxel, value)
  PoseVector pose{};
};

inline SparseGradient merge_sparse(std::vector<std::pair<std::size_t, double>> terms) {
  std::stable_sort(terms.begin(), terms.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseGradient out;
  for (const auto& [idx, v] : terms) {
    if (!out.empty() && out.back().first == idx)
      out.back().second += v;
    else
      out.emplace_back(idx, v);
  }
  return out;
}

/**
 * Back-propagates pixel weights of one ray through the solver, the impedance
 * floor and trilinear sampling, to voxels and/or the pose vector.
 */
inline RayBackward backward_ray(const VolumeGrid& volume, const Ray& ray,
                                const PoseVector& pose_vec, const FanConfig& fan,
                                std::span<const double> pixel_weights, const SamplingOptions& sampling,
                                double attenuation, bool want_voxels, bool want_pose) {
  if (sampling.interpolation != Interpolation::Trilinear)
    throw ConfigError("gradients require trilinear sampling");
  RayBackward out;
  const auto pts = sample_points(ray, fan);
  std::vector<double> raw(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j) raw[j] = sample_trilinear(volume, pts[j], sampling.background);
  const auto profile = ImpedanceProfile::with_floor(raw, sampling.floor);
  const auto dz = echo_profile_vjp(profile, pixel_to_echo_weights(pixel_weights), attenuation);

  const Mat3 jl = left_jacobian_so3({pose_vec[3], pose_vec[4], pose_vec[5]});
  const double step = fan.sample_step();
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (dz[j] == 0.0 || raw[j] < sampling.floor) continue;
    const auto st = trilinear_stencil(volume, pts[j]);
    if (want_voxels)
      for (int c = 0; c < 8; ++c)
        if (st.index[c] >= 0 && st.weight[c] != 0.0)
          out.voxel_terms.emplace_back(static_cast<std::size_t>(st.index[c]), dz[j] * st.weight[c]);
    if (want_pose) {
      Vec3 grad;
      for (int c = 0; c < 8; ++c) {
        const double value = st.index[c] >= 0 ? volume.data()[static_cast<std::size_t>(st.index[c])]
                                              : sampling.background;
        grad += st.weight_grad[c] * value;
      }
      const Vec3 g = grad * dz[j];
      const double s = step * static_cast<double>(j);
      // p = t + s * exp(w) u  =>  dp/dt = I,  dp/dw = -s [d]x J_l(w).
      const Vec3 gw = jl.transposed() * cross(ray.direction, g) * s;
      out.pose[0] += g.x;
      out.pose[1] += g.y;
      out.pose[2] += g.z;
      out.pose[3] += gw.x;
      out.pose[4] += gw.y;
      out.pose[5] += gw.z;
    }
  }
  return out;
}

}  // namespace detail

/**
 * Gradient of L = sum(weights * pixels) over the unnormalized echo image with
 * respect to the pose vector. Per-ray contributions are reduced in ray order.
 */
inline PoseVector grad_loss_wrt_pose(const VolumeGrid& volume, const PoseVector& pose_vec,
                                     const FanConfig& fan, const Image2D& pixel_weights,
                                     const SamplingOptions& sampling = {}, double attenuation = 1.0,
                                     unsigned threads = 1) {
  const auto pose = pose_from_vector(pose_vec);
  const auto rays = generate_rays(pose, fan);
  if (pixel_weights.rows() != fan.n_rays || pixel_weights.cols() != fan.n_samples - 1)
    throw ConfigError("pixel weights do not match the fan dims");
  std::vector<PoseVector> per_ray(rays.size());
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    per_ray[r] = detail::backward_ray(volume, rays[r], pose_vec, fan,
                                      pixel_weights.row(r), sampling, attenuation, false, true)
                     .pose;
  });
  PoseVector total{};
  for (const auto& g : per_ray)
    for (int i = 0; i < 6; ++i) total[i] += g[i];
  return total;
}

/// Dense gradient of L = sum(weights * pixels) with respect to every voxel.
inline std::vector<double> grad_loss_wrt_impedance(const VolumeGrid& volume, const TransducerPose& pose,
                                                   const FanConfig& fan, const Image2D& pixel_weights,
                                                   const SamplingOptions& sampling = {},
                                                   double attenuation = 1.0, unsigned threads = 1) {
  const auto rays = generate_rays(pose, fan);
  const auto pose_vec = pose_to_vector(pose);
  if (pixel_weights.rows() != fan.n_rays || pixel_weights.cols() != fan.n_samples - 1)
    throw ConfigError("pixel weights do not match the fan dims");
  std::vector<detail::RayBackward> per_ray(rays.size());
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    per_ray[r] = detail::backward_ray(volume, rays[r], pose_vec, fan,
                                      pixel_weights.row(r), sampling, attenuation, true, false);
  });
  std::vector<double> grad(volume.size(), 0.0);
  for (const auto& rb : per_ray)
    for (const auto& [idx, v] : rb.voxel_terms) grad[idx] += v;
  return grad;
}

namespace detail {

inline RenderGradient grad_pixels(const VolumeGrid& volume, const TransducerPose& pose,
                                  const FanConfig& fan, std::span<const PixelIndex> pixels,
                                  const SamplingOptions& sampling, double attenuation,
                                  unsigned threads, bool want_voxels, bool want_pose) {
  const auto rays = generate_rays(pose, fan);
  const auto pose_vec = pose_to_vector(pose);
  RenderGradient out;
  out.pixels.assign(pixels.begin(), pixels.end());
  out.d_pixels_d_impedance.resize(pixels.size());
  out.d_pixels_d_pose.resize(pixels.size());
  parallel_for(pixels.size(), threads, [&](std::size_t p) {
    const auto& px = pixels[p];
    if (px.ray >= fan.n_rays || px.depth + 1 >= fan.n_samples)
      throw ConfigError("pixel index outside the fan image");
    std::vector<double> w(fan.n_samples - 1, 0.0);
    w[px.depth] = 1.0;
    auto rb = backward_ray(volume, rays[px.ray], pose_vec, fan, w, sampling,
                           attenuation, want_voxels, want_pose);
    if (want_voxels) out.d_pixels_d_impedance[p] = merge_sparse(std::move(rb.voxel_terms));
    out.d_pixels_d_pose[p] = rb.pose;
  });
  return out;
}

}  // namespace detail

/// Sparse derivatives of each selected pixel with respect to the impedance voxels.
inline RenderGradient grad_pixels_wrt_impedance(const VolumeGrid& volume, const TransducerPose& pose,
                                                const FanConfig& fan, std::span<const PixelIndex> pixels,
                                                const SamplingOptions& sampling = {},
                                                double attenuation = 1.0, unsigned threads = 1) {
  return detail::grad_pixels(volume, pose, fan, pixels, sampling, attenuation, threads, true, false);
}

/// Derivatives of each selected pixel with respect to the six pose parameters.
inline RenderGradient grad_pixels_wrt_pose(const VolumeGrid& volume, const TransducerPose& pose,
                                           const FanConfig& fan, std::span<const PixelIndex> pixels,
                                           const SamplingOptions& sampling = {},
                                           double attenuation = 1.0, unsigned threads = 1) {
  return detail::grad_pixels(volume, pose, fan, pixels, sampling, attenuation, threads, false, true);
}

enum class RegistrationLoss { Mse, Ncc };

struct OptimizerConfig {
  std::size_t max_iterations = 200;
  double initial_step_mm = 1.0;     ///< length of the first trial step in scaled units
  double rotation_scale_mm = 30.0;  ///< mm per radian when mixing translations and rotations
  double tolerance = 1e-7;          ///< stop when a step moves less than this (scaled units)
  std::size_t max_backtracks = 40;
  double armijo = 1e-4;
};

struct RegistrationProblem {
  Image2D fixed;  ///< target unnormalized echo image, n_rays x (n_samples - 1)
  PoseVector initial_pose{};
  FanConfig fan;
  RegistrationLoss loss = RegistrationLoss::Mse;
  OptimizerConfig optimizer;
  SamplingOptions sampling;
  double attenuation = 1.0;
  unsigned threads = 1;
};

struct RegistrationStep {
  std::size_t iteration = 0;
  double loss = 0.0;
  PoseVector pose{};
};

struct RegistrationResult {
  PoseVector pose{};
  double loss = 0.0;
  std::vector<RegistrationStep> trace;
  bool converged = false;
  std::string status;
};

/// Loss value and dL/dpixel of a rendered image against the target.
inline std::pair<double, Image2D> image_loss(const Image2D& rendered, const Image2D& fixed,
                                             RegistrationLoss loss) {
  if (rendered.rows() != fixed.rows() || rendered.cols() != fixed.cols())
    throw ConfigError("fixed image dims do not match the fan config");
  const auto n = static_cast<double>(rendered.size());
  Image2D grad(rendered.rows(), rendered.cols());
  if (loss == RegistrationLoss::Mse) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      const double d = rendered.data()[i] - fixed.data()[i];
      sum += d * d;
      grad.data()[i] = 2.0 * d / n;
    }
    return {sum / n, std::move(grad)};
  }
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    ma += rendered.data()[i];
    mb += fixed.data()[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double a = rendered.data()[i] - ma, b = fixed.data()[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (detail::is_flat(saa, ma, n) || detail::is_flat(sbb, mb, n))
    throw NumericError("NCC loss is undefined for a constant image");
  const double na = std::sqrt(saa), nb = std::sqrt(sbb);
  const double ncc = sab / (na * nb);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double a = rendered.data()[i] - ma, b = fixed.data()[i] - mb;
    grad.data()[i] = -(b / (na * nb) - ncc * a / saa);
  }
  return {1.0 - ncc, std::move(grad)};
}

/**
 * Rigid slice-to-volume registration by gradient descent on the pose vector.
 * Steps use a Barzilai-Borwein length followed by Armijo backtracking, so the
 * recorded loss never increases.
 */
inline RegistrationResult register_slice(const VolumeGrid& volume, const RegistrationProblem& problem) {
  const auto& opt = problem.optimizer;
  if (problem.fixed.rows() != problem.fan.n_rays || problem.fixed.cols() != problem.fan.n_samples - 1)
    throw ConfigError("fixed image dims do not match the fan config");
  if (!(opt.rotation_scale_mm > 0.0) || !(opt.initial_step_mm > 0.0))
    throw ConfigError("optimizer scales must be positive");

  // Optimization variables are offsets from the initial pose, rotations in mm-equivalent units.
  const double rs = opt.rotation_scale_mm;
  const PoseVector& p0 = problem.initial_pose;
  auto to_pose = [rs, &p0](const std::array<double, 6>& y) {
    return PoseVector{p0[0] + y[0], p0[1] + y[1], p0[2] + y[2],
                      p0[3] + y[3] / rs, p0[4] + y[4] / rs, p0[5] + y[5] / rs};
  };
  auto evaluate = [&](const std::array<double, 6>& y, bool with_grad) {
    const auto pv = to_pose(y);
    const auto img = render_echo_image(volume, pose_from_vector(pv), problem.fan, problem.sampling,
                                       problem.attenuation, problem.threads);
    auto [loss, dl] = image_loss(img, problem.fixed, problem.loss);
    std::array<double, 6> g{};
    if (with_grad) {
      const auto gp = grad_loss_wrt_pose(volume, pv, problem.fan, dl, problem.sampling,
                                         problem.attenuation, problem.threads);
      for (int i = 0; i < 3; ++i) {
        g[i] = gp[i];
        g[i + 3] = gp[i + 3] / rs;
      }
    }
    return std::pair{loss, g};
  };
  auto sqnorm = [](const std::array<double, 6>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  };

  std::array<double, 6> y{};
  auto [f, g] = evaluate(y, true);
  RegistrationResult result;
  result.trace.push_back({0, f, to_pose(y)});

  double alpha = 0.0;
  std::array<double, 6> prev_y{}, prev_g{};
  bool have_prev = false;
  result.status = "max_iterations";
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    const double gg = sqnorm(g);
    if (!(gg > 0.0)) {
      result.converged = true;
      result.status = "zero_gradient";
      break;
    }
    if (have_prev) {
      std::array<double, 6> s{}, dg{};
      for (int i = 0; i < 6; ++i) {
        s[i] = y[i] - prev_y[i];
        dg[i] = g[i] - prev_g[i];
      }
      double sy = 0.0;
      for (int i = 0; i < 6; ++i) sy += s[i] * dg[i];
      alpha = sy > 0.0 ? sqnorm(s) / sy : 2.0 * alpha;
    } else {
      alpha = opt.initial_step_mm / std::sqrt(gg);
    }

    bool accepted = false;
    std::array<double, 6> y_new{};
    double f_new = f;
    for (std::size_t bt = 0; bt <= opt.max_backtracks; ++bt) {
      for (int i = 0; i < 6; ++i) y_new[i] = y[i] - alpha * g[i];
      f_new = evaluate(y_new, false).first;
      if (std::isfinite(f_new) && f_new <= f - opt.armijo * alpha * gg) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      const double step = alpha * std::sqrt(gg);
      result.converged = step < opt.tolerance || f <= std::numeric_limits<double>::min();
      result.status = result.converged ? "converged" : "diverged";
      break;
    }
    prev_y = y;
    prev_g = g;
    have_prev = true;
    y = y_new;
    double step2 = 0.0;
    for (int i = 0; i < 6; ++i) step2 += (y[i] - prev_y[i]) * (y[i] - prev_y[i]);
    std::tie(f, g) = evaluate(y, true);
    result.trace.push_back({it, f, to_pose(y)});
    if (std::sqrt(step2) < opt.tolerance) {
      result.converged = true;
      result.status = "converged";
      break;
    }
  }
  result.pose = to_pose(y);
  result.loss = f;
  return result;
}

}  // namespace sonoray

#endif /* SONORAY_GRADIENTS_HPP */
