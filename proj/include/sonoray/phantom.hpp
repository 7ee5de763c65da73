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

#ifndef SONORAY_PHANTOM_HPP
#define SONORAY_PHANTOM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sonoray/vec3.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

/// Origin that puts the grid center at (0, 0, 0).
inline Vec3 centered_origin(const Dims& dims, const Vec3& spacing) {
  return {-0.5 * spacing.x * static_cast<double>(dims[0] - 1), -0.5 * spacing.y * static_cast<double>(dims[1] - 1),
          -0.5 * spacing.z * static_cast<double>(dims[2] - 1)};
}

/// Fills a grid by evaluating f at every voxel center.
inline VolumeGrid make_volume(const Dims& dims, const Vec3& spacing, const Vec3& origin, VolumeKind kind,
                              const std::function<double(const Vec3&)>& f) {
  std::vector<double> data(dims[0] * dims[1] * dims[2]);
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        const Vec3 p{origin.x + spacing.x * static_cast<double>(i), origin.y + spacing.y * static_cast<double>(j),
                     origin.z + spacing.z * static_cast<double>(k)};
        data[i + dims[0] * (j + dims[1] * k)] = f(p);
      }
  return VolumeGrid(dims, spacing, origin, std::move(data), kind);
}

inline VolumeGrid homogeneous_phantom(const Dims& dims, const Vec3& spacing, double value,
                                      VolumeKind kind = VolumeKind::ImpedanceMrayl) {
  return make_volume(dims, spacing, centered_origin(dims, spacing), kind, [value](const Vec3&) { return value; });
}

/// Hard-edged sphere: `inside` where |p - center| <= radius, `outside` elsewhere.
inline VolumeGrid sphere_phantom(const Dims& dims, const Vec3& spacing, const Vec3& center, double radius,
                                 double inside, double outside, VolumeKind kind = VolumeKind::ImpedanceMrayl) {
  return make_volume(dims, spacing, centered_origin(dims, spacing), kind,
                     [&](const Vec3& p) { return norm(p - center) <= radius ? inside : outside; });
}

struct Blob {
  Vec3 center;
  double sigma = 1.0;
  double amplitude = 0.0;
};

/**
 * base + sum of Gaussian blobs; with positive base and |amplitudes| summing
 * below it, the field stays positive. Blob parameters are drawn from a seeded
 * mt19937_64 inside the central 70% of the grid extent.
 */
inline std::vector<Blob> random_blobs(const Dims& dims, const Vec3& spacing, std::size_t count,
                                      double max_amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 origin = centered_origin(dims, spacing);
  std::vector<Blob> blobs(count);
  double min_extent = 1e300;
  for (int a = 0; a < 3; ++a) min_extent = std::min(min_extent, spacing[a] * static_cast<double>(dims[a] - 1));
  for (auto& b : blobs) {
    for (int a = 0; a < 3; ++a) b.center[a] = origin[a] * (0.7 * (2.0 * unit(rng) - 1.0));
    b.sigma = min_extent * (0.06 + 0.1 * unit(rng));
    b.amplitude = max_amplitude * (2.0 * unit(rng) - 1.0);
  }
  return blobs;
}

inline VolumeGrid blob_phantom(const Dims& dims, const Vec3& spacing, double base, const std::vector<Blob>& blobs,
                               VolumeKind kind = VolumeKind::ImpedanceMrayl) {
  return make_volume(dims, spacing, centered_origin(dims, spacing), kind, [&](const Vec3& p) {
    double v = base;
    for (const auto& b : blobs) {
      const Vec3 d = p - b.center;
      v += b.amplitude * std::exp(-dot(d, d) / (2.0 * b.sigma * b.sigma));
    }
    return v;
  });
}

/**
 * Synthetic head-like intensity volume: concentric smooth shells mimicking
 * white matter (0.9), gray matter (0.5) and CSF (0.2) inside background 0.
 * Shell edges are smoothed over `edge_mm` with a logistic ramp.
 */
inline VolumeGrid brain_phantom(const Dims& dims, const Vec3& spacing, double edge_mm = 1.0) {
  const Vec3 origin = centered_origin(dims, spacing);
  const double r_max = std::min({-origin.x, -origin.y, -origin.z});
  auto step = [edge_mm](double r, double radius) { return 1.0 / (1.0 + std::exp((r - radius) / edge_mm)); };
  return make_volume(dims, spacing, origin, VolumeKind::MriIntensity, [&](const Vec3& p) {
    // Slightly anisotropic radius gives non-circular contours.
    const double r = std::sqrt(p.x * p.x + 1.2 * p.y * p.y + 0.8 * p.z * p.z);
    const double skull = step(r, 0.9 * r_max);
    const double brain = step(r, 0.8 * r_max);
    const double white = step(r, 0.5 * r_max);
    const double ventricle = step(norm(p - Vec3{0.15 * r_max, 0.0, 0.1 * r_max}), 0.15 * r_max);
    double v = 0.2 * skull + (0.5 - 0.2) * brain + (0.9 - 0.5) * white;
    v += (0.2 - 0.9) * ventricle * white;
    return v;
  });
}

}  // namespace sonoray

#endif /* SONORAY_PHANTOM_HPP */
