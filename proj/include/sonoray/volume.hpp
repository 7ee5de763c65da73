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

#ifndef SONORAY_VOLUME_HPP
#define SONORAY_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sonoray/error.hpp"
#include "sonoray/vec3.hpp"

namespace sonoray {

enum class VolumeKind { Hu, MriIntensity, ImpedanceMrayl };

inline std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::Hu:
      return "HU";
    case VolumeKind::MriIntensity:
      return "MRI_INTENSITY";
    case VolumeKind::ImpedanceMrayl:
      return "IMPEDANCE_MRAYL";
  }
  return "HU";
}

inline VolumeKind volume_kind_from_string(std::string_view s) {
  if (s == "HU") return VolumeKind::Hu;
  if (s == "MRI_INTENSITY") return VolumeKind::MriIntensity;
  if (s == "IMPEDANCE_MRAYL") return VolumeKind::ImpedanceMrayl;
  throw FormatError("unknown volume kind '" + std::string(s) + "'");
}

/// Background impedance seen by rays leaving the volume (water-like couplant), MRayl.
inline constexpr double kDefaultBackgroundImpedance = 1.48;

using Dims = std::array<std::size_t, 3>;

/**
 * Dense 3-D scalar field on a regular, axis-aligned grid.
 *
 * Voxel (i, j, k) has its center at origin + (i, j, k) * spacing (mm) and is
 * stored at linear index i + nx * (j + ny * k). Instances are validated on
 * construction and immutable afterwards.
 */
class VolumeGrid {
 public:
  VolumeGrid(Dims dims, Vec3 spacing, Vec3 origin, std::vector<double> data, VolumeKind kind)
      : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)), kind_(kind) {
    if (dims_[0] == 0 || dims_[1] == 0 || dims_[2] == 0)
      throw ConfigError("volume dims must be positive");
    if (data_.size() != dims_[0] * dims_[1] * dims_[2])
      throw ConfigError("volume payload holds " + std::to_string(data_.size()) +
                        " values but dims require " +
                        std::to_string(dims_[0] * dims_[1] * dims_[2]));
    for (int a = 0; a < 3; ++a) {
      if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
        throw ConfigError("volume spacing must be finite and strictly positive");
      if (!std::isfinite(origin_[a])) throw ConfigError("volume origin must be finite");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw NumericError("volume contains non-finite values");
      if (kind_ == VolumeKind::ImpedanceMrayl && !(v > 0.0))
        throw NumericError("impedance volume contains non-positive values");
    }
  }

  const Dims& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  const std::vector<double>& data() const { return data_; }
  VolumeKind kind() const { return kind_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims_[0] * (j + dims_[1] * k);
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }

  Vec3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
    return {origin_.x + spacing_.x * static_cast<double>(i),
            origin_.y + spacing_.y * static_cast<double>(j),
            origin_.z + spacing_.z * static_cast<double>(k)};
  }

  /// Same geometry, new values and kind.
  VolumeGrid with_data(std::vector<double> data, VolumeKind kind) const {
    return VolumeGrid(dims_, spacing_, origin_, std::move(data), kind);
  }

 private:
  Dims dims_;
  Vec3 spacing_;
  Vec3 origin_;
  std::vector<double> data_;
  VolumeKind kind_;
};

/// Sub-block [lo, hi) of a volume with the origin moved to the block's first voxel.
inline VolumeGrid crop(const VolumeGrid& v, Dims lo, Dims hi) {
  for (int a = 0; a < 3; ++a)
    if (lo[a] >= hi[a] || hi[a] > v.dims()[a]) throw ConfigError("invalid crop box");
  const Dims d{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  std::vector<double> out;
  out.reserve(d[0] * d[1] * d[2]);
  for (std::size_t k = lo[2]; k < hi[2]; ++k)
    for (std::size_t j = lo[1]; j < hi[1]; ++j)
      for (std::size_t i = lo[0]; i < hi[0]; ++i) out.push_back(v.at(i, j, k));
  return VolumeGrid(d, v.spacing(), v.voxel_center(lo[0], lo[1], lo[2]), std::move(out), v.kind());
}

enum class Interpolation { Trilinear, Nearest };

/**
 * The eight lattice corners around a point and their trilinear weights.
 * Corners outside the grid carry index -1 and contribute the background value.
 */
struct TrilinearStencil {
  std::array<std::ptrdiff_t, 8> index{};
  std::array<double, 8> weight{};
  /// d(weight)/d(point) in world units, per corner.
  std::array<Vec3, 8> weight_grad{};
  std::array<double, 3> frac{};  ///< position inside the cell along each axis
};

/// Nested-lerp evaluation of the stencil; exact when all corners are equal.
inline double interpolate(const TrilinearStencil& s, const std::array<double, 8>& corner) {
  auto lerp = [](double a, double b, double f) { return a + f * (b - a); };
  const double y0 = lerp(lerp(corner[0], corner[1], s.frac[0]), lerp(corner[2], corner[3], s.frac[0]), s.frac[1]);
  const double y1 = lerp(lerp(corner[4], corner[5], s.frac[0]), lerp(corner[6], corner[7], s.frac[0]), s.frac[1]);
  return lerp(y0, y1, s.frac[2]);
}

inline TrilinearStencil trilinear_stencil(const VolumeGrid& v, const Vec3& p) {
  TrilinearStencil s;
  std::array<std::ptrdiff_t, 3> base{};
  std::array<double, 3> frac{};
  std::array<bool, 3> inside_range{};
  for (int a = 0; a < 3; ++a) {
    const double n = static_cast<double>(v.dims()[a]);
    double u = (p[a] - v.origin()[a]) / v.spacing()[a];
    // Everything beyond one voxel outside the lattice reads pure background.
    inside_range[a] = u > -1.0 && u < n;
    u = std::clamp(u, -2.0, n + 1.0);
    const double f = std::floor(u);
    base[a] = static_cast<std::ptrdiff_t>(f);
    frac[a] = u - f;
  }
  const bool any_outside = !(inside_range[0] && inside_range[1] && inside_range[2]);
  s.frac = frac;
  for (int c = 0; c < 8; ++c) {
    const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    const std::ptrdiff_t ii = base[0] + bx, jj = base[1] + by, kk = base[2] + bz;
    const double wx = bx ? frac[0] : 1.0 - frac[0];
    const double wy = by ? frac[1] : 1.0 - frac[1];
    const double wz = bz ? frac[2] : 1.0 - frac[2];
    const double sx = (bx ? 1.0 : -1.0) / v.spacing().x;
    const double sy = (by ? 1.0 : -1.0) / v.spacing().y;
    const double sz = (bz ? 1.0 : -1.0) / v.spacing().z;
    s.weight[c] = wx * wy * wz;
    s.weight_grad[c] = any_outside ? Vec3{} : Vec3{sx * wy * wz, wx * sy * wz, wx * wy * sz};
    const bool in = ii >= 0 && jj >= 0 && kk >= 0 &&
                    ii < static_cast<std::ptrdiff_t>(v.dims()[0]) &&
                    jj < static_cast<std::ptrdiff_t>(v.dims()[1]) &&
                    kk < static_cast<std::ptrdiff_t>(v.dims()[2]);
    s.index[c] = in ? static_cast<std::ptrdiff_t>(v.index(static_cast<std::size_t>(ii),
                                                          static_cast<std::size_t>(jj),
                                                          static_cast<std::size_t>(kk)))
                    : -1;
  }
  return s;
}

/**
 * Trilinear interpolation in world coordinates. The lattice is extended with
 * `background` beyond its last voxel centers, so the field is continuous
 * everywhere and equals `background` more than one voxel outside the grid.
 */
inline double sample_trilinear(const VolumeGrid& v, const Vec3& p,
                               double background = kDefaultBackgroundImpedance) {
  const auto s = trilinear_stencil(v, p);
  std::array<double, 8> corner{};
  for (int c = 0; c < 8; ++c)
    corner[c] = s.index[c] >= 0 ? v.data()[static_cast<std::size_t>(s.index[c])] : background;
  return interpolate(s, corner);
}

/// Value and spatial gradient of the trilinear field at p.
inline std::pair<double, Vec3> sample_trilinear_with_gradient(
    const VolumeGrid& v, const Vec3& p, double background = kDefaultBackgroundImpedance) {
  const auto s = trilinear_stencil(v, p);
  std::array<double, 8> corner{};
  Vec3 grad;
  for (int c = 0; c < 8; ++c) {
    corner[c] = s.index[c] >= 0 ? v.data()[static_cast<std::size_t>(s.index[c])] : background;
    grad += s.weight_grad[c] * corner[c];
  }
  return {interpolate(s, corner), grad};
}

inline double sample_nearest(const VolumeGrid& v, const Vec3& p,
                             double background = kDefaultBackgroundImpedance) {
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double u = std::round((p[a] - v.origin()[a]) / v.spacing()[a]);
    if (!(u >= 0.0 && u < static_cast<double>(v.dims()[a]))) return background;
    idx[a] = static_cast<std::size_t>(u);
  }
  return v.at(idx[0], idx[1], idx[2]);
}

inline double sample(const VolumeGrid& v, const Vec3& p, Interpolation mode,
                     double background = kDefaultBackgroundImpedance) {
  return mode == Interpolation::Nearest ? sample_nearest(v, p, background)
                                        : sample_trilinear(v, p, background);
}

}  // namespace sonoray

#endif /* SONORAY_VOLUME_HPP */
