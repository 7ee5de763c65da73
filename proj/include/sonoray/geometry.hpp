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

#ifndef SONORAY_GEOMETRY_HPP
#define SONORAY_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoray/acoustics.hpp"
#include "sonoray/error.hpp"
#include "sonoray/vec3.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

/**
 * Probe placement: the fan apex, the central beam direction and the in-plane
 * lateral direction. The fan lies in the plane spanned by axis and in_plane.
 */
struct TransducerPose {
  Vec3 position;
  Vec3 axis{0, 0, 1};
  Vec3 in_plane{1, 0, 0};

  void validate() const {
    if (std::abs(norm(axis) - 1.0) > 1e-9 || std::abs(norm(in_plane) - 1.0) > 1e-9)
      throw ConfigError("pose axis and in_plane must be unit vectors");
    if (std::abs(dot(axis, in_plane)) > 1e-9)
      throw ConfigError("pose axis and in_plane must be orthogonal");
  }

  /// Rotation whose columns are in_plane, axis x in_plane, axis.
  Mat3 rotation() const {
    const Vec3 y = cross(axis, in_plane);
    return Mat3{{in_plane.x, y.x, axis.x, in_plane.y, y.y, axis.y, in_plane.z, y.z, axis.z}};
  }
};

/// Translation (mm) followed by an axis-angle rotation (rad) of the canonical frame.
using PoseVector = std::array<double, 6>;

/**
 * Maps (t, w) to the pose with apex t whose axis and in_plane are exp(w)
 * applied to +z and +x.
 */
inline TransducerPose pose_from_vector(const PoseVector& p) {
  const Mat3 r = exp_so3({p[3], p[4], p[5]});
  return {{p[0], p[1], p[2]}, r.column(2), r.column(0)};
}

inline PoseVector pose_to_vector(const TransducerPose& pose) {
  const Vec3 w = log_so3(pose.rotation());
  return {pose.position.x, pose.position.y, pose.position.z, w.x, w.y, w.z};
}

struct FanConfig {
  std::size_t n_rays = 256;
  std::size_t n_samples = 200;
  double fan_angle = std::numbers::pi / 3.0;  ///< total aperture, radians
  double depth_mm = 60.0;

  void validate() const {
    if (n_rays < 1) throw ConfigError("fan needs at least one ray");
    if (n_samples < 2) throw ConfigError("fan needs at least two samples per ray");
    if (!(fan_angle > 0.0 && fan_angle < std::numbers::pi))
      throw ConfigError("fan angle must lie in (0, pi)");
    if (!(depth_mm > 0.0)) throw ConfigError("imaging depth must be positive");
  }

  /// Arc length between consecutive samples along a ray.
  double sample_step() const { return depth_mm / static_cast<double>(n_samples - 1); }

  /// Angle of ray i from the central axis; index 0 is the most negative.
  double ray_angle(std::size_t i) const {
    if (n_rays == 1) return 0.0;
    return -0.5 * fan_angle + fan_angle * static_cast<double>(i) / static_cast<double>(n_rays - 1);
  }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

inline std::vector<Ray> generate_rays(const TransducerPose& pose, const FanConfig& cfg) {
  pose.validate();
  cfg.validate();
  std::vector<Ray> rays(cfg.n_rays);
  for (std::size_t i = 0; i < cfg.n_rays; ++i) {
    const double a = cfg.ray_angle(i);
    rays[i] = {pose.position, normalized(pose.axis * std::cos(a) + pose.in_plane * std::sin(a))};
  }
  return rays;
}

/// World positions of the n_samples points of a ray; sample 0 is the apex.
inline std::vector<Vec3> sample_points(const Ray& ray, const FanConfig& cfg) {
  std::vector<Vec3> pts(cfg.n_samples);
  const double step = cfg.sample_step();
  for (std::size_t j = 0; j < cfg.n_samples; ++j)
    pts[j] = ray.origin + ray.direction * (step * static_cast<double>(j));
  return pts;
}

struct SamplingOptions {
  Interpolation interpolation = Interpolation::Trilinear;
  double background = kDefaultBackgroundImpedance;
  double floor = kImpedanceFloor;
};

/// Raw volume values along a ray (no floor), used for impedance and for intensity baselines.
inline std::vector<double> sample_ray(const VolumeGrid& v, const Ray& ray, const FanConfig& cfg,
                                      const SamplingOptions& opt = {}) {
  const auto pts = sample_points(ray, cfg);
  std::vector<double> out(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j)
    out[j] = sample(v, pts[j], opt.interpolation, opt.background);
  return out;
}

/**
 * Impedance profile along a ray: n_samples values at uniform arc length from
 * the apex out to depth_mm, floored at opt.floor.
 */
inline ImpedanceProfile extract_profile(const VolumeGrid& v, const Ray& ray, const FanConfig& cfg,
                                        const SamplingOptions& opt = {}) {
  return ImpedanceProfile::with_floor(sample_ray(v, ray, cfg, opt), opt.floor);
}

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(std::string(key) + " must have three components");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

/**
 * Pose from JSON: either position_mm / axis / in_plane, or a six-entry
 * pose_vector. Axis and in_plane are normalized on load.
 */
inline TransducerPose pose_from_json(const nlohmann::json& j) {
  TransducerPose pose;
  try {
    if (j.contains("pose_vector")) {
      const auto v = j.at("pose_vector").get<std::vector<double>>();
      if (v.size() != 6) throw ConfigError("pose_vector must have six entries");
      return pose_from_vector({v[0], v[1], v[2], v[3], v[4], v[5]});
    }
    pose.position = detail::json_vec3(j, "position_mm");
    pose.axis = detail::json_vec3(j, "axis");
    pose.in_plane = detail::json_vec3(j, "in_plane");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pose: ") + e.what());
  }
  if (!(norm(pose.axis) > 0.0) || !(norm(pose.in_plane) > 0.0))
    throw ConfigError("pose axis and in_plane must be non-zero");
  pose.axis = normalized(pose.axis);
  pose.in_plane = normalized(pose.in_plane);
  pose.validate();
  return pose;
}

inline nlohmann::json pose_to_json(const TransducerPose& pose) {
  const auto v = pose_to_vector(pose);
  return {{"position_mm", {pose.position.x, pose.position.y, pose.position.z}},
          {"axis", {pose.axis.x, pose.axis.y, pose.axis.z}},
          {"in_plane", {pose.in_plane.x, pose.in_plane.y, pose.in_plane.z}},
          {"pose_vector", std::vector<double>(v.begin(), v.end())}};
}

inline FanConfig fan_from_json(const nlohmann::json& j) {
  FanConfig cfg;
  try {
    cfg.n_rays = j.value("n_rays", cfg.n_rays);
    cfg.n_samples = j.value("n_samples", cfg.n_samples);
    if (j.contains("fan_angle_deg"))
      cfg.fan_angle = j.at("fan_angle_deg").get<double>() * std::numbers::pi / 180.0;
    cfg.depth_mm = j.value("depth_mm", cfg.depth_mm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed fan config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json fan_to_json(const FanConfig& cfg) {
  return {{"n_rays", cfg.n_rays},
          {"n_samples", cfg.n_samples},
          {"fan_angle_deg", cfg.fan_angle * 180.0 / std::numbers::pi},
          {"depth_mm", cfg.depth_mm}};
}

}  // namespace sonoray

#endif /* SONORAY_GEOMETRY_HPP */
