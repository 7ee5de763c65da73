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

#ifndef SONORAY_VEC3_HPP
#define SONORAY_VEC3_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace sonoray {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) { return a * (1.0 / norm(a)); }

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  constexpr double operator()(int r, int c) const { return m[r * 3 + c]; }
  constexpr double& operator()(int r, int c) { return m[r * 3 + c]; }

  static constexpr Mat3 identity() { return Mat3{}; }
  static constexpr Mat3 zero() { return Mat3{{0, 0, 0, 0, 0, 0, 0, 0, 0}}; }

  constexpr Vec3 column(int c) const { return {m[c], m[3 + c], m[6 + c]}; }

  friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out = zero();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 3; ++k) out(r, c) += a(r, k) * b(k, c);
    return out;
  }
  friend constexpr Mat3 operator+(Mat3 a, const Mat3& b) {
    for (int i = 0; i < 9; ++i) a.m[i] += b.m[i];
    return a;
  }
  friend constexpr Mat3 operator*(Mat3 a, double s) {
    for (auto& v : a.m) v *= s;
    return a;
  }
  constexpr Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }
};

/// Cross-product matrix: skew(w) * v == cross(w, v).
constexpr Mat3 skew(const Vec3& w) { return Mat3{{0, -w.z, w.y, w.z, 0, -w.x, -w.y, w.x, 0}}; }

/// Rotation matrix of the axis-angle vector `w` (Rodrigues).
inline Mat3 exp_so3(const Vec3& w) {
  const double theta2 = dot(w, w);
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-6) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 k = skew(w);
  return Mat3::identity() + k * a + (k * k) * b;
}

/// Axis-angle vector of a rotation matrix; inverse of exp_so3 for angles below pi.
inline Vec3 log_so3(const Mat3& r) {
  const double cos_theta = std::clamp((r(0, 0) + r(1, 1) + r(2, 2) - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 v{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  if (theta < 1e-6) return v * (0.5 * (1.0 + theta * theta / 6.0));
  if (std::numbers::pi - theta < 1e-6) {
    // Near pi: recover the axis from the symmetric part.
    int k = 0;
    if (r(1, 1) > r(k, k)) k = 1;
    if (r(2, 2) > r(k, k)) k = 2;
    Vec3 axis;
    const double d = std::sqrt(std::max(0.0, (r(k, k) + 1.0) * 0.5));
    axis[k] = d;
    for (int j = 0; j < 3; ++j)
      if (j != k) axis[j] = (r(j, k) + r(k, j)) / (4.0 * d);
    return normalized(axis) * theta;
  }
  return v * (theta / (2.0 * std::sin(theta)));
}

/**
 * Left Jacobian of SO(3): exp(w + dw) ~= exp(J_l(w) dw) exp(w) for small dw.
 */
inline Mat3 left_jacobian_so3(const Vec3& w) {
  const double theta2 = dot(w, w);
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-5) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 k = skew(w);
  return Mat3::identity() + k * a + (k * k) * b;
}

}  // namespace sonoray

#endif /* SONORAY_VEC3_HPP */
