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

#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sonoray/phantom.hpp"
#include "sonoray/volume.hpp"

using namespace sonoray;
using Catch::Approx;

namespace {

VolumeGrid affine_volume(double a, double b, double c, double d) {
  return make_volume({6, 5, 7}, {0.5, 0.75, 1.25}, {-1.0, 2.0, 0.5}, VolumeKind::MriIntensity,
                     [&](const Vec3& p) { return a * p.x + b * p.y + c * p.z + d; });
}

}  // namespace

TEST_CASE("volume construction validates its invariants") {
  CHECK_NOTHROW(VolumeGrid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, std::vector<double>(8, 1.0), VolumeKind::Hu));
  CHECK_THROWS_AS(VolumeGrid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, std::vector<double>(7, 1.0), VolumeKind::Hu),
                  ConfigError);
  CHECK_THROWS_AS(VolumeGrid({2, 2, 2}, {1, 0, 1}, {0, 0, 0}, std::vector<double>(8, 1.0), VolumeKind::Hu),
                  ConfigError);
  CHECK_THROWS_AS(VolumeGrid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, std::vector<double>(8, 0.0),
                             VolumeKind::ImpedanceMrayl),
                  NumericError);
  std::vector<double> bad(8, 1.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(VolumeGrid({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, bad, VolumeKind::Hu), NumericError);
}

TEST_CASE("volume kind names round-trip") {
  for (auto k : {VolumeKind::Hu, VolumeKind::MriIntensity, VolumeKind::ImpedanceMrayl})
    CHECK(volume_kind_from_string(to_string(k)) == k);
  CHECK(to_string(VolumeKind::Hu) == "HU");
  CHECK_THROWS_AS(volume_kind_from_string("density"), FormatError);
}

TEST_CASE("trilinear sampling reproduces voxel values and midpoints") {
  std::vector<double> data(8, 1.0);
  data[1] = 3.0;  // voxel (1, 0, 0)
  const VolumeGrid v({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, data, VolumeKind::ImpedanceMrayl);
  CHECK(sample_trilinear(v, {1, 0, 0}) == 3.0);
  CHECK(sample_trilinear(v, {0, 1, 1}) == 1.0);
  CHECK(sample_trilinear(v, {0.5, 0, 0}) == 2.0);
  CHECK(sample_trilinear(v, {100, 0, 0}, 1.5) == 1.5);
  CHECK(sample_trilinear(v, {-50, -50, 80}, 1.5) == 1.5);
  CHECK(sample_nearest(v, {0.9, 0.2, 0.1}) == 3.0);
  CHECK(sample_nearest(v, {7.0, 0.0, 0.0}, 1.25) == 1.25);
}

TEST_CASE("trilinear sampling is exact on affine fields") {
  const auto v = affine_volume(0.3, -1.1, 2.0, 5.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(-1.0, 1.5), uy(2.0, 5.0), uz(0.5, 8.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 p{ux(rng), uy(rng), uz(rng)};
    const double expected = 0.3 * p.x - 1.1 * p.y + 2.0 * p.z + 5.0;
    const auto [value, grad] = sample_trilinear_with_gradient(v, p, 0.0);
    CHECK(value == Approx(expected).epsilon(1e-12));
    CHECK(grad.x == Approx(0.3).epsilon(1e-10));
    CHECK(grad.y == Approx(-1.1).epsilon(1e-10));
    CHECK(grad.z == Approx(2.0).epsilon(1e-10));
  }
}

TEST_CASE("trilinear sampling is continuous, including across the grid boundary") {
  std::mt19937_64 rng(5);
  const auto v = blob_phantom({8, 8, 8}, {1, 1, 1}, 1.5, random_blobs({8, 8, 8}, {1, 1, 1}, 4, 0.3, 9));
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    const double a = sample_trilinear(v, p);
    const double b = sample_trilinear(v, p + Vec3{1e-9, -1e-9, 1e-9});
    CHECK(std::abs(a - b) < 1e-7);
  }
}

TEST_CASE("stencil weight gradients match finite differences") {
  const auto v = blob_phantom({8, 8, 8}, {0.7, 1.0, 1.3}, 1.5, random_blobs({8, 8, 8}, {0.7, 1.0, 1.3}, 4, 0.3, 3));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    const auto [value, grad] = sample_trilinear_with_gradient(v, p);
    for (int a = 0; a < 3; ++a) {
      Vec3 h;
      h[a] = 1e-6;
      const double fd = (sample_trilinear(v, p + h) - sample_trilinear(v, p - h)) / 2e-6;
      CHECK(grad[a] == Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("crop keeps world positions of the retained voxels") {
  const auto v = affine_volume(1.0, 2.0, 3.0, 0.0);
  const auto c = crop(v, {1, 2, 3}, {4, 5, 6});
  CHECK(c.dims() == Dims{3, 3, 3});
  CHECK(c.at(0, 0, 0) == v.at(1, 2, 3));
  CHECK(norm(c.voxel_center(2, 1, 0) - v.voxel_center(3, 3, 3)) < 1e-12);
  CHECK_THROWS_AS(crop(v, {0, 0, 0}, {7, 1, 1}), ConfigError);
}
