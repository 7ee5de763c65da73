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
#include <set>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sonoray/impedance_map.hpp"
#include "sonoray/metrics.hpp"
#include "sonoray/phantom.hpp"
#include "test_support.hpp"

using namespace sonoray;
using Catch::Approx;

namespace {

Image2D constant(std::size_t rows, std::size_t cols, double v) {
  Image2D img(rows, cols);
  for (auto& x : img.data()) x = v;
  return img;
}

// Slow oracles written straight from the textbook formulas.
double mse_oracle(const Image2D& a, const Image2D& b) {
  long double s = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) s += std::pow(static_cast<long double>(a(r, c) - b(r, c)), 2);
  return static_cast<double>(s / a.size());
}

double mae_oracle(const Image2D& a, const Image2D& b) {
  long double s = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) s += std::fabs(static_cast<long double>(a(r, c) - b(r, c)));
  return static_cast<double>(s / a.size());
}

double ncc_oracle(const Image2D& a, const Image2D& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data()[i];
    mb += b.data()[i];
  }
  ma /= a.size();
  mb /= a.size();
  long double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.data()[i] - ma) * (b.data()[i] - mb);
    da += (a.data()[i] - ma) * (a.data()[i] - ma);
    db += (b.data()[i] - mb) * (b.data()[i] - mb);
  }
  return static_cast<double>(num / std::sqrt(da * db));
}

/// Direct 2-D window evaluation of mean SSIM (valid positions only).
double ssim_oracle(const Image2D& a, const Image2D& b, std::size_t win = 11, double sigma = 1.5, double L = 1.0) {
  const long h = static_cast<long>(win / 2);
  std::vector<long double> w(win * win);
  long double wsum = 0;
  for (long i = -h; i <= h; ++i)
    for (long j = -h; j <= h; ++j) {
      const long double v = std::exp(-static_cast<long double>(i * i + j * j) / (2.0L * sigma * sigma));
      w[static_cast<std::size_t>((i + h) * static_cast<long>(win) + (j + h))] = v;
      wsum += v;
    }
  for (auto& v : w) v /= wsum;
  const long double c1 = std::pow(0.01L * L, 2), c2 = std::pow(0.03L * L, 2);
  long double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= a.rows(); ++r)
    for (std::size_t c = 0; c + win <= a.cols(); ++c) {
      long double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const long double wt = w[i * win + j], x = a(r + i, c + j), y = b(r + i, c + j);
          mu_a += wt * x;
          mu_b += wt * y;
          saa += wt * x * x;
          sbb += wt * y * y;
          sab += wt * x * y;
        }
      saa -= mu_a * mu_a;
      sbb -= mu_b * mu_b;
      sab -= mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
      ++count;
    }
  return static_cast<double>(total / count);
}

}  // namespace

TEST_CASE("identical images") {
  std::mt19937_64 rng(1);
  const auto a = test::random_image(rng, 20, 30);
  CHECK(mse(a, a) == 0.0);
  CHECK(mae(a, a) == 0.0);
  CHECK(ncc(a, a) == Approx(1.0).epsilon(1e-15));
  CHECK(ssim(a, a) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("constant images half a unit apart") {
  const auto a = constant(8, 8, 0.2), b = constant(8, 8, 0.7);
  CHECK(mse(a, b) == Approx(0.25).epsilon(1e-15));
  CHECK(mae(a, b) == Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(ncc(a, b), NumericError);
}

TEST_CASE("ncc is affine invariant") {
  std::mt19937_64 rng(2);
  const auto a = test::random_image(rng, 12, 9);
  Image2D b(12, 9);
  for (std::size_t i = 0; i < a.size(); ++i) b.data()[i] = 2.0 * a.data()[i] + 1.0;
  CHECK(ncc(a, b) == Approx(1.0).epsilon(1e-14));
  for (std::size_t i = 0; i < a.size(); ++i) b.data()[i] = -3.0 * a.data()[i] + 5.0;
  CHECK(ncc(a, b) == Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("metrics reject mismatched dims") {
  const Image2D a(4, 4), b(4, 5);
  CHECK_THROWS_AS(mse(a, b), ConfigError);
  CHECK_THROWS_AS(mae(a, b), ConfigError);
  CHECK_THROWS_AS(ncc(a, b), ConfigError);
  CHECK_THROWS_AS(ssim(a, b), ConfigError);
  CHECK_THROWS_AS(phase_align(a, b), ConfigError);
}

TEST_CASE("ssim rejects small images and bad parameters") {
  const Image2D a(10, 20);
  CHECK_THROWS_AS(ssim(a, a), ConfigError);
  SsimParams p;
  p.dynamic_range = 0.0;
  const Image2D big(16, 16);
  CHECK_THROWS_AS(ssim(big, big, p), ConfigError);
  p = {};
  p.window = 10;
  CHECK_THROWS_AS(ssim(big, big, p), ConfigError);
}

TEST_CASE("metrics agree with direct-formula oracles") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_image(rng, 16, 16), b = test::random_image(rng, 16, 16);
    CHECK(std::abs(mse(a, b) - mse_oracle(a, b)) <= 1e-10);
    CHECK(std::abs(mae(a, b) - mae_oracle(a, b)) <= 1e-10);
    CHECK(std::abs(ncc(a, b) - ncc_oracle(a, b)) <= 1e-10);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-10);
  }
}

TEST_CASE("ssim is symmetric and bounded") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = test::random_image(rng, 24, 20), b = test::structured_image(rng, 24, 20);
    const double s = ssim(a, b);
    CHECK(s == ssim(b, a));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("inverted checkerboard has negative ssim") {
  Image2D a(11, 11), b(11, 11);
  for (std::size_t r = 0; r < 11; ++r)
    for (std::size_t c = 0; c < 11; ++c) {
      a(r, c) = static_cast<double>((r + c) % 2);
      b(r, c) = 1.0 - a(r, c);
    }
  const double s = ssim(a, b);
  CHECK(s == Approx(ssim_oracle(a, b)).margin(1e-12));
  CHECK(s < 0.0);
}

TEST_CASE("circular shift convention") {
  Image2D a(3, 4);
  a(0, 0) = 1.0;
  const auto b = circular_shift(a, 1, -1);
  CHECK(b(1, 3) == 1.0);
  CHECK(circular_shift(b, -1, 1) == a);
}

TEST_CASE("phase alignment recovers a planted shift") {
  std::mt19937_64 rng(5);
  const auto a = test::structured_image(rng, 64, 48);
  const auto b = circular_shift(a, 3, -5);
  const auto r = phase_align(a, b);
  CHECK(r.dy == 3);
  CHECK(r.dx == -5);
  CHECK(r.b_shifted == a);

  const auto z = phase_align(a, a);
  CHECK(z.dy == 0);
  CHECK(z.dx == 0);

  Image2D scaled = b;
  for (auto& v : scaled.data()) v *= 37.0;
  const auto s = phase_align(a, scaled);
  CHECK(s.dy == 3);
  CHECK(s.dx == -5);
}

TEST_CASE("phase alignment of an all-zero image fails") {
  const Image2D a(8, 8);
  std::mt19937_64 rng(6);
  CHECK_THROWS_AS(phase_align(a, test::random_image(rng, 8, 8)), NumericError);
}

TEST_CASE("phase alignment on structured 128x128 images") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<long> shift(-40, 40);
  int exact = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const auto a = test::structured_image(rng, 128, 128);
    const long dy = shift(rng), dx = shift(rng);
    const auto r = phase_align(a, circular_shift(a, dy, dx));
    if (r.dy == dy && r.dx == dx) ++exact;
  }
  CHECK(exact >= 95);
}

TEST_CASE("compare_images reports the applied shift") {
  std::mt19937_64 rng(8);
  const auto a = test::structured_image(rng, 32, 32);
  const auto [report, aligned] = compare_images(a, circular_shift(a, -2, 4));
  CHECK(report.shift_dy == -2);
  CHECK(report.shift_dx == 4);
  CHECK(report.mse == 0.0);
  CHECK(report.ssim == Approx(1.0));
  const auto j = report.to_json();
  CHECK(j.at("shift_applied") == nlohmann::json::array({-2, 4}));
}

TEST_CASE("ablation table has the six stage patterns") {
  const auto rows = ablation_configurations();
  REQUIRE(rows.size() == 6);
  std::set<std::string> labels;
  for (const auto& r : rows) labels.insert(stage_label(r));
  CHECK(labels == std::set<std::string>{"sampling", "sampling+mapping", "sampling+mapping+propagation",
                                        "sampling+mapping+propagation+artifacts", "sampling+propagation",
                                        "sampling+propagation+artifacts"});
}

TEST_CASE("ablation self-row is perfect and every row is finite") {
  const Dims dims{32, 32, 32};
  const Vec3 spacing{1.5, 1.5, 1.5};
  const auto mri = brain_phantom(dims, spacing);
  IntensityImpedanceModel model;
  model.layers = {DenseLayer{1, 1, {0.3}, {0.3}, Activation::Identity}};
  const auto z = mri_to_impedance(mri, model);
  FanConfig fan;
  fan.n_rays = 48;
  fan.n_samples = 64;
  fan.depth_mm = 40.0;
  const TransducerPose pose{{0, 0, -22}, {0, 0, 1}, {1, 0, 0}};
  AblationOptions opt;
  opt.artifacts.speckle_enabled = true;
  opt.artifacts.blur_enabled = true;
  opt.artifacts.blur_sigma0 = 0.5;
  opt.artifacts.blur_slope = 0.01;
  opt.artifacts.seed = 3;
  const std::set<Stage> full{Stage::Mapping, Stage::Propagation, Stage::Artifacts};
  for (bool cart : {true, false}) {
    opt.cartesian = cart;
    const auto reference = render_variant(mri, z, pose, fan, full, opt, 64, 80);
    const auto rows = ablation_report(mri, z, pose, fan, reference, ablation_configurations(), opt);
    REQUIRE(rows.size() == 6);
    for (const auto& row : rows) {
      CHECK(std::isfinite(row.report.mse));
      CHECK(std::isfinite(row.report.ssim));
      CHECK(std::isfinite(row.report.ncc));
      CHECK(std::isfinite(row.report.mae));
      CHECK(row.difference.rows() == reference.rows());
      if (row.stages == full) {
        CHECK(row.report.mse == 0.0);
        CHECK(row.report.ssim == Approx(1.0).epsilon(1e-12));
        CHECK(row.report.ncc == Approx(1.0).epsilon(1e-12));
      } else {
        CHECK(row.report.mse > 0.0);
      }
    }
  }
}
