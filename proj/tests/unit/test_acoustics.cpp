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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sonoray/acoustics.hpp"
#include "test_support.hpp"

using namespace sonoray;
using Catch::Approx;

TEST_CASE("coefficients of a single interface") {
  const auto c = coefficients(ImpedanceProfile({1.0, 3.0}));
  CHECK(c.r_fwd[0] == 0.5);
  CHECK(c.r_bwd[0] == 0.5);
  CHECK(c.t_fwd[0] == 1.5);
  CHECK(c.t_bwd[0] == 0.5);

  const auto h = coefficients(ImpedanceProfile({2.0, 2.0}));
  CHECK(h.r_fwd[0] == 0.0);
  CHECK(h.t_fwd[0] == 1.0);
  CHECK(h.t_bwd[0] == 1.0);
}

TEST_CASE("transmission product equals one minus r squared") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto z = test::random_impedances(rng, 2);
    const auto c = coefficients(ImpedanceProfile(z));
    const double expected = 4.0 * z[0] * z[1] / ((z[0] + z[1]) * (z[0] + z[1]));
    CHECK(c.t_fwd[0] * c.t_bwd[0] == Approx(expected).epsilon(1e-14));
    CHECK(c.t_fwd[0] * c.t_bwd[0] == Approx(1.0 - c.r_fwd[0] * c.r_fwd[0]).margin(1e-14));
    CHECK(c.r_fwd[0] >= 0.0);
    CHECK(c.r_fwd[0] <= 1.0);
    CHECK(c.t_fwd[0] > 0.0);
    CHECK(c.t_bwd[0] > 0.0);
  }
}

TEST_CASE("profile validation") {
  CHECK_THROWS_AS(ImpedanceProfile({1.0}), ConfigError);
  CHECK_THROWS_AS(ImpedanceProfile({1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(ImpedanceProfile({1.0, -2.0}), NumericError);
  CHECK_THROWS_AS(ImpedanceProfile({1.0, std::nan("")}), NumericError);
  const auto floored = ImpedanceProfile::with_floor({0.0, 1.0, -3.0});
  CHECK(floored[0] == kImpedanceFloor);
  CHECK(floored[2] == kImpedanceFloor);
}

TEST_CASE("assembled system for one interface") {
  const WaveSystem sys(coefficients(ImpedanceProfile({1.0, 3.0})));
  const std::vector<double> expected = {1, 0, 0, 0, -0.5, 1, 0, -0.5, -1.5, 0, 1, -0.5, 0, 0, 0, 1};
  CHECK(sys.dense() == expected);
  CHECK(sys.rhs() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("system structure for random profiles") {
  std::mt19937_64 rng(12);
  for (std::size_t n = 1; n <= 64; ++n) {
    const WaveSystem sys(coefficients(ImpedanceProfile(test::random_impedances(rng, n + 1))));
    const std::size_t m = sys.dimension();
    REQUIRE(m == 2 * n + 2);
    const auto a = sys.dense();
    for (std::size_t r = 0; r < m; ++r) {
      int nz = 0;
      for (std::size_t c = 0; c < m; ++c) nz += a[r * m + c] != 0.0;
      CHECK(nz <= 3);
    }
    for (std::size_t c = 0; c < m; ++c) {
      CHECK(a[c] == (c == 0 ? 1.0 : 0.0));
      CHECK(a[(m - 1) * m + c] == (c == m - 1 ? 1.0 : 0.0));
    }
    CHECK(sys.nonzeros() <= 3 * m);
  }
}

TEST_CASE("solutions of the small reference systems") {
  const auto x1 = solve(WaveSystem(coefficients(ImpedanceProfile({1.0, 3.0}))));
  CHECK(x1 == std::vector<double>{1.0, 0.5, 1.5, 0.0});

  const auto x2 = solve(WaveSystem(coefficients(ImpedanceProfile({1.0, 3.0, 1.0}))));
  CHECK(x2[0] == 1.0);
  CHECK(x2[1] == Approx(1.0).epsilon(1e-14));
  CHECK(x2[2] == Approx(2.0).epsilon(1e-14));
  CHECK(x2[3] == Approx(1.0).epsilon(1e-14));
  CHECK(x2[4] == Approx(1.0).epsilon(1e-14));
  CHECK(x2[5] == 0.0);

  const auto xd = solve_dense_oracle(WaveSystem(coefficients(ImpedanceProfile({1.0, 3.0, 1.0}))));
  CHECK(xd[1] == Approx(1.0).epsilon(1e-14));

  const auto xh = solve(WaveSystem(coefficients(ImpedanceProfile(std::vector<double>(6, 1.6)))));
  for (std::size_t i = 0; i < xh.size(); ++i) CHECK(xh[i] == (i % 2 == 0 ? 1.0 : 0.0));
}

TEST_CASE("banded solve matches the dense oracle") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  for (int trial = 0; trial < 1000; ++trial) {
    const WaveSystem sys(coefficients(ImpedanceProfile(test::random_impedances(rng, len(rng) + 1))));
    const auto xb = BandedFactorization(sys).solve();
    const auto xd = solve_dense_oracle(sys);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xb.size(); ++i) {
      num = std::max(num, std::abs(xb[i] - xd[i]));
      den = std::max(den, std::abs(xd[i]));
    }
    REQUIRE(num / den <= 1e-10);
    CHECK(sys.relative_residual(xb) <= 1e-10);
    CHECK(xb[0] == 1.0);
    CHECK(xb.back() == 0.0);
  }
}

TEST_CASE("solution amplitudes are non-negative when the bounce series converges") {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<std::size_t> len(1, 32);
  std::size_t convergent = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    // Alternate arbitrary contrasts with tissue-like ones.
    const auto z = trial % 2 ? test::random_impedances(rng, len(rng) + 1)
                             : test::random_impedances(rng, len(rng) + 1, 1.3, 1.8);
    const auto c = coefficients(ImpedanceProfile(z));
    if (!bounce_series_converges(c)) continue;
    ++convergent;
    for (double v : solve(WaveSystem(c))) REQUIRE(v >= 0.0);
  }
  CHECK(convergent >= 4000);
}

TEST_CASE("two-interface stacks are always non-negative") {
  // d_0 = r_0 + t_fwd t_bwd r_1 / (1 - r_0 r_1) with r_0 r_1 < 1.
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto c = coefficients(ImpedanceProfile(test::random_impedances(rng, 3)));
    REQUIRE(bounce_series_converges(c));
    for (double v : solve(WaveSystem(c))) REQUIRE(v >= 0.0);
  }
}

TEST_CASE("magnitude-only reflections can make the bounce series diverge") {
  // Every path amplitude is positive, so with enough strong interfaces the
  // path sum grows without bound and the linear system returns a negative
  // echo. Banded and dense solves agree; this is the model, not round-off.
  const ImpedanceProfile z({0.658225, 8.42796, 0.482018, 7.59001, 7.77275});
  const auto c = coefficients(z);
  const WaveSystem sys(c);
  CHECK_FALSE(bounce_series_converges(c));
  const auto x = BandedFactorization(sys).solve();
  const auto xd = solve_dense_oracle(sys);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - xd[i]) <= 1e-12 * std::max(1.0, std::abs(xd[i])));
  CHECK(x[1] < 0.0);
  CHECK(path_sum_oracle(c, 20) > 4.0);
  CHECK(path_sum_oracle(c, 60) > 20.0 * path_sum_oracle(c, 20) / 4.0);
  // The first two truncations still converge; the third does not.
  const auto d = depth_profile(z);
  CHECK(bounce_series_converges(c.truncated(2)));
  CHECK_FALSE(bounce_series_converges(c.truncated(3)));
  CHECK(d[1] > d[0]);
  CHECK(d[2] < 0.0);
}

TEST_CASE("impedance scaling leaves the solution unchanged") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    auto z = test::random_impedances(rng, 20);
    const auto x = solve(WaveSystem(coefficients(ImpedanceProfile(z))));
    for (auto& v : z) v *= 3.7;
    const auto y = solve(WaveSystem(coefficients(ImpedanceProfile(z))));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == Approx(x[i]).margin(1e-13));
  }
}

TEST_CASE("path summation for the reference profiles") {
  const auto c = coefficients(ImpedanceProfile({1.0, 3.0, 1.0}));
  CHECK(path_sum_oracle(c, 1) == 0.5);
  CHECK(path_sum_oracle(c, 3) == Approx(0.875).epsilon(1e-15));
  CHECK(std::abs(path_sum_oracle(c, 50) - 1.0) <= 1e-8);

  const auto single = coefficients(ImpedanceProfile({1.0, 3.0}));
  for (std::size_t b : {1, 2, 5, 50}) CHECK(path_sum_oracle(single, b) == 0.5);
  CHECK_THROWS_AS(path_sum_oracle(single, 0), ConfigError);
}

TEST_CASE("path summation increases towards the solved echo") {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> len(1, 8);
  std::size_t checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto c = coefficients(ImpedanceProfile(test::random_impedances(rng, len(rng) + 1)));
    if (!bounce_series_converges(c)) continue;
    ++checked;
    const double d0 = solve(WaveSystem(c))[1];
    double prev = 0.0;
    for (std::size_t b = 1; b <= 40; ++b) {
      const double s = path_sum_oracle(c, b);
      CHECK(s >= prev);
      CHECK(s <= d0 * (1.0 + 1e-12));
      prev = s;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("path summation reaches the solved echo on moderate contrasts") {
  // Impedances in [1, 1.8] keep every r <= 0.29. Interaction counts include
  // transmissions, so deeper stacks need far more than 50 of them.
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> len(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto z = test::random_impedances(rng, len(rng) + 1, 1.0, 1.8);
    const auto c = coefficients(ImpedanceProfile(z));
    REQUIRE(bounce_series_converges(c));
    CHECK(std::abs(path_sum_oracle(c, 400) - solve(WaveSystem(c))[1]) <= 1e-8);
  }
  // Two interfaces: the tail after 50 interactions is below 0.082^24.
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = coefficients(ImpedanceProfile(test::random_impedances(rng, 3, 1.0, 1.8)));
    CHECK(std::abs(path_sum_oracle(c, 50) - solve(WaveSystem(c))[1]) <= 1e-8);
  }
}

TEST_CASE("path summation with strong reflectors needs more interactions") {
  // r = 0.9 at both interfaces: the loop gain 0.81 makes 50 interactions too
  // few, but the series still converges to the linear-system value 1.8.
  const auto c = coefficients(ImpedanceProfile({1.0, 19.0, 1.0}));
  REQUIRE(c.r_fwd[0] == Approx(0.9));
  const double d0 = solve(WaveSystem(c))[1];
  CHECK(d0 == Approx(1.8).epsilon(1e-14));
  CHECK(std::abs(path_sum_oracle(c, 50) - d0) > 1e-8);
  CHECK(std::abs(path_sum_oracle(c, 4000) - d0) <= 1e-8);
  // A third such interface pushes the loop gain past one.
  CHECK_FALSE(bounce_series_converges(coefficients(ImpedanceProfile({1.0, 19.0, 1.0, 19.0}))));
}

TEST_CASE("depth profile of the reference stack") {
  const auto d = depth_profile(ImpedanceProfile({1.0, 3.0, 1.0}));
  REQUIRE(d.size() == 2);
  CHECK(d[0] == 0.5);
  CHECK(d[1] == Approx(1.0).epsilon(1e-14));

  const auto h = depth_profile(ImpedanceProfile(std::vector<double>(50, 1.2)));
  for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("depth profile reuse matches independent truncated solves") {
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    const ImpedanceProfile z(test::random_impedances(rng, len(rng) + 1));
    const auto c = coefficients(z);
    const auto d = depth_profile(z);
    for (std::size_t k = 1; k <= z.interfaces(); ++k) {
      const WaveSystem sub(c.truncated(k));
      CHECK(std::abs(d[k - 1] - BandedFactorization(sub).solve()[1]) <= 1e-12);
      CHECK(std::abs(d[k - 1] - solve_dense_oracle(sub)[1]) <= 1e-10 * std::max(1.0, std::abs(d[k - 1])));
    }
  }
}

TEST_CASE("depth profiles are non-negative and non-decreasing when the bounce series converges") {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<std::size_t> len(1, 16);
  std::size_t convergent = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto z = trial % 2 ? test::random_impedances(rng, len(rng) + 1)
                             : test::random_impedances(rng, len(rng) + 1, 1.3, 1.8);
    const ImpedanceProfile profile(z);
    if (!bounce_series_converges(coefficients(profile))) continue;
    ++convergent;
    const auto d = depth_profile(profile);
    REQUIRE(d[0] >= 0.0);
    for (std::size_t k = 1; k < d.size(); ++k) REQUIRE(d[k] >= d[k - 1] - 1e-12 * d[k - 1]);
  }
  CHECK(convergent >= 4000);
}

TEST_CASE("attenuation scales single-interface transmission") {
  const auto c = coefficients(ImpedanceProfile({1.0, 3.0}), 0.9);
  CHECK(c.r_fwd[0] == 0.5);
  CHECK(c.t_fwd[0] == Approx(1.35));
  CHECK(c.t_bwd[0] == Approx(0.45));
  // Deeper echoes are damped by the round trip.
  const auto plain = depth_profile(ImpedanceProfile({1.0, 1.0, 3.0}));
  const auto damped = depth_profile(ImpedanceProfile({1.0, 1.0, 3.0}), 0.9);
  CHECK(damped[1] == Approx(plain[1] * 0.81));
}

TEST_CASE("time of flight to depth") {
  CHECK(time_of_flight_depth(1e-4) == Approx(77.0).epsilon(1e-14));
  CHECK(time_of_flight_depth(0.0) == 0.0);
  CHECK(time_of_flight_depth(2.0 * 0.042 / 1540.0) == Approx(42.0).epsilon(1e-14));
  CHECK_THROWS_AS(time_of_flight_depth(-1e-6), ConfigError);
}

TEST_CASE("depth profile cost grows at most quadratically") {
  std::mt19937_64 rng(20);
  auto time_profile = [&](std::size_t n) {
    const ImpedanceProfile z(test::random_impedances(rng, n + 1));
    double best = 1e300;
    for (int rep = 0; rep < 15; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < 20; ++i) {
        const auto d = depth_profile(z);
        REQUIRE(d.size() == n);
      }
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double t100 = time_profile(100);
  const double t200 = time_profile(200);
  // Quadratic growth predicts a ratio of 4; allow generous timer noise.
  CHECK(t200 / t100 < 8.0);
}
