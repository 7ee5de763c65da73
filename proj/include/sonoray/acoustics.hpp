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

#ifndef SONORAY_ACOUSTICS_HPP
#define SONORAY_ACOUSTICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sonoray/error.hpp"

namespace sonoray {

/// Speed of sound assumed in soft tissue (m/s).
inline constexpr double kSpeedOfSound = 1540.0;

/// Lower bound applied to sampled impedances (MRayl); keeps every reflection coefficient below 1.
inline constexpr double kImpedanceFloor = 1e-4;

/**
 * Impedance samples z_0..z_N (MRayl) along one ray; interface i separates
 * samples i and i+1.
 */
class ImpedanceProfile {
 public:
  explicit ImpedanceProfile(std::vector<double> z) : z_(std::move(z)) {
    if (z_.size() < 2) throw ConfigError("an impedance profile needs at least two samples");
    for (double v : z_)
      if (!(v > 0.0) || !std::isfinite(v))
        throw NumericError("impedance samples must be finite and strictly positive");
  }

  /// Builds a profile after raising every sample to at least `floor`.
  static ImpedanceProfile with_floor(std::vector<double> z, double floor = kImpedanceFloor) {
    for (auto& v : z) v = std::max(v, floor);
    return ImpedanceProfile(std::move(z));
  }

  std::size_t samples() const { return z_.size(); }
  std::size_t interfaces() const { return z_.size() - 1; }
  std::span<const double> values() const { return z_; }
  double operator[](std::size_t i) const { return z_[i]; }

 private:
  std::vector<double> z_;
};

/**
 * Per-interface reflection and transmission coefficients. Reflection uses the
 * magnitude of the impedance contrast, so r_fwd == r_bwd.
 */
struct InterfaceCoefficients {
  std::vector<double> r_fwd;  ///< R_{i -> i+1}
  std::vector<double> r_bwd;  ///< R_{i+1 -> i}
  std::vector<double> t_fwd;  ///< T_{i -> i+1}
  std::vector<double> t_bwd;  ///< T_{i+1 -> i}

  std::size_t size() const { return r_fwd.size(); }

  /// First k interfaces (the medium truncated at sample k).
  InterfaceCoefficients truncated(std::size_t k) const {
    auto cut = [k](const std::vector<double>& v) {
      return std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
    };
    return {cut(r_fwd), cut(r_bwd), cut(t_fwd), cut(t_bwd)};
  }
};

/**
 * Interface coefficients of a profile. `attenuation` is an optional one-way
 * amplitude factor per sample step applied to both transmissions (1 = off).
 */
inline InterfaceCoefficients coefficients(const ImpedanceProfile& z, double attenuation = 1.0) {
  const std::size_t n = z.interfaces();
  InterfaceCoefficients c;
  c.r_fwd.resize(n);
  c.r_bwd.resize(n);
  c.t_fwd.resize(n);
  c.t_bwd.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = z[i], z2 = z[i + 1];
    const double sum = z1 + z2;
    const double r = std::abs(z2 - z1) / sum;
    c.r_fwd[i] = r;
    c.r_bwd[i] = r;
    c.t_fwd[i] = attenuation * 2.0 * z2 / sum;
    c.t_bwd[i] = attenuation * 2.0 * z1 / sum;
  }
  return c;
}

/**
 * Reflection-transmission system A x = b over x = [g_0, d_0, ..., g_N, d_N]
 * (forward / backward amplitudes). Row 0 pins g_0 = 1, row 2N+1 pins d_N = 0,
 * and rows 2i+1, 2i+2 encode the two recurrences at interface i. Each row
 * stores at most three (column, value) entries.
 */
class WaveSystem {
 public:
  struct Entry {
    std::size_t col = 0;
    double value = 0.0;
  };
  struct Row {
    std::array<Entry, 3> entries{};
    std::size_t count = 0;
    void add(std::size_t col, double value) { entries[count++] = {col, value}; }
  };

  explicit WaveSystem(const InterfaceCoefficients& c) : n_(c.size()), rows_(2 * c.size() + 2) {
    if (n_ == 0) throw ConfigError("a wave system needs at least one interface");
    rows_[0].add(0, 1.0);
    for (std::size_t i = 0; i < n_; ++i) {
      // d_i = R_{i->i+1} g_i + T_{i+1->i} d_{i+1}
      auto& back = rows_[2 * i + 1];
      back.add(2 * i, -c.r_fwd[i]);
      back.add(2 * i + 1, 1.0);
      back.add(2 * i + 3, -c.t_bwd[i]);
      // g_{i+1} = T_{i->i+1} g_i + R_{i+1->i} d_{i+1}
      auto& fwd = rows_[2 * i + 2];
      fwd.add(2 * i, -c.t_fwd[i]);
      fwd.add(2 * i + 2, 1.0);
      fwd.add(2 * i + 3, -c.r_bwd[i]);
    }
    rows_[2 * n_ + 1].add(2 * n_ + 1, 1.0);
  }

  std::size_t interfaces() const { return n_; }
  std::size_t dimension() const { return rows_.size(); }
  const std::vector<Row>& rows() const { return rows_; }

  /// Right-hand side e_0.
  std::vector<double> rhs() const {
    std::vector<double> b(dimension(), 0.0);
    b[0] = 1.0;
    return b;
  }

  double entry(std::size_t r, std::size_t c) const {
    for (std::size_t k = 0; k < rows_[r].count; ++k)
      if (rows_[r].entries[k].col == c) return rows_[r].entries[k].value;
    return 0.0;
  }

  std::size_t nonzeros() const {
    std::size_t nnz = 0;
    for (const auto& row : rows_)
      for (std::size_t k = 0; k < row.count; ++k) nnz += row.entries[k].value != 0.0;
    return nnz;
  }

  /// Row-major dense copy, for oracles and debugging.
  std::vector<double> dense() const {
    const std::size_t m = dimension();
    std::vector<double> a(m * m, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < rows_[r].count; ++k)
        a[r * m + rows_[r].entries[k].col] = rows_[r].entries[k].value;
    return a;
  }

  /// ||A x - b||_inf / (||A||_inf ||x||_inf + ||b||_inf).
  double relative_residual(std::span<const double> x) const {
    return relative_residual_truncated(n_, x);
  }

  /**
   * Relative residual of the system truncated at sample k, whose unknowns are
   * x[0..2k+1]. Rows 0..2k coincide with the full system; row 2k+1 pins d_k.
   */
  double relative_residual_truncated(std::size_t k, std::span<const double> x) const {
    const std::size_t last = 2 * k + 1;
    double res = std::abs(x[last]), a_norm = 1.0, x_norm = std::abs(x[last]);
    for (std::size_t r = 0; r < last; ++r) {
      double ax = r == 0 ? -1.0 : 0.0, row_sum = 0.0;
      for (std::size_t e = 0; e < rows_[r].count; ++e) {
        ax += rows_[r].entries[e].value * x[rows_[r].entries[e].col];
        row_sum += std::abs(rows_[r].entries[e].value);
      }
      res = std::max(res, std::abs(ax));
      a_norm = std::max(a_norm, row_sum);
      x_norm = std::max(x_norm, std::abs(x[r]));
    }
    return res / (a_norm * x_norm + 1.0);
  }

 private:
  std::size_t n_;
  std::vector<Row> rows_;
};

inline WaveSystem assemble(const InterfaceCoefficients& c) { return WaveSystem(c); }

/**
 * Pivot-free LU of a WaveSystem in band storage (two sub- and two
 * super-diagonals). Leading blocks of the factorization are shared by every
 * depth truncation of the medium: the system truncated at sample k uses rows
 * 0..2k unchanged plus an identity row for d_k.
 */
class BandedFactorization {
 public:
  static constexpr std::size_t kLower = 2;
  static constexpr std::size_t kUpper = 2;
  static constexpr std::size_t kWidth = kLower + kUpper + 1;

  explicit BandedFactorization(const WaveSystem& sys)
      : n_(sys.interfaces()), dim_(sys.dimension()), band_(dim_) {
    for (std::size_t r = 0; r < dim_; ++r) {
      const auto& row = sys.rows()[r];
      for (std::size_t k = 0; k < row.count; ++k) at(r, row.entries[k].col) = row.entries[k].value;
    }
    for (std::size_t k = 0; k < dim_; ++k) {
      const double pivot = at(k, k);
      if (!(std::abs(pivot) > 1e-14) || !std::isfinite(pivot))
        throw NumericError("wave system is singular (pivot " + std::to_string(pivot) + " at row " +
                           std::to_string(k) + ")");
      const std::size_t last = std::min(dim_ - 1, k + kLower);
      for (std::size_t i = k + 1; i <= last; ++i) {
        const double m = at(i, k) / pivot;
        at(i, k) = m;
        for (std::size_t j = k + 1; j <= std::min(dim_ - 1, k + kUpper); ++j) at(i, j) -= m * at(k, j);
      }
    }
    // L^{-1} e_0, shared by all truncations.
    forward_.assign(dim_, 0.0);
    forward_[0] = 1.0;
    for (std::size_t r = 1; r < dim_; ++r) {
      double s = 0.0;
      for (std::size_t c = r >= kLower ? r - kLower : 0; c < r; ++c) s += at(r, c) * forward_[c];
      forward_[r] = -s;
    }
  }

  std::size_t interfaces() const { return n_; }
  std::size_t dimension() const { return dim_; }

  /// L (unit diagonal, below) and U (diagonal and above) packed together.
  double at(std::size_t r, std::size_t c) const { return band_[r][c + kLower - r]; }

  /// Solution of the full system.
  std::vector<double> solve() const { return solve_truncated(n_); }

  /**
   * Solution x (length 2k+2) of the system truncated after interface k-1,
   * i.e. samples 0..k with far-field termination d_k = 0.
   */
  std::vector<double> solve_truncated(std::size_t k) const {
    std::vector<double> x(2 * k + 2, 0.0);
    back_substitute(k, x);
    return x;
  }

  /// Writes the truncated solution into x[0..2k+1].
  void back_substitute(std::size_t k, std::span<double> x) const {
    const std::size_t last = 2 * k + 1;
    x[last] = 0.0;
    for (std::size_t r = last; r-- > 0;) {
      double s = forward_[r];
      for (std::size_t c = r + 1; c <= std::min(last, r + kUpper); ++c) s -= at(r, c) * x[c];
      x[r] = s / at(r, r);
    }
  }

  /**
   * Solves A_k^T lambda = rhs for the system truncated at k (rhs and lambda of
   * length 2k+2). The identity row of d_k has no L or U couplings in A_k.
   */
  void solve_transposed_truncated(std::size_t k, std::span<const double> rhs,
                                  std::span<double> lambda) const {
    const std::size_t last = 2 * k + 1;
    // U_k^T z = rhs (forward); row `last` of U_k is the unit row.
    for (std::size_t r = 0; r <= last; ++r) {
      double s = rhs[r];
      for (std::size_t c = r >= kUpper ? r - kUpper : 0; c < r; ++c) s -= at(c, r) * lambda[c];
      lambda[r] = r == last ? s : s / at(r, r);
    }
    // L_k^T lambda = z (backward); row `last` of L_k is empty.
    for (std::size_t r = last; r-- > 0;) {
      double s = lambda[r];
      for (std::size_t c = r + 1; c <= std::min(last - 1, r + kLower); ++c) s -= at(c, r) * lambda[c];
      lambda[r] = s;
    }
  }

 private:
  double& at(std::size_t r, std::size_t c) { return band_[r][c + kLower - r]; }

  std::size_t n_;
  std::size_t dim_;
  std::vector<std::array<double, kWidth>> band_{};
  std::vector<double> forward_;
};

/**
 * Dense Gaussian elimination with partial pivoting. Independent reference for
 * the banded solver; O(N^3).
 */
inline std::vector<double> solve_dense_oracle(const WaveSystem& sys) {
  const std::size_t m = sys.dimension();
  auto a = sys.dense();
  auto b = sys.rhs();
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < m; ++i)
      if (std::abs(a[i * m + k]) > std::abs(a[p * m + k])) p = i;
    if (!(std::abs(a[p * m + k]) > 1e-14 * scale)) throw NumericError("wave system is singular");
    if (p != k) {
      for (std::size_t j = 0; j < m; ++j) std::swap(a[k * m + j], a[p * m + j]);
      std::swap(b[k], b[p]);
    }
    for (std::size_t i = k + 1; i < m; ++i) {
      const double f = a[i * m + k] / a[k * m + k];
      if (f == 0.0) continue;
      for (std::size_t j = k; j < m; ++j) a[i * m + j] -= f * a[k * m + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(m, 0.0);
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t j = r + 1; j < m; ++j) s -= a[r * m + j] * x[j];
    x[r] = s / a[r * m + r];
  }
  return x;
}

/// Residual bound above which the banded result is replaced by the dense solve.
inline constexpr double kBandedResidualLimit = 1e-8;

/**
 * Solves the wave system with the banded factorization. A residual check
 * guards the pivot-free elimination; on failure the dense pivoting solver is
 * used instead.
 */
inline std::vector<double> solve(const WaveSystem& sys) {
  auto x = BandedFactorization(sys).solve();
  if (!(sys.relative_residual(x) <= kBandedResidualLimit)) x = solve_dense_oracle(sys);
  return x;
}

/**
 * Echo at the transducer summed over explicit scattering paths that involve
 * at most `max_bounces` interface interactions (each reflection or
 * transmission counts as one). Increases monotonically towards d_0 of the
 * linear system.
 */
inline double path_sum_oracle(const InterfaceCoefficients& c, std::size_t max_bounces) {
  if (max_bounces < 1) throw ConfigError("path summation needs at least one bounce");
  const std::size_t n = c.size();
  // down[j]: wave in layer j travelling towards interface j.
  // up[j]: wave in layer j travelling towards interface j-1 (j >= 1).
  std::vector<double> down(n + 1, 0.0), up(n + 1, 0.0), next_down(n + 1), next_up(n + 1);
  down[0] = 1.0;
  double received = 0.0;
  for (std::size_t e = 0; e < max_bounces; ++e) {
    std::fill(next_down.begin(), next_down.end(), 0.0);
    std::fill(next_up.begin(), next_up.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double a = down[j];
      if (a == 0.0) continue;
      if (j == 0)
        received += a * c.r_fwd[0];
      else
        next_up[j] += a * c.r_fwd[j];
      if (j + 1 < n) next_down[j + 1] += a * c.t_fwd[j];
    }
    for (std::size_t j = 1; j < n; ++j) {
      const double a = up[j];
      if (a == 0.0) continue;
      next_down[j] += a * c.r_bwd[j - 1];
      if (j == 1)
        received += a * c.t_bwd[0];
      else
        next_up[j - 1] += a * c.t_bwd[j - 1];
    }
    down.swap(next_down);
    up.swap(next_up);
  }
  return received;
}

/**
 * True when the all-positive bounce series of the stack converges. Reflection
 * magnitudes make every path amplitude non-negative, so with enough strong
 * interfaces the series diverges; the linear system then still has a solution,
 * but its echoes can be negative. Works up from the deepest interface with the
 * effective reflectance of everything below: the series under interface i
 * converges iff r_i * R_below < 1.
 */
inline bool bounce_series_converges(const InterfaceCoefficients& c) {
  double below = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) {
    const double loop = c.r_bwd[i] * below;
    if (!(loop < 1.0)) return false;
    below = c.r_fwd[i] + c.t_fwd[i] * c.t_bwd[i] * below / (1.0 - loop);
  }
  return true;
}

/// d_0 of the media truncated at samples 1..N: entry k-1 holds d_0^{(k)}.
using EchoProfile = std::vector<double>;

/**
 * Depth-resolved echo profile of one ray. The full system is factored once
 * and each truncation is recovered by back substitution, which matches
 * independent solves of the truncated systems operation for operation.
 */
inline EchoProfile depth_profile(const ImpedanceProfile& z, double attenuation = 1.0) {
  const auto coeff = coefficients(z, attenuation);
  const WaveSystem sys(coeff);
  const BandedFactorization lu(sys);
  const std::size_t n = sys.interfaces();
  EchoProfile d0(n);
  std::vector<double> x(sys.dimension());
  for (std::size_t k = 1; k <= n; ++k) {
    lu.back_substitute(k, x);
    d0[k - 1] = x[1];
    if (!(sys.relative_residual_truncated(k, x) <= kBandedResidualLimit))
      d0[k - 1] = solve_dense_oracle(WaveSystem(coeff.truncated(k)))[1];
  }
  return d0;
}

/// Reflector depth (mm) for a round-trip echo delay dt (s).
inline double time_of_flight_depth(double dt_seconds) {
  if (!(dt_seconds >= 0.0)) throw ConfigError("time of flight must be non-negative");
  return kSpeedOfSound / 2.0 * dt_seconds * 1e3;
}

}  // namespace sonoray

#endif /* SONORAY_ACOUSTICS_HPP */
