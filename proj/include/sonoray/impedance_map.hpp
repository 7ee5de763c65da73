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

#ifndef SONORAY_IMPEDANCE_MAP_HPP
#define SONORAY_IMPEDANCE_MAP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sonoray/error.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

/// Impedance unit conversion: kg m^-2 s^-1 per MRayl.
inline constexpr double kRaylPerMrayl = 1e6;

/**
 * Piecewise-linear function through ordered knots, extended linearly beyond
 * the first and last knot.
 */
class PiecewiseLinearMap {
 public:
  using Knot = std::pair<double, double>;

  explicit PiecewiseLinearMap(std::vector<Knot> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) throw ConfigError("piecewise-linear map needs at least two knots");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (!std::isfinite(knots_[i].first) || !std::isfinite(knots_[i].second))
        throw ConfigError("piecewise-linear knots must be finite");
      if (i > 0 && !(knots_[i].first > knots_[i - 1].first))
        throw ConfigError("piecewise-linear knot inputs must be strictly increasing");
    }
  }

  double operator()(double x) const {
    const auto seg = segment(x);
    const auto& [x0, y0] = knots_[seg];
    const auto& [x1, y1] = knots_[seg + 1];
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
  }

  double slope(double x) const {
    const auto seg = segment(x);
    return (knots_[seg + 1].second - knots_[seg].second) /
           (knots_[seg + 1].first - knots_[seg].first);
  }

  const std::vector<Knot>& knots() const { return knots_; }

  nlohmann::json to_json() const {
    auto j = nlohmann::json::array();
    for (const auto& [x, y] : knots_) j.push_back({x, y});
    return j;
  }

  static PiecewiseLinearMap from_json(const nlohmann::json& j) {
    std::vector<Knot> knots;
    try {
      for (const auto& k : j) knots.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("knot list must be [[input, output], ...]: ") + e.what());
    }
    return PiecewiseLinearMap(std::move(knots));
  }

 private:
  std::size_t segment(double x) const {
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                                     [](double v, const Knot& k) { return v < k.first; });
    const auto idx = static_cast<std::size_t>(it - knots_.begin());
    return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, knots_.size() - 2);
  }

  std::vector<Knot> knots_;
};

/// HU to density (kg/m^3). Defaults, to be validated against the CT calibration literature.
inline PiecewiseLinearMap default_density_map() {
  return PiecewiseLinearMap({{-1000.0, 1.2}, {0.0, 1000.0}, {1000.0, 1590.0}, {2000.0, 2100.0}});
}

/// HU to speed of sound (m/s). Same caveat as the density defaults.
inline PiecewiseLinearMap default_speed_map() {
  return PiecewiseLinearMap({{-1000.0, 343.0}, {0.0, 1540.0}, {1000.0, 2600.0}, {2000.0, 3500.0}});
}

/**
 * CT volume to impedance: Z = rho(HU) * c(HU), reported in MRayl.
 * Throws NumericError if either map yields a non-positive value at any voxel.
 */
inline VolumeGrid ct_to_impedance(const VolumeGrid& hu, const PiecewiseLinearMap& density_map,
                                  const PiecewiseLinearMap& speed_map) {
  if (hu.kind() != VolumeKind::Hu) throw ConfigError("ct_to_impedance expects an HU volume");
  std::vector<double> z(hu.size());
  for (std::size_t i = 0; i < hu.size(); ++i) {
    const double h = hu.data()[i];
    const double rho = density_map(h);
    const double c = speed_map(h);
    if (!(rho > 0.0) || !(c > 0.0))
      throw NumericError("calibration maps give non-positive density or speed at HU " +
                         std::to_string(h));
    z[i] = rho * c / kRaylPerMrayl;
  }
  return hu.with_data(std::move(z), VolumeKind::ImpedanceMrayl);
}

struct TissueReference {
  std::string name;
  double intensity = 0.0;  ///< normalized T1 intensity in [0, 1]
  double impedance = 0.0;  ///< MRayl
};

/// Paired (intensity, impedance) reference points used to fit the MRI mapping.
struct TissueReferenceTable {
  std::vector<TissueReference> rows;

  void validate() const {
    for (const auto& r : rows) {
      if (!(r.impedance > 0.0) || !std::isfinite(r.impedance))
        throw ConfigError("tissue '" + r.name + "' has a non-positive impedance");
      if (!(r.intensity >= 0.0 && r.intensity <= 1.0))
        throw ConfigError("tissue '" + r.name + "' intensity is outside [0, 1]");
    }
  }

  nlohmann::json to_json() const {
    auto j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"name", r.name}, {"intensity", r.intensity}, {"impedance_mrayl", r.impedance}});
    return j;
  }

  static TissueReferenceTable from_json(const nlohmann::json& j) {
    TissueReferenceTable t;
    try {
      for (const auto& r : j)
        t.rows.push_back({r.value("name", std::string("tissue")), r.at("intensity").get<double>(),
                          r.at("impedance_mrayl").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed tissue_table: ") + e.what());
    }
    t.validate();
    return t;
  }
};

/// Reference points spanning background, CSF, gray and white matter (normalized T1).
inline TissueReferenceTable default_tissue_table() {
  return {{{"background", 0.0, 0.0004},
           {"csf", 0.2, 1.48},
           {"gray_matter", 0.5, 1.55},
           {"white_matter", 0.9, 1.62}}};
}

struct FitConfig {
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t epochs = 20000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  double tolerance = 0.05;  ///< mean relative error bound on the training rows
  double z_min = 1e-4;      ///< MRayl
  double z_max = 10.0;      ///< MRayl

  static FitConfig from_json(const nlohmann::json& j) {
    FitConfig c;
    try {
      if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
      c.epochs = j.value("epochs", c.epochs);
      c.learning_rate = j.value("learning_rate", c.learning_rate);
      c.seed = j.value("seed", c.seed);
      c.tolerance = j.value("tolerance", c.tolerance);
      c.z_min = j.value("z_min", c.z_min);
      c.z_max = j.value("z_max", c.z_max);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed fit config: ") + e.what());
    }
    if (!(c.z_min > 0.0) || !(c.z_max > c.z_min))
      throw ConfigError("fit config needs 0 < z_min < z_max");
    if (!(c.learning_rate > 0.0) || c.epochs == 0) throw ConfigError("invalid fit schedule");
    return c;
  }

  nlohmann::json to_json() const {
    return {{"hidden", hidden},       {"epochs", epochs},       {"learning_rate", learning_rate},
            {"seed", seed},           {"tolerance", tolerance}, {"z_min", z_min},
            {"z_max", z_max}};
  }
};

enum class Activation { Tanh, Identity };

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  ///< row-major outputs x inputs
  std::vector<double> bias;
  Activation activation = Activation::Tanh;
};

/**
 * Small feed-forward network mapping one normalized MRI intensity to an
 * impedance in MRayl. With OutputTransform::Exp the network regresses
 * log-impedance, which keeps outputs positive and weighs rows by relative
 * error. Predictions are clamped to [z_min, z_max].
 */
struct IntensityImpedanceModel {
  enum class OutputTransform { Linear, Exp };

  double input_mean = 0.0;
  double input_scale = 1.0;
  std::vector<DenseLayer> layers;
  OutputTransform output = OutputTransform::Exp;
  double z_min = 1e-4;
  double z_max = 10.0;

  double raw(double intensity) const {
    std::vector<double> a{(intensity - input_mean) / input_scale}, next;
    for (const auto& layer : layers) {
      next.assign(layer.outputs, 0.0);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < layer.inputs; ++i) s += layer.weights[o * layer.inputs + i] * a[i];
        next[o] = layer.activation == Activation::Tanh ? std::tanh(s) : s;
      }
      a.swap(next);
    }
    return output == OutputTransform::Exp ? std::exp(a[0]) : a[0];
  }

  double operator()(double intensity) const {
    const double z = raw(intensity);
    if (std::isnan(z)) return z_min;
    return std::clamp(z, z_min, z_max);
  }

  void validate() const {
    if (!(z_min > 0.0) || !(z_max >= z_min)) throw ConfigError("model needs 0 < z_min <= z_max");
    if (!(input_scale != 0.0) || !std::isfinite(input_scale))
      throw ConfigError("model input scale must be finite and non-zero");
    if (layers.empty()) throw ConfigError("model has no layers");
    std::size_t width = 1;
    for (const auto& l : layers) {
      if (l.inputs != width || l.weights.size() != l.inputs * l.outputs ||
          l.bias.size() != l.outputs)
        throw ConfigError("model layer shapes are inconsistent");
      width = l.outputs;
    }
    if (width != 1) throw ConfigError("model must end in a single output");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["input_normalization"] = {{"mean", input_mean}, {"scale", input_scale}};
    j["output_transform"] = output == OutputTransform::Exp ? "exp" : "linear";
    j["output_range_mrayl"] = {z_min, z_max};
    auto arr = nlohmann::json::array();
    for (const auto& l : layers) {
      auto w = nlohmann::json::array();
      for (std::size_t o = 0; o < l.outputs; ++o)
        w.push_back(std::vector<double>(l.weights.begin() + static_cast<std::ptrdiff_t>(o * l.inputs),
                                        l.weights.begin() + static_cast<std::ptrdiff_t>((o + 1) * l.inputs)));
      arr.push_back({{"weights", w},
                     {"bias", l.bias},
                     {"activation", l.activation == Activation::Tanh ? "tanh" : "identity"}});
    }
    j["layers"] = arr;
    return j;
  }

  static IntensityImpedanceModel from_json(const nlohmann::json& j) {
    IntensityImpedanceModel m;
    try {
      m.input_mean = j.at("input_normalization").at("mean").get<double>();
      m.input_scale = j.at("input_normalization").at("scale").get<double>();
      m.output = j.value("output_transform", std::string("exp")) == "exp" ? OutputTransform::Exp
                                                                          : OutputTransform::Linear;
      m.z_min = j.at("output_range_mrayl").at(0).get<double>();
      m.z_max = j.at("output_range_mrayl").at(1).get<double>();
      for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        const auto rows = lj.at("weights").get<std::vector<std::vector<double>>>();
        l.outputs = rows.size();
        l.inputs = rows.empty() ? 0 : rows.front().size();
        for (const auto& r : rows) {
          if (r.size() != l.inputs) throw ConfigError("ragged weight matrix");
          l.weights.insert(l.weights.end(), r.begin(), r.end());
        }
        l.bias = lj.at("bias").get<std::vector<double>>();
        l.activation = lj.value("activation", std::string("tanh")) == "tanh" ? Activation::Tanh
                                                                             : Activation::Identity;
        m.layers.push_back(std::move(l));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed impedance model: ") + e.what());
    }
    m.validate();
    return m;
  }
};

struct FitResult {
  IntensityImpedanceModel model;
  double final_loss = 0.0;
  double mean_relative_error = 0.0;
  double max_relative_error = 0.0;
  std::size_t epochs_run = 0;
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/**
 * Fits an IntensityImpedanceModel to the reference table by full-batch
 * gradient descent (Adam moment estimates) on squared log-impedance error.
 * Deterministic for a fixed seed. Throws ConfigError on unusable tables and
 * NumericError if the mean relative error stays above cfg.tolerance.
 */
inline FitResult fit_intensity_model(const TissueReferenceTable& table, const FitConfig& cfg) {
  table.validate();
  const auto& rows = table.rows;
  if (rows.size() < 4) throw ConfigError("fitting needs at least four reference rows");
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      if (rows[a].intensity == rows[b].intensity && rows[a].impedance != rows[b].impedance)
        throw ConfigError("ill-posed reference data: intensity " + std::to_string(rows[a].intensity) +
                          " maps to two different impedances");
  for (const auto& r : rows)
    if (r.impedance < cfg.z_min || r.impedance > cfg.z_max)
      throw ConfigError("reference impedance of '" + r.name + "' lies outside the output range");

  const std::size_t n = rows.size();
  double mean = 0.0;
  for (const auto& r : rows) mean += r.intensity;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& r : rows) var += (r.intensity - mean) * (r.intensity - mean);
  const double scale = std::sqrt(var / static_cast<double>(n));
  if (!(scale > 0.0)) throw ConfigError("reference intensities must not all be equal");

  IntensityImpedanceModel model;
  model.input_mean = mean;
  model.input_scale = scale;
  model.z_min = cfg.z_min;
  model.z_max = cfg.z_max;
  model.output = IntensityImpedanceModel::OutputTransform::Exp;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> widths{1};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    layer.inputs = widths[l];
    layer.outputs = widths[l + 1];
    layer.activation = l + 2 == widths.size() ? Activation::Identity : Activation::Tanh;
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    layer.weights.resize(layer.inputs * layer.outputs);
    for (auto& w : layer.weights) w = (2.0 * detail::unit_uniform(rng) - 1.0) * limit;
    layer.bias.assign(layer.outputs, 0.0);
    model.layers.push_back(std::move(layer));
  }

  std::vector<double> xs(n), targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = (rows[i].intensity - mean) / scale;
    targets[i] = std::log(rows[i].impedance);
  }

  // Flat parameter views for the Adam update.
  std::vector<std::vector<double>> gw(model.layers.size()), gb(model.layers.size());
  std::vector<std::vector<double>> mw(model.layers.size()), vw(model.layers.size());
  std::vector<std::vector<double>> mb(model.layers.size()), vb(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    mw[l].assign(model.layers[l].weights.size(), 0.0);
    vw[l] = mw[l];
    mb[l].assign(model.layers[l].bias.size(), 0.0);
    vb[l] = mb[l];
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-12;
  const std::size_t depth = model.layers.size();
  std::vector<std::vector<double>> act(depth + 1);
  std::vector<double> delta, prev_delta;

  auto relative_errors = [&] {
    double sum = 0.0, worst = 0.0;
    for (const auto& r : rows) {
      const double e = std::abs(model(r.intensity) - r.impedance) / r.impedance;
      sum += e;
      worst = std::max(worst, e);
    }
    return std::pair{sum / static_cast<double>(n), worst};
  };

  FitResult result;
  double loss = 0.0;
  std::size_t epoch = 0;
  for (; epoch < cfg.epochs; ++epoch) {
    for (std::size_t l = 0; l < depth; ++l) {
      gw[l].assign(model.layers[l].weights.size(), 0.0);
      gb[l].assign(model.layers[l].bias.size(), 0.0);
    }
    loss = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      act[0] = {xs[s]};
      for (std::size_t l = 0; l < depth; ++l) {
        const auto& layer = model.layers[l];
        act[l + 1].assign(layer.outputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
          double z = layer.bias[o];
          for (std::size_t i = 0; i < layer.inputs; ++i)
            z += layer.weights[o * layer.inputs + i] * act[l][i];
          act[l + 1][o] = layer.activation == Activation::Tanh ? std::tanh(z) : z;
        }
      }
      const double err = act[depth][0] - targets[s];
      loss += err * err / static_cast<double>(n);
      delta = {2.0 * err / static_cast<double>(n)};
      for (std::size_t l = depth; l-- > 0;) {
        const auto& layer = model.layers[l];
        if (layer.activation == Activation::Tanh)
          for (std::size_t o = 0; o < layer.outputs; ++o)
            delta[o] *= 1.0 - act[l + 1][o] * act[l + 1][o];
        prev_delta.assign(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
          gb[l][o] += delta[o];
          for (std::size_t i = 0; i < layer.inputs; ++i) {
            gw[l][o * layer.inputs + i] += delta[o] * act[l][i];
            prev_delta[i] += layer.weights[o * layer.inputs + i] * delta[o];
          }
        }
        delta.swap(prev_delta);
      }
    }

    if ((epoch + 1) % 500 == 0 && relative_errors().second < 0.1 * cfg.tolerance) break;

    const double t = static_cast<double>(epoch + 1);
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    auto adam = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    };
    for (std::size_t l = 0; l < depth; ++l) {
      adam(model.layers[l].weights, gw[l], mw[l], vw[l]);
      adam(model.layers[l].bias, gb[l], mb[l], vb[l]);
    }
  }

  const auto [mean_err, max_err] = relative_errors();
  result.model = std::move(model);
  result.final_loss = loss;
  result.mean_relative_error = mean_err;
  result.max_relative_error = max_err;
  result.epochs_run = epoch;
  if (!(mean_err < cfg.tolerance))
    throw NumericError("impedance model did not converge within " + std::to_string(cfg.epochs) +
                       " epochs: final loss " + std::to_string(loss) + ", mean relative error " +
                       std::to_string(mean_err));
  return result;
}

struct MriMappingOptions {
  /// Rescale intensities so the 1st/99th percentiles land on 0 and 1 before evaluation.
  bool percentile_normalize = true;
  double low_percentile = 1.0;
  double high_percentile = 99.0;
};

/// Value at percentile q (0-100) by linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

inline VolumeGrid mri_to_impedance(const VolumeGrid& mri, const IntensityImpedanceModel& model,
                                   const MriMappingOptions& options = {}) {
  if (mri.kind() != VolumeKind::MriIntensity)
    throw ConfigError("mri_to_impedance expects an MRI intensity volume");
  double lo = 0.0, span = 1.0;
  if (options.percentile_normalize) {
    lo = percentile(mri.data(), options.low_percentile);
    span = percentile(mri.data(), options.high_percentile) - lo;
    if (!(span > 0.0))
      throw NumericError("MRI volume has no intensity spread between the normalization percentiles");
  }
  std::vector<double> z(mri.size());
  for (std::size_t i = 0; i < mri.size(); ++i) z[i] = model((mri.data()[i] - lo) / span);
  return mri.with_data(std::move(z), VolumeKind::ImpedanceMrayl);
}

/// Calibration file: density_knots, speed_knots, tissue_table and fit sections, all optional.
struct CalibrationConfig {
  PiecewiseLinearMap density = default_density_map();
  PiecewiseLinearMap speed = default_speed_map();
  TissueReferenceTable tissue_table = default_tissue_table();
  FitConfig fit;

  static CalibrationConfig from_json(const nlohmann::json& j) {
    CalibrationConfig c;
    if (j.contains("density_knots")) c.density = PiecewiseLinearMap::from_json(j.at("density_knots"));
    if (j.contains("speed_knots")) c.speed = PiecewiseLinearMap::from_json(j.at("speed_knots"));
    if (j.contains("tissue_table")) c.tissue_table = TissueReferenceTable::from_json(j.at("tissue_table"));
    if (j.contains("fit")) c.fit = FitConfig::from_json(j.at("fit"));
    return c;
  }

  nlohmann::json to_json() const {
    return {{"density_knots", density.to_json()},
            {"speed_knots", speed.to_json()},
            {"tissue_table", tissue_table.to_json()},
            {"fit", fit.to_json()}};
  }
};

}  // namespace sonoray

#endif /* SONORAY_IMPEDANCE_MAP_HPP */
