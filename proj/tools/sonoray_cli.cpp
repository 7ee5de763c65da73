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

// sonoray command-line front end. Every subcommand writes its outputs and a
// manifest.json under --out. Exit codes: 0 ok, 1 config, 2 IO, 3 numeric.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sonoray.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sonoray;

namespace {

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_option("--seed", c.seed, "Seed for every random choice of the run");
  sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
}

fs::path prepare_out(const Common& c) {
  const fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
  return out;
}

VolumeGrid load_volume_arg(const std::string& path, const std::string& kind) {
  std::optional<VolumeKind> override_kind;
  if (!kind.empty()) {
    try {
      override_kind = volume_kind_from_string(kind);
    } catch (const FormatError&) {
      throw ConfigError("unknown --kind '" + kind + "' (HU, MRI_INTENSITY or IMPEDANCE_MRAYL)");
    }
  }
  return load_volume(path, volume_format_from_path(path), override_kind);
}

CalibrationConfig load_calibration(const std::string& path) {
  if (path.empty()) return {};
  return CalibrationConfig::from_json(read_json(path, true));
}

IntensityImpedanceModel resolve_model(const std::string& model_path, const CalibrationConfig& cal,
                                      std::uint64_t seed, json& record) {
  if (!model_path.empty()) {
    record["model"] = model_path;
    return IntensityImpedanceModel::from_json(read_json(model_path, true));
  }
  auto fit = cal.fit;
  fit.seed = seed;
  record["model"] = "fitted";
  record["fit"] = fit.to_json();
  return fit_intensity_model(cal.tissue_table, fit).model;
}

/// Brings any supported volume kind to impedance (MRayl).
VolumeGrid to_impedance(const VolumeGrid& v, const CalibrationConfig& cal, const std::string& model_path,
                        std::uint64_t seed, json& record) {
  record["input_kind"] = std::string(to_string(v.kind()));
  switch (v.kind()) {
    case VolumeKind::ImpedanceMrayl:
      return v;
    case VolumeKind::Hu:
      record["mapping"] = "ct";
      return ct_to_impedance(v, cal.density, cal.speed);
    case VolumeKind::MriIntensity:
      record["mapping"] = "mri";
      return mri_to_impedance(v, resolve_model(model_path, cal, seed, record));
  }
  throw ConfigError("unsupported volume kind");
}

FanConfig load_fan(const std::string& path) { return fan_from_json(read_json(path, true)); }

TransducerPose load_pose(const std::string& path) { return pose_from_json(read_json(path, true)); }

void write_image(const fs::path& dir, const std::string& stem, const Image2D& img, const std::string& format,
                 const json& sidecar) {
  if (format == "npy" || format == "both") write_npy(dir / (stem + ".npy"), img);
  if (format == "pgm" || format == "both") write_pgm16(dir / (stem + ".pgm"), img);
  json s = sidecar;
  s["rows"] = img.rows();
  s["cols"] = img.cols();
  s["npy_dtype"] = "float32";
  s["pgm"] = "16-bit, values clamped to [0, 1]";
  write_json(dir / (stem + ".json"), s);
}

void finish(const fs::path& out, const RunManifest& m) { write_json(out / "manifest.json", m.to_json()); }

std::size_t auto_width(const FanConfig& fan, std::size_t height) {
  return std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(static_cast<double>(height) * 2.0 * fan_half_width(fan) / fan.depth_mm)));
}

SamplingOptions sampling_from(const std::string& interp, double background) {
  SamplingOptions s;
  if (interp == "nearest")
    s.interpolation = Interpolation::Nearest;
  else if (interp != "trilinear")
    throw ConfigError("--interp must be trilinear or nearest");
  s.background = background;
  return s;
}

json pose_vector_json(const PoseVector& p) { return std::vector<double>(p.begin(), p.end()); }

// ---------------------------------------------------------------- render

struct RenderArgs {
  Common common;
  std::string volume, kind, pose, fan, artifacts, calibration, model, format = "both", interp = "trilinear";
  std::string normalize = "max";
  std::size_t height = 400, width = 0;
  double attenuation = 1.0, background = kDefaultBackgroundImpedance;
  bool no_cartesian = false;
};

int cmd_render(const RenderArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "render";
  m.seed = a.common.seed;
  StageTimer timer(m);
  if (a.format != "npy" && a.format != "pgm" && a.format != "both")
    throw ConfigError("--format must be npy, pgm or both");
  const auto fan = load_fan(a.fan);
  const auto pose = load_pose(a.pose);
  RenderOptions ro;
  if (!a.artifacts.empty()) ro.artifacts = ArtifactConfig::from_json(read_json(a.artifacts, true));
  ro.artifacts.seed = a.common.seed;
  ro.sampling = sampling_from(a.interp, a.background);
  ro.attenuation = a.attenuation;
  if (!(a.attenuation > 0.0 && a.attenuation <= 1.0)) throw ConfigError("--attenuation must lie in (0, 1]");
  if (a.normalize == "p99")
    ro.normalize_mode = NormalizeMode::Percentile99;
  else if (a.normalize != "max")
    throw ConfigError("--normalize must be max or p99");
  const std::size_t width = a.width ? a.width : auto_width(fan, a.height);
  if (!a.no_cartesian) ro.cartesian = std::pair{a.height, width};
  ro.threads = a.common.threads;
  const auto cal = load_calibration(a.calibration);
  const auto volume = load_volume_arg(a.volume, a.kind);
  timer.lap("load");

  json mapping;
  const auto z = to_impedance(volume, cal, a.model, a.common.seed, mapping);
  timer.lap("mapping");
  const auto img = render(z, pose, fan, ro);
  timer.lap("render");
  m.diagnostics["divergent_rays"] = img.divergent_rays;
  if (img.divergent_rays > 0)
    std::cerr << "warning: " << img.divergent_rays << " of " << fan.n_rays
              << " rays have a divergent bounce series; their echoes may be negative\n";

  const json display = {{"normalize", a.normalize},
                        {"normalization_divisor", img.scale},
                        {"log_compression", false},
                        {"artifacts", ro.artifacts.to_json()}};
  write_npy(out / "echo.npy", img.raw, true);
  write_image(out, "polar", img.polar, a.format,
              {{"layout", "rays x depth samples"}, {"fan", fan_to_json(fan)}, {"display", display}});
  if (img.cartesian)
    write_image(out, "cartesian", *img.cartesian, a.format,
                {{"layout", "height x width, apex at top center"},
                 {"extent_mm", {{"x", {-fan_half_width(fan), fan_half_width(fan)}}, {"depth", {0.0, fan.depth_mm}}}},
                 {"display", display}});
  timer.lap("write");

  m.config = {{"volume", a.volume},
              {"kind_override", a.kind},
              {"mapping", mapping},
              {"calibration", a.calibration.empty() ? json("default") : json(a.calibration)},
              {"pose", pose_to_json(pose)},
              {"fan", fan_to_json(fan)},
              {"artifacts", ro.artifacts.to_json()},
              {"interpolation", a.interp},
              {"background_mrayl", a.background},
              {"attenuation", a.attenuation},
              {"normalize", a.normalize},
              {"cartesian", a.no_cartesian ? json(nullptr) : json({a.height, width})},
              {"format", a.format},
              {"threads", a.common.threads}};
  finish(out, m);
  return 0;
}

// ---------------------------------------------------------------- mapping

struct MapArgs {
  Common common;
  std::string volume, kind, calibration, model, out_format = "raw_json";
  bool no_percentile = false;
};

fs::path volume_out_path(const fs::path& out, const std::string& stem, const std::string& fmt) {
  if (fmt == "raw_json") return out / (stem + ".json");
  if (fmt == "nifti") return out / (stem + ".nii");
  throw ConfigError("--out-format must be raw_json or nifti");
}

int cmd_ct_map(const MapArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "ct-map";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const auto target = volume_out_path(out, "impedance", a.out_format);
  const auto cal = load_calibration(a.calibration);
  const auto hu = load_volume_arg(a.volume, a.kind);
  timer.lap("load");
  const auto z = ct_to_impedance(hu, cal.density, cal.speed);
  timer.lap("mapping");
  save_volume(z, target, volume_format_from_path(target));
  timer.lap("write");
  m.config = {{"volume", a.volume},
              {"density_knots", cal.density.to_json()},
              {"speed_knots", cal.speed.to_json()},
              {"output", target.filename().string()}};
  finish(out, m);
  return 0;
}

int cmd_mri_map(const MapArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "mri-map";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const auto target = volume_out_path(out, "impedance", a.out_format);
  const auto cal = load_calibration(a.calibration);
  const auto mri = load_volume_arg(a.volume, a.kind);
  timer.lap("load");
  json record;
  const auto model = resolve_model(a.model, cal, a.common.seed, record);
  timer.lap("model");
  MriMappingOptions opt;
  opt.percentile_normalize = !a.no_percentile;
  const auto z = mri_to_impedance(mri, model, opt);
  timer.lap("mapping");
  save_volume(z, target, volume_format_from_path(target));
  write_json(out / "model.json", model.to_json());
  timer.lap("write");
  m.config = {{"volume", a.volume}, {"model", record}, {"percentile_normalize", opt.percentile_normalize},
              {"output", target.filename().string()}};
  finish(out, m);
  return 0;
}

int cmd_fit_map(const MapArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "fit-map";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const auto cal = load_calibration(a.calibration);
  auto fit = cal.fit;
  fit.seed = a.common.seed;
  const auto res = fit_intensity_model(cal.tissue_table, fit);
  timer.lap("fit");
  write_json(out / "model.json", res.model.to_json());
  json rows = json::array();
  for (const auto& r : cal.tissue_table.rows)
    rows.push_back({{"name", r.name}, {"intensity", r.intensity}, {"target_mrayl", r.impedance},
                    {"predicted_mrayl", res.model(r.intensity)}});
  write_json(out / "fit_report.json", {{"final_loss", res.final_loss},
                                       {"mean_relative_error", res.mean_relative_error},
                                       {"max_relative_error", res.max_relative_error},
                                       {"epochs_run", res.epochs_run},
                                       {"rows", rows}});
  timer.lap("write");
  m.config = {{"tissue_table", cal.tissue_table.to_json()}, {"fit", fit.to_json()}};
  finish(out, m);
  std::cout << "fit converged: mean relative error " << res.mean_relative_error << " after " << res.epochs_run
            << " epochs\n";
  return 0;
}

// ---------------------------------------------------------------- metrics / ablation

struct MetricArgs {
  Common common;
  std::string reference, image;
  SsimParams ssim;
};

int cmd_metrics(const MetricArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "metrics";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const auto ref = read_image(a.reference);
  const auto img = read_image(a.image);
  timer.lap("load");
  const auto [report, aligned] = compare_images(ref, img, a.ssim);
  timer.lap("metrics");
  Image2D diff(ref.rows(), ref.cols());
  for (std::size_t i = 0; i < diff.size(); ++i) diff.data()[i] = ref.data()[i] - aligned.data()[i];
  write_npy(out / "aligned.npy", aligned);
  write_npy(out / "difference.npy", diff);
  write_json(out / "metrics.json", {{"metrics", report.to_json()}, {"ssim_params", a.ssim.to_json()}});
  timer.lap("write");
  m.config = {{"reference", a.reference}, {"image", a.image}, {"ssim", a.ssim.to_json()}};
  finish(out, m);
  std::cout << report.to_json().dump() << '\n';
  return 0;
}

struct AblateArgs {
  Common common;
  std::string volume, kind, pose, fan, artifacts, calibration, model, reference;
  bool polar = false;
  std::size_t height = 256, width = 0;
  double intensity_background = 0.0;
  SsimParams ssim;
};

int cmd_ablate(const AblateArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "ablate";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const auto fan = load_fan(a.fan);
  const auto pose = load_pose(a.pose);
  AblationOptions opt;
  if (!a.artifacts.empty()) {
    opt.artifacts = ArtifactConfig::from_json(read_json(a.artifacts, true));
  } else {
    opt.artifacts.speckle_enabled = true;
    opt.artifacts.blur_enabled = true;
    opt.artifacts.blur_sigma0 = 0.5;
    opt.artifacts.blur_slope = 0.01;
  }
  opt.artifacts.seed = a.common.seed;
  opt.cartesian = !a.polar;
  opt.intensity_background = a.intensity_background;
  opt.ssim = a.ssim;
  opt.threads = a.common.threads;
  const auto cal = load_calibration(a.calibration);
  const auto intensity = load_volume_arg(a.volume, a.kind);
  if (intensity.kind() == VolumeKind::ImpedanceMrayl)
    throw ConfigError("ablation needs an intensity (MRI or HU) volume so the mapping stage can be removed");
  timer.lap("load");
  json mapping;
  const auto z = to_impedance(intensity, cal, a.model, a.common.seed, mapping);
  timer.lap("mapping");

  const std::size_t width = a.width ? a.width : auto_width(fan, a.height);
  Image2D reference;
  const std::set<Stage> full{Stage::Mapping, Stage::Propagation, Stage::Artifacts};
  if (a.reference.empty()) {
    reference = render_variant(intensity, z, pose, fan, full, opt, a.height, width);
  } else {
    reference = read_image(a.reference);
  }
  const auto rows = ablation_report(intensity, z, pose, fan, reference, ablation_configurations(), opt);
  timer.lap("ablation");

  json table = json::array();
  for (const auto& row : rows) {
    const auto label = stage_label(row.stages);
    table.push_back({{"label", label},
                     {"sampling", true},
                     {"mapping", row.stages.contains(Stage::Mapping)},
                     {"propagation", row.stages.contains(Stage::Propagation)},
                     {"artifacts", row.stages.contains(Stage::Artifacts)},
                     {"metrics", row.report.to_json()}});
    write_npy(out / ("image_" + label + ".npy"), row.image);
    write_npy(out / ("difference_" + label + ".npy"), row.difference);
  }
  write_json(out / "ablation.json", {{"space", a.polar ? "polar" : "cartesian"},
                                     {"reference", a.reference.empty() ? "self (full pipeline)" : a.reference},
                                     {"ssim_params", a.ssim.to_json()},
                                     {"rows", table}});
  timer.lap("write");

  std::cout << std::left << std::setw(42) << "configuration" << std::right << std::setw(11) << "MSE"
            << std::setw(9) << "SSIM" << std::setw(9) << "NCC" << std::setw(9) << "MAE" << '\n';
  for (const auto& row : rows)
    std::cout << std::left << std::setw(42) << stage_label(row.stages) << std::right << std::fixed
              << std::setprecision(6) << std::setw(11) << row.report.mse << std::setprecision(4) << std::setw(9)
              << row.report.ssim << std::setw(9) << row.report.ncc << std::setw(9) << row.report.mae << '\n';

  m.config = {{"volume", a.volume},
              {"mapping", mapping},
              {"pose", pose_to_json(pose)},
              {"fan", fan_to_json(fan)},
              {"artifacts", opt.artifacts.to_json()},
              {"space", a.polar ? "polar" : "cartesian"},
              {"raster", {a.height, width}},
              {"intensity_background", a.intensity_background},
              {"reference", a.reference},
              {"ssim", a.ssim.to_json()}};
  finish(out, m);
  return 0;
}

// ---------------------------------------------------------------- register

struct RegisterArgs {
  Common common;
  std::string volume, kind, calibration, model, fixed, init_pose, fan, loss = "mse", out_pose;
  std::size_t max_iters = 200;
  double perturb_mm = 2.0, perturb_deg = 2.0, step_mm = 1.0, rotation_scale = 30.0;
};

/// Angle (rad) of the relative rotation between two pose vectors.
double rotation_error(const PoseVector& a, const PoseVector& b) {
  const Mat3 ra = exp_so3({a[3], a[4], a[5]}), rb = exp_so3({b[3], b[4], b[5]});
  return norm(log_so3(ra.transposed() * rb));
}

double translation_error(const PoseVector& a, const PoseVector& b) {
  return norm(Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]});
}

int cmd_register(const RegisterArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "register";
  m.seed = a.common.seed;
  StageTimer timer(m);
  RegistrationProblem prob;
  prob.fan = load_fan(a.fan);
  const auto init = pose_to_vector(load_pose(a.init_pose));
  if (a.loss == "ncc")
    prob.loss = RegistrationLoss::Ncc;
  else if (a.loss != "mse")
    throw ConfigError("--loss must be mse or ncc");
  prob.optimizer.max_iterations = a.max_iters;
  prob.optimizer.initial_step_mm = a.step_mm;
  prob.optimizer.rotation_scale_mm = a.rotation_scale;
  prob.threads = a.common.threads;
  const auto cal = load_calibration(a.calibration);
  const auto volume = load_volume_arg(a.volume, a.kind);
  json mapping;
  const auto z = to_impedance(volume, cal, a.model, a.common.seed, mapping);
  timer.lap("load");

  std::optional<PoseVector> truth;
  if (!a.fixed.empty()) {
    prob.fixed = read_image(a.fixed);
    prob.initial_pose = init;
  } else {
    // Self-registration demo: the fixed image is rendered at --init-pose and
    // the search starts from a seeded perturbation of it.
    truth = init;
    prob.fixed = render_echo_image(z, pose_from_vector(init), prob.fan, prob.sampling, 1.0, prob.threads);
    std::mt19937_64 rng(a.common.seed);
    std::normal_distribution<double> n01;
    Vec3 dt{n01(rng), n01(rng), n01(rng)}, axis{n01(rng), n01(rng), n01(rng)};
    dt = normalized(dt) * a.perturb_mm;
    axis = normalized(axis) * (a.perturb_deg * std::numbers::pi / 180.0);
    const Mat3 r = exp_so3(axis) * exp_so3({init[3], init[4], init[5]});
    const Vec3 w = log_so3(r);
    prob.initial_pose = {init[0] + dt.x, init[1] + dt.y, init[2] + dt.z, w.x, w.y, w.z};
  }
  timer.lap("setup");
  const auto res = register_slice(z, prob);
  timer.lap("optimize");

  json trace = json::array();
  for (const auto& s : res.trace)
    trace.push_back({{"iteration", s.iteration}, {"loss", s.loss}, {"pose_vector", pose_vector_json(s.pose)}});
  json report = {{"status", res.status},
                 {"converged", res.converged},
                 {"iterations", res.trace.size() - 1},
                 {"final_loss", res.loss},
                 {"initial_pose_vector", pose_vector_json(prob.initial_pose)},
                 {"final_pose_vector", pose_vector_json(res.pose)},
                 {"trace", trace}};
  if (truth) {
    report["true_pose_vector"] = pose_vector_json(*truth);
    report["initial_error"] = {{"translation_mm", translation_error(prob.initial_pose, *truth)},
                               {"rotation_deg", rotation_error(prob.initial_pose, *truth) * 180.0 / std::numbers::pi}};
    report["final_error"] = {{"translation_mm", translation_error(res.pose, *truth)},
                             {"rotation_deg", rotation_error(res.pose, *truth) * 180.0 / std::numbers::pi}};
  }
  write_json(out / "registration.json", report);
  write_json(a.out_pose.empty() ? out / "pose.json" : fs::path(a.out_pose), pose_to_json(pose_from_vector(res.pose)));
  timer.lap("write");
  std::cout << "status " << res.status << " after " << res.trace.size() - 1 << " iterations, loss " << res.loss
            << '\n';
  if (truth)
    std::cout << "final error " << report["final_error"]["translation_mm"].get<double>() << " mm, "
              << report["final_error"]["rotation_deg"].get<double>() << " deg\n";

  m.config = {{"volume", a.volume},
              {"mapping", mapping},
              {"fan", fan_to_json(prob.fan)},
              {"init_pose", pose_vector_json(init)},
              {"fixed", a.fixed.empty() ? json("self-registration demo") : json(a.fixed)},
              {"perturbation", {{"mm", a.perturb_mm}, {"deg", a.perturb_deg}}},
              {"loss", a.loss},
              {"optimizer",
               {{"max_iterations", prob.optimizer.max_iterations},
                {"initial_step_mm", prob.optimizer.initial_step_mm},
                {"rotation_scale_mm", prob.optimizer.rotation_scale_mm},
                {"tolerance", prob.optimizer.tolerance}}}};
  finish(out, m);
  return res.status == "diverged" ? 3 : 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  Common common;
  std::vector<std::size_t> rays{64, 128, 256};
  std::vector<std::size_t> samples{32, 70, 100, 200};
  std::size_t iterations = 10;
  double depth_mm = 60.0;
};

/// Synthetic head-sized impedance phantom used by bench.
VolumeGrid bench_phantom(std::uint64_t seed) {
  const Dims dims{96, 96, 96};
  const Vec3 spacing{1.0, 1.0, 1.0};
  return blob_phantom(dims, spacing, 1.55, random_blobs(dims, spacing, 24, 0.25, seed));
}

int cmd_bench(const BenchArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "bench";
  m.seed = a.common.seed;
  StageTimer timer(m);
  if (a.iterations == 0) throw ConfigError("--iterations must be positive");
  const auto vol = bench_phantom(a.common.seed);
  const TransducerPose pose{{0.0, 0.0, -45.0}, {0, 0, 1}, {1, 0, 0}};
  timer.lap("phantom");
  const unsigned threads = a.common.threads ? a.common.threads : 1;
  json grid = json::array();
  std::vector<std::vector<double>> table(a.samples.size(), std::vector<double>(a.rays.size()));
  for (std::size_t si = 0; si < a.samples.size(); ++si)
    for (std::size_t ri = 0; ri < a.rays.size(); ++ri) {
      FanConfig fan;
      fan.n_rays = a.rays[ri];
      fan.n_samples = a.samples[si];
      fan.depth_mm = a.depth_mm;
      RenderOptions ro;
      ro.threads = threads;
      double total = 0.0;
      for (std::size_t it = 0; it < a.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto img = render(vol, pose, fan, ro);
        total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (img.polar.empty()) throw NumericError("empty render");
      }
      table[si][ri] = total / static_cast<double>(a.iterations);
      grid.push_back({{"rays", a.rays[ri]}, {"samples", a.samples[si]}, {"mean_seconds", table[si][ri]}});
    }
  timer.lap("bench");
  write_json(out / "bench.json", {{"iterations", a.iterations},
                                  {"threads", threads},
                                  {"depth_mm", a.depth_mm},
                                  {"hardware_threads", std::thread::hardware_concurrency()},
                                  {"grid", grid}});
  std::cout << "mean render time (s) over " << a.iterations << " iterations, " << threads << " thread(s)\n";
  std::cout << std::setw(8) << "samples";
  for (auto r : a.rays) std::cout << std::setw(12) << (std::to_string(r) + " rays");
  std::cout << '\n';
  for (std::size_t si = 0; si < a.samples.size(); ++si) {
    std::cout << std::setw(8) << a.samples[si];
    for (std::size_t ri = 0; ri < a.rays.size(); ++ri)
      std::cout << std::setw(12) << std::fixed << std::setprecision(4) << table[si][ri];
    std::cout << '\n';
  }
  m.config = {{"rays", a.rays}, {"samples", a.samples}, {"iterations", a.iterations},
              {"depth_mm", a.depth_mm}, {"threads", threads}, {"phantom", "blobs 96^3 @ 1 mm"}};
  finish(out, m);
  return 0;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  Common common;
  std::string type = "sphere", name = "phantom.json";
  std::size_t size = 64;
  double spacing = 1.0, radius = 12.0, inside = 1.6, outside = 1.5;
  std::size_t blobs = 12;
};

int cmd_phantom(const PhantomArgs& a) {
  const auto out = prepare_out(a.common);
  RunManifest m;
  m.command = "phantom";
  m.seed = a.common.seed;
  StageTimer timer(m);
  const Dims dims{a.size, a.size, a.size};
  const Vec3 sp{a.spacing, a.spacing, a.spacing};
  if (a.size < 2 || !(a.spacing > 0.0)) throw ConfigError("phantom needs size >= 2 and positive spacing");
  std::optional<VolumeGrid> v;
  if (a.type == "sphere")
    v = sphere_phantom(dims, sp, {}, a.radius, a.inside, a.outside);
  else if (a.type == "homogeneous")
    v = homogeneous_phantom(dims, sp, a.outside);
  else if (a.type == "blobs")
    v = blob_phantom(dims, sp, a.outside, random_blobs(dims, sp, a.blobs, 0.2 * a.outside, a.common.seed));
  else if (a.type == "brain")
    v = brain_phantom(dims, sp);
  else
    throw ConfigError("--type must be sphere, homogeneous, blobs or brain");
  const auto target = out / a.name;
  save_volume(*v, target, volume_format_from_path(target));
  timer.lap("write");
  m.config = {{"type", a.type}, {"size", a.size}, {"spacing_mm", a.spacing}, {"radius_mm", a.radius},
              {"inside", a.inside}, {"outside", a.outside}, {"blobs", a.blobs}, {"output", a.name}};
  finish(out, m);
  return 0;
}

void add_ssim_options(CLI::App* sub, SsimParams& p) {
  sub->add_option("--ssim-window", p.window, "SSIM Gaussian window size (odd)");
  sub->add_option("--ssim-sigma", p.sigma, "SSIM Gaussian sigma");
  sub->add_option("--ssim-k1", p.k1);
  sub->add_option("--ssim-k2", p.k2);
  sub->add_option("--ssim-range", p.dynamic_range, "SSIM dynamic range L");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sonoray: differentiable B-mode ultrasound rendering from CT/MRI volumes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::function<int()> run;

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render a B-mode image from a volume");
  add_common(render, ra.common);
  render->add_option("--volume", ra.volume, "Volume (.json RAW_JSON header or .nii)")->required();
  render->add_option("--kind", ra.kind, "Override the stored volume kind");
  render->add_option("--pose", ra.pose, "Pose JSON")->required();
  render->add_option("--fan", ra.fan, "Fan JSON")->required();
  render->add_option("--artifacts", ra.artifacts, "Artifact JSON (speckle / blur)");
  render->add_option("--calibration", ra.calibration, "Calibration JSON for CT/MRI mapping");
  render->add_option("--model", ra.model, "Fitted MRI intensity model JSON");
  render->add_option("--format", ra.format, "Image output: npy, pgm or both");
  render->add_option("--interp", ra.interp, "trilinear or nearest");
  render->add_option("--normalize", ra.normalize, "max or p99");
  render->add_option("--attenuation", ra.attenuation, "Per-sample amplitude factor (1 = off)");
  render->add_option("--background", ra.background, "Impedance outside the volume (MRayl)");
  render->add_option("--height", ra.height, "Cartesian raster height");
  render->add_option("--width", ra.width, "Cartesian raster width (0 = keep aspect)");
  render->add_flag("--no-cartesian", ra.no_cartesian, "Skip scan conversion");
  render->callback([&] { run = [&] { return cmd_render(ra); }; });

  MapArgs ct, mri, fit;
  auto* ctc = app.add_subcommand("ct-map", "Map a CT (HU) volume to impedance");
  add_common(ctc, ct.common);
  ctc->add_option("--volume", ct.volume)->required();
  ctc->add_option("--kind", ct.kind);
  ctc->add_option("--calibration", ct.calibration);
  ctc->add_option("--out-format", ct.out_format, "raw_json or nifti");
  ctc->callback([&] { run = [&] { return cmd_ct_map(ct); }; });

  auto* fitc = app.add_subcommand("fit-map", "Fit the MRI intensity to impedance model");
  add_common(fitc, fit.common);
  fitc->add_option("--calibration", fit.calibration);
  fitc->callback([&] { run = [&] { return cmd_fit_map(fit); }; });

  auto* mric = app.add_subcommand("mri-map", "Map an MRI intensity volume to impedance");
  add_common(mric, mri.common);
  mric->add_option("--volume", mri.volume)->required();
  mric->add_option("--kind", mri.kind);
  mric->add_option("--calibration", mri.calibration);
  mric->add_option("--model", mri.model, "Model JSON; fitted from the calibration table when absent");
  mric->add_option("--out-format", mri.out_format, "raw_json or nifti");
  mric->add_flag("--no-percentile", mri.no_percentile, "Use intensities as-is instead of 1/99 percentile scaling");
  mric->callback([&] { run = [&] { return cmd_mri_map(mri); }; });

  MetricArgs ma;
  auto* met = app.add_subcommand("metrics", "Compare two images after phase alignment");
  add_common(met, ma.common);
  met->add_option("--reference", ma.reference, "Reference image (.npy or .pgm)")->required();
  met->add_option("--image", ma.image, "Image to compare (.npy or .pgm)")->required();
  add_ssim_options(met, ma.ssim);
  met->callback([&] { run = [&] { return cmd_metrics(ma); }; });

  AblateArgs ab;
  auto* abl = app.add_subcommand("ablate", "Stage ablation table against a reference image");
  add_common(abl, ab.common);
  abl->add_option("--volume", ab.volume, "MRI or CT volume")->required();
  abl->add_option("--kind", ab.kind);
  abl->add_option("--pose", ab.pose)->required();
  abl->add_option("--fan", ab.fan)->required();
  abl->add_option("--artifacts", ab.artifacts);
  abl->add_option("--calibration", ab.calibration);
  abl->add_option("--model", ab.model);
  abl->add_option("--reference", ab.reference, "Reference image; defaults to the full-pipeline render");
  abl->add_flag("--polar", ab.polar, "Compare polar images instead of scan-converted ones");
  abl->add_option("--height", ab.height);
  abl->add_option("--width", ab.width);
  abl->add_option("--intensity-background", ab.intensity_background, "Value outside the volume for unmapped rows");
  add_ssim_options(abl, ab.ssim);
  abl->callback([&] { run = [&] { return cmd_ablate(ab); }; });

  RegisterArgs rg;
  auto* reg = app.add_subcommand("register", "Rigid slice-to-volume registration");
  add_common(reg, rg.common);
  reg->add_option("--volume", rg.volume)->required();
  reg->add_option("--kind", rg.kind);
  reg->add_option("--calibration", rg.calibration);
  reg->add_option("--model", rg.model);
  reg->add_option("--fan", rg.fan)->required();
  reg->add_option("--init-pose", rg.init_pose, "Starting pose JSON")->required();
  reg->add_option("--fixed", rg.fixed, "Unnormalized echo image (.npy); omit for a self-registration demo");
  reg->add_option("--loss", rg.loss, "mse or ncc");
  reg->add_option("--max-iters", rg.max_iters);
  reg->add_option("--out-pose", rg.out_pose, "Where to write the final pose (default <out>/pose.json)");
  reg->add_option("--perturb-mm", rg.perturb_mm, "Demo translation offset");
  reg->add_option("--perturb-deg", rg.perturb_deg, "Demo rotation offset");
  reg->add_option("--step-mm", rg.step_mm, "Length of the first descent step");
  reg->add_option("--rotation-scale", rg.rotation_scale, "mm per radian when mixing translation and rotation");
  reg->callback([&] { run = [&] { return cmd_register(rg); }; });

  BenchArgs be;
  auto* ben = app.add_subcommand("bench", "Render timing over ray counts and depth samples");
  add_common(ben, be.common);
  ben->add_option("--rays", be.rays)->delimiter(',');
  ben->add_option("--samples", be.samples)->delimiter(',');
  ben->add_option("--iterations", be.iterations);
  ben->add_option("--depth", be.depth_mm);
  ben->callback([&] { run = [&] { return cmd_bench(be); }; });

  PhantomArgs ph;
  auto* pha = app.add_subcommand("phantom", "Write a synthetic test volume");
  add_common(pha, ph.common);
  pha->add_option("--type", ph.type, "sphere, homogeneous, blobs or brain");
  pha->add_option("--name", ph.name, "Output file name (.json or .nii)");
  pha->add_option("--size", ph.size);
  pha->add_option("--spacing", ph.spacing);
  pha->add_option("--radius", ph.radius);
  pha->add_option("--inside", ph.inside);
  pha->add_option("--outside", ph.outside);
  pha->add_option("--blobs", ph.blobs);
  pha->callback([&] { run = [&] { return cmd_phantom(ph); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    return run();
  } catch (const Error& e) {
    std::cerr << "sonoray: " << e.what() << '\n';
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "sonoray: configuration error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "sonoray: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sonoray: " << e.what() << '\n';
    return 3;
  }
}
