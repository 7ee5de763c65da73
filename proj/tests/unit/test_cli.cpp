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

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "catch_amalgamated.hpp"
#include "sonoray/image_io.hpp"
#include "test_support.hpp"

using namespace sonoray;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SONORAY_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(test::scratch_dir("cli_" + name)) {
    write_text(dir / "pose.json", R"({"position_mm": [0, 0, -20], "axis": [0, 0, 1], "in_plane": [1, 0, 0]})");
    write_text(dir / "fan.json", R"({"n_rays": 32, "n_samples": 48, "fan_angle_deg": 60, "depth_mm": 40})");
    write_text(dir / "artifacts.json",
               R"({"speckle_enabled": true, "blur_enabled": true, "blur_sigma0": 0.5, "blur_slope": 0.02})");
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

nlohmann::json without_timings(nlohmann::json m) {
  m.erase("timings");
  return m;
}

}  // namespace

TEST_CASE("homogeneous phantom renders a black image") {
  Workspace w("homog");
  REQUIRE(run_cli("phantom --type homogeneous --size 24 --spacing 2 --out " + w.p("") + " --name h.json") == 0);
  // Rays leave the grid, so the outside medium must match the phantom.
  REQUIRE(run_cli("render --volume " + w.p("h.json") + " --pose " + w.p("pose.json") + " --fan " + w.p("fan.json") +
                  " --background 1.5 --out " + w.p("out")) == 0);
  for (const char* f : {"echo.npy", "polar.npy", "cartesian.npy"}) {
    const auto img = read_npy(w.dir / "out" / f);
    for (double v : img.data()) CHECK(v == 0.0);
  }
  CHECK(fs::exists(w.dir / "out" / "polar.pgm"));
  const auto m = read_json(w.dir / "out" / "manifest.json");
  CHECK(m.at("command") == "render");
  CHECK(m.at("seed") == 0);
  CHECK(m.at("versions").contains("sonoray"));
  CHECK(m.at("timings").size() >= 3);
  CHECK(m.at("config").at("fan").at("n_rays") == 32);
}

TEST_CASE("sphere phantom renders a bright boundary") {
  Workspace w("sphere");
  REQUIRE(run_cli("phantom --type sphere --size 32 --spacing 1.5 --radius 10 --out " + w.p("") + " --name s.json") == 0);
  REQUIRE(run_cli("render --volume " + w.p("s.json") + " --pose " + w.p("pose.json") + " --fan " + w.p("fan.json") +
                  " --format npy --out " + w.p("out")) == 0);
  const auto polar = read_npy(w.dir / "out" / "polar.npy");
  double peak = 0.0;
  for (double v : polar.data()) peak = std::max(peak, v);
  CHECK(peak == 1.0f);
  // Central ray hits the near surface at depth 20 - 10 = 10 mm, sample 10 * 47 / 40.
  // The far surface echoes equally strongly, so only the near half is searched.
  std::size_t arg = 0;
  for (std::size_t k = 0; k < polar.cols() / 2; ++k)
    if (polar(16, k) > polar(16, arg)) arg = k;
  CHECK(std::abs(static_cast<double>(arg + 1) - 10.0 * 47.0 / 40.0) <= 2.0);
  CHECK(!fs::exists(w.dir / "out" / "polar.pgm"));
}

TEST_CASE("error conditions map onto exit codes") {
  Workspace w("errors");
  REQUIRE(run_cli("phantom --type sphere --size 16 --out " + w.p("") + " --name s.json") == 0);
  const std::string base = " --fan " + w.p("fan.json") + " --out " + w.p("out");
  CHECK(run_cli("render --volume " + w.p("s.json") + " --pose " + w.p("nope.json") + base) == 1);
  write_text(w.dir / "bad_pose.json", R"({"position_mm": [0, 0]})");
  CHECK(run_cli("render --volume " + w.p("s.json") + " --pose " + w.p("bad_pose.json") + base) == 1);
  CHECK(run_cli("render --volume " + w.p("missing.json") + " --pose " + w.p("pose.json") + base) == 2);
  write_text(w.dir / "broken.json", "{ this is not json");
  CHECK(run_cli("render --volume " + w.p("broken.json") + " --pose " + w.p("pose.json") + base) == 2);
  CHECK(run_cli("render --volume " + w.p("s.txt") + " --pose " + w.p("pose.json") + base) == 1);
  CHECK(run_cli("render --volume " + w.p("s.json") + " --pose " + w.p("pose.json") + base + " --format tiff") == 1);
  CHECK(run_cli("render --volume " + w.p("s.json") + " --pose " + w.p("pose.json")) == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("--help") == 0);

  // A NaN voxel is a numeric failure.
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::ofstream(w.dir / "nan.raw", std::ios::binary).write(reinterpret_cast<const char*>(&nan), sizeof nan);
  write_text(w.dir / "nan.json", R"({"dims": [1, 1, 1], "spacing_mm": [1, 1, 1], "origin_mm": [0, 0, 0],
                                     "dtype": "f64", "kind": "IMPEDANCE_MRAYL", "data_file": "nan.raw"})");
  CHECK(run_cli("render --volume " + w.p("nan.json") + " --pose " + w.p("pose.json") + base) == 3);
}

TEST_CASE("reruns are byte-identical and thread-count independent") {
  Workspace w("determinism");
  REQUIRE(run_cli("phantom --type blobs --size 32 --spacing 1.5 --seed 4 --out " + w.p("") + " --name b.json") == 0);
  const std::string args = "render --volume " + w.p("b.json") + " --pose " + w.p("pose.json") + " --fan " +
                           w.p("fan.json") + " --artifacts " + w.p("artifacts.json") + " --seed 11";
  REQUIRE(run_cli(args + " --threads 1 --out " + w.p("a")) == 0);
  REQUIRE(run_cli(args + " --threads 1 --out " + w.p("b")) == 0);
  REQUIRE(run_cli(args + " --threads 3 --out " + w.p("c")) == 0);
  for (const char* f : {"echo.npy", "polar.npy", "polar.pgm", "cartesian.npy", "polar.json"}) {
    CHECK(slurp(w.dir / "a" / f) == slurp(w.dir / "b" / f));
    CHECK(slurp(w.dir / "a" / f) == slurp(w.dir / "c" / f));
  }
  CHECK(without_timings(read_json(w.dir / "a" / "manifest.json")) ==
        without_timings(read_json(w.dir / "b" / "manifest.json")));
  REQUIRE(run_cli(args.substr(0, args.size() - 2) + "12 --out " + w.p("d")) == 0);
  CHECK(slurp(w.dir / "a" / "echo.npy") == slurp(w.dir / "d" / "echo.npy"));
  CHECK(slurp(w.dir / "a" / "polar.npy") != slurp(w.dir / "d" / "polar.npy"));
}

TEST_CASE("fit-map converges on the default table") {
  Workspace w("fit");
  REQUIRE(run_cli("fit-map --out " + w.p("out")) == 0);
  const auto report = read_json(w.dir / "out" / "fit_report.json");
  CHECK(report.at("mean_relative_error").get<double>() < 0.05);
  CHECK(fs::exists(w.dir / "out" / "model.json"));
  CHECK(run_cli("fit-map --calibration " + w.p("none.json") + " --out " + w.p("x")) == 1);
  const auto shipped = std::string(SONORAY_SOURCE_DIR) + "/config/calibration_default.json";
  CHECK(run_cli("fit-map --calibration " + shipped + " --out " + w.p("shipped")) == 0);
}

TEST_CASE("ct-map and mri-map write impedance volumes") {
  Workspace w("maps");
  REQUIRE(run_cli("phantom --type brain --size 20 --out " + w.p("") + " --name mri.json") == 0);
  REQUIRE(run_cli("mri-map --volume " + w.p("mri.json") + " --out " + w.p("m") + " --out-format nifti") == 0);
  CHECK(fs::exists(w.dir / "m" / "impedance.nii"));
  CHECK(run_cli("ct-map --volume " + w.p("mri.json") + " --out " + w.p("c")) == 1);
  REQUIRE(run_cli("ct-map --volume " + w.p("mri.json") + " --kind HU --out " + w.p("c")) == 0);
  CHECK(fs::exists(w.dir / "c" / "impedance.json"));
}

TEST_CASE("metrics and ablate commands") {
  Workspace w("ablate");
  REQUIRE(run_cli("phantom --type brain --size 32 --spacing 1.5 --out " + w.p("") + " --name mri.json") == 0);
  REQUIRE(run_cli("ablate --volume " + w.p("mri.json") + " --pose " + w.p("pose.json") + " --fan " +
                  w.p("fan.json") + " --height 64 --out " + w.p("abl")) == 0);
  const auto table = read_json(w.dir / "abl" / "ablation.json");
  REQUIRE(table.at("rows").size() == 6);
  for (const auto& row : table.at("rows")) {
    CHECK(fs::exists(w.dir / "abl" / ("difference_" + row.at("label").get<std::string>() + ".npy")));
    if (row.at("mapping") && row.at("propagation") && row.at("artifacts")) {
      CHECK(row.at("metrics").at("mse") == 0.0);
      CHECK(row.at("metrics").at("ssim").get<double>() == Catch::Approx(1.0));
    }
  }
  const auto img = w.p("abl/image_sampling+mapping+propagation.npy");
  REQUIRE(run_cli("metrics --reference " + img + " --image " + img + " --out " + w.p("met")) == 0);
  const auto met = read_json(w.dir / "met" / "metrics.json");
  CHECK(met.at("metrics").at("ncc").get<double>() == Catch::Approx(1.0));
  CHECK(met.at("ssim_params").at("window") == 11);
}

TEST_CASE("register self-registration demo recovers the perturbation") {
  Workspace w("register");
  REQUIRE(run_cli("phantom --type blobs --size 32 --spacing 1.5 --seed 2 --out " + w.p("") + " --name b.json") == 0);
  REQUIRE(run_cli("register --volume " + w.p("b.json") + " --fan " + w.p("fan.json") + " --init-pose " +
                  w.p("pose.json") + " --perturb-mm 1 --perturb-deg 1 --out " + w.p("r") + " --out-pose " +
                  w.p("final_pose.json")) == 0);
  const auto rep = read_json(w.dir / "r" / "registration.json");
  CHECK(rep.at("final_error").at("translation_mm").get<double>() < 0.2);
  CHECK(rep.at("final_error").at("rotation_deg").get<double>() < 0.2);
  CHECK(rep.at("trace").size() >= 2);
  CHECK(fs::exists(w.dir / "final_pose.json"));
}

TEST_CASE("bench reports the rays x samples grid") {
  Workspace w("bench");
  REQUIRE(run_cli("bench --iterations 1 --threads 1 --out " + w.p("b")) == 0);
  const auto b = read_json(w.dir / "b" / "bench.json");
  REQUIRE(b.at("grid").size() == 12);
  double t64 = 0.0, t256 = 0.0;
  for (const auto& cell : b.at("grid")) {
    if (cell.at("samples") != 200) continue;
    if (cell.at("rays") == 64) t64 = cell.at("mean_seconds");
    if (cell.at("rays") == 256) t256 = cell.at("mean_seconds");
  }
  CHECK(t256 >= t64);
}
