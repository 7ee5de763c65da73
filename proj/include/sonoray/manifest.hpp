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

#ifndef SONORAY_MANIFEST_HPP
#define SONORAY_MANIFEST_HPP

#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sonoray {

inline constexpr const char* kVersion = "0.1.0";

/**
 * Record of one CLI run. Everything except `timings` is a pure function of
 * the inputs, so reruns with the same inputs and seed compare equal after
 * dropping the timings.
 */
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> timings;  ///< stage name, wall seconds
  nlohmann::json diagnostics = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& [stage, seconds] : timings) t.push_back({{"stage", stage}, {"seconds", seconds}});
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"versions", {{"sonoray", kVersion}, {"cxx_standard", __cplusplus}}},
            {"timings", t},
            {"diagnostics", diagnostics}};
  }
};

/// Times consecutive stages and appends them to a manifest.
class StageTimer {
 public:
  explicit StageTimer(RunManifest& m) : manifest_(m), start_(Clock::now()) {}

  void lap(std::string stage) {
    const auto now = Clock::now();
    manifest_.timings.emplace_back(std::move(stage), std::chrono::duration<double>(now - start_).count());
    start_ = now;
  }

 private:
  using Clock = std::chrono::steady_clock;
  RunManifest& manifest_;
  Clock::time_point start_;
};

}  // namespace sonoray

#endif /* SONORAY_MANIFEST_HPP */
