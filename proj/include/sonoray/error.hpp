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

#ifndef SONORAY_ERROR_HPP
#define SONORAY_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sonoray {

/**
 * Base of all library errors. Each subclass carries the process exit code the
 * command-line front end reports for it.
 */
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const noexcept = 0;
};

/// Invalid configuration or arguments (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// File system or file-format failure (exit code 2).
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed or unrecognized file contents. Reported as an IO failure.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Numerical failure: singular systems, NaN data, non-convergence (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace sonoray

#endif /* SONORAY_ERROR_HPP */
