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

#ifndef SONORAY_IMAGE_IO_HPP
#define SONORAY_IMAGE_IO_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoray/error.hpp"
#include "sonoray/imaging.hpp"

namespace sonoray {

static_assert(std::endian::native == std::endian::little, "image IO assumes a little-endian host");

/// 16-bit binary PGM; pixel values are clamped to [0, 1] and scaled to 0..65535.
inline void write_pgm16(const std::filesystem::path& path, const Image2D& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
  std::vector<unsigned char> buf(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Reads a binary PGM (8- or 16-bit) back into [0, 1].
inline Image2D read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&] {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  if (token() != "P5") throw FormatError(path.string() + " is not a binary PGM");
  std::size_t cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoul(token());
    rows = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError("malformed PGM header in " + path.string());
  }
  if (maxval == 0 || maxval > 65535) throw FormatError("unsupported PGM maxval");
  in.get();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(rows * cols * bpp);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw FormatError("truncated PGM " + path.string());
  Image2D img(rows, cols);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const unsigned v = bpp == 2 ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
    img.data()[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

/// NPY v1.0, little-endian, C order, 2-D; float32 by default or float64.
inline void write_npy(const std::filesystem::path& path, const Image2D& img, bool float64 = false) {
  std::ostringstream dict;
  dict << "{'descr': '" << (float64 ? "<f8" : "<f4") << "', 'fortran_order': False, 'shape': (" << img.rows()
       << ", " << img.cols() << "), }";
  std::string header = dict.str();
  // magic (6) + version (2) + length (2) + header, padded with spaces to a multiple of 64, ending in \n.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const unsigned char lenb[2] = {static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>(len >> 8)};
  out.write(reinterpret_cast<const char*>(lenb), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (float64) {
    out.write(reinterpret_cast<const char*>(img.data().data()), static_cast<std::streamsize>(img.size() * 8));
  } else {
    std::vector<float> f(img.data().begin(), img.data().end());
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline Image2D read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw FormatError(path.string() + " is not an NPY file");
  std::size_t hlen = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    hlen = b[0] | (static_cast<std::size_t>(b[1]) << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    hlen = b[0] | (static_cast<std::size_t>(b[1]) << 8) | (static_cast<std::size_t>(b[2]) << 16) |
           (static_cast<std::size_t>(b[3]) << 24);
  }
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw FormatError("truncated NPY header in " + path.string());
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr':\s*'([<|=]f[48])')")))
    throw FormatError("NPY dtype must be little-endian float32 or float64");
  const bool f8 = m[1].str().back() == '8';
  if (std::regex_search(header, std::regex(R"('fortran_order':\s*True)")))
    throw FormatError("Fortran-ordered NPY is not supported");
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\((\d+),\s*(\d+)\s*,?\s*\))")))
    throw FormatError("NPY array must be 2-D");
  const std::size_t rows = std::stoul(m[1].str()), cols = std::stoul(m[2].str());
  Image2D img(rows, cols);
  if (f8) {
    in.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.size() * 8));
  } else {
    std::vector<float> f(img.size());
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
    std::copy(f.begin(), f.end(), img.data().begin());
  }
  if (!in) throw FormatError("truncated NPY data in " + path.string());
  for (double v : img.data())
    if (!std::isfinite(v)) throw NumericError("non-finite pixel in " + path.string());
  return img;
}

/// Loads an image by extension (.npy or .pgm).
inline Image2D read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".npy") return read_npy(path);
  if (ext == ".pgm") return read_pgm(path);
  throw ConfigError("unsupported image extension: " + ext);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

/// Parses a JSON file. Configuration files (pose, fan, calibration) report a
/// missing file as a configuration error rather than an IO error.
inline nlohmann::json read_json(const std::filesystem::path& path, bool is_config = false) {
  std::ifstream in(path);
  if (!in) {
    if (is_config) throw ConfigError("cannot open config " + path.string());
    throw IoError("cannot open " + path.string());
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace sonoray

#endif /* SONORAY_IMAGE_IO_HPP */
