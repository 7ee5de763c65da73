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

#ifndef SONORAY_VOLUME_IO_HPP
#define SONORAY_VOLUME_IO_HPP

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoray/error.hpp"
#include "sonoray/volume.hpp"

namespace sonoray {

static_assert(std::endian::native == std::endian::little,
              "volume IO assumes a little-endian host");

enum class VolumeFormat { RawJson, Nifti1 };

/// Guesses the on-disk format from the file extension (.json / .nii).
inline VolumeFormat volume_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii") return VolumeFormat::Nifti1;
  if (ext == ".json") return VolumeFormat::RawJson;
  throw ConfigError("cannot infer volume format from '" + path.string() +
                    "' (expected .json or .nii)");
}

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void write_le(std::vector<char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
std::vector<double> decode_payload(const char* bytes, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, bytes + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
  return out;
}

inline void check_finite(const std::vector<double>& data, const std::string& what) {
  for (double v : data)
    if (!std::isfinite(v)) throw NumericError(what + " payload contains NaN or Inf");
}

// NIfTI-1 header byte offsets.
inline constexpr std::size_t kNiiHeaderSize = 348;
inline constexpr std::size_t kNiiDataOffset = 352;
inline constexpr std::size_t kNiiDim = 40;
inline constexpr std::size_t kNiiDatatype = 70;
inline constexpr std::size_t kNiiBitpix = 72;
inline constexpr std::size_t kNiiPixdim = 76;
inline constexpr std::size_t kNiiVoxOffset = 108;
inline constexpr std::size_t kNiiSclSlope = 112;
inline constexpr std::size_t kNiiSclInter = 116;
inline constexpr std::size_t kNiiXyztUnits = 123;
inline constexpr std::size_t kNiiDescrip = 148;
inline constexpr std::size_t kNiiQformCode = 252;
inline constexpr std::size_t kNiiSformCode = 254;
inline constexpr std::size_t kNiiQuatern = 256;
inline constexpr std::size_t kNiiQoffset = 268;
inline constexpr std::size_t kNiiSrow = 280;
inline constexpr std::size_t kNiiMagic = 344;

inline constexpr std::int16_t kNiiInt16 = 4;
inline constexpr std::int16_t kNiiFloat32 = 16;
inline constexpr std::int16_t kNiiFloat64 = 64;

inline constexpr const char* kKindTag = "sonoray kind=";

inline VolumeGrid load_raw_json(const std::filesystem::path& path,
                                std::optional<VolumeKind> kind_override) {
  const auto text = read_file(path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path.string() + "' is not a RAW_JSON header: " + e.what());
  }

  Dims dims{};
  Vec3 spacing, origin;
  std::string dtype, data_file;
  VolumeKind kind;
  try {
    const auto d = h.at("dims").get<std::vector<std::int64_t>>();
    const auto s = h.at("spacing_mm").get<std::vector<double>>();
    const auto o = h.at("origin_mm").get<std::vector<double>>();
    if (d.size() != 3 || s.size() != 3 || o.size() != 3)
      throw FormatError("dims, spacing_mm and origin_mm must have three entries");
    for (int a = 0; a < 3; ++a) {
      if (d[a] <= 0) throw FormatError("dims must be positive");
      dims[a] = static_cast<std::size_t>(d[a]);
      spacing[a] = s[a];
      origin[a] = o[a];
    }
    dtype = h.at("dtype").get<std::string>();
    data_file = h.at("data_file").get<std::string>();
    kind = volume_kind_from_string(h.at("kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed RAW_JSON header '" + path.string() + "': " + e.what());
  }
  if (kind_override) kind = *kind_override;

  std::size_t elem = 0;
  if (dtype == "f32")
    elem = 4;
  else if (dtype == "f64")
    elem = 8;
  else if (dtype == "i16")
    elem = 2;
  else
    throw FormatError("unsupported dtype '" + dtype + "' (expected f32, f64 or i16)");

  const auto payload = read_file(path.parent_path() / data_file);
  const std::size_t count = dims[0] * dims[1] * dims[2];
  if (payload.size() != count * elem)
    throw FormatError("payload '" + data_file + "' holds " + std::to_string(payload.size() / elem) +
                      " values but dims require " + std::to_string(count));

  std::vector<double> data;
  if (dtype == "f32")
    data = decode_payload<float>(payload.data(), count);
  else if (dtype == "f64")
    data = decode_payload<double>(payload.data(), count);
  else
    data = decode_payload<std::int16_t>(payload.data(), count);
  check_finite(data, path.string());
  return VolumeGrid(dims, spacing, origin, std::move(data), kind);
}

inline void save_raw_json(const VolumeGrid& v, const std::filesystem::path& path) {
  const auto data_name = path.stem().string() + ".raw";
  nlohmann::json h;
  h["dims"] = {v.dims()[0], v.dims()[1], v.dims()[2]};
  h["spacing_mm"] = {v.spacing().x, v.spacing().y, v.spacing().z};
  h["origin_mm"] = {v.origin().x, v.origin().y, v.origin().z};
  h["dtype"] = "f64";
  h["kind"] = std::string(to_string(v.kind()));
  h["data_file"] = data_name;
  // max_digits10 output keeps doubles exact through the text header.
  const auto text = h.dump(2) + "\n";
  write_file(path, text.data(), text.size());
  write_file(path.parent_path() / data_name, v.data().data(), v.size() * sizeof(double));
}

inline VolumeGrid load_nifti1(const std::filesystem::path& path,
                              std::optional<VolumeKind> kind_override) {
  const auto buf = read_file(path);
  if (buf.size() < kNiiHeaderSize || read_le<std::int32_t>(buf, 0) != 348 ||
      std::memcmp(buf.data() + kNiiMagic, "n+1\0", 4) != 0)
    throw FormatError("'" + path.string() + "' is not a single-file NIfTI-1 volume");

  const auto ndim = read_le<std::int16_t>(buf, kNiiDim);
  if (ndim < 3 || ndim > 7) throw FormatError("NIfTI dim[0] must describe a 3-D volume");
  Dims dims{};
  for (int a = 0; a < 3; ++a) {
    const auto d = read_le<std::int16_t>(buf, kNiiDim + 2 * (a + 1));
    if (d <= 0) throw FormatError("NIfTI dims must be positive");
    dims[a] = static_cast<std::size_t>(d);
  }
  for (int a = 3; a < ndim; ++a)
    if (read_le<std::int16_t>(buf, kNiiDim + 2 * (a + 1)) > 1)
      throw FormatError("NIfTI volumes with more than three dimensions are not supported");

  const auto datatype = read_le<std::int16_t>(buf, kNiiDatatype);
  std::size_t elem = 0;
  if (datatype == kNiiInt16)
    elem = 2;
  else if (datatype == kNiiFloat32)
    elem = 4;
  else if (datatype == kNiiFloat64)
    elem = 8;
  else
    throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype) +
                      " (expected int16, float32 or float64)");

  double unit = 1.0;
  switch (static_cast<unsigned char>(buf[kNiiXyztUnits]) & 0x07) {
    case 1:
      unit = 1000.0;  // meters
      break;
    case 3:
      unit = 1e-3;  // microns
      break;
    default:
      break;
  }

  Vec3 spacing, origin;
  for (int a = 0; a < 3; ++a)
    spacing[a] = read_le<float>(buf, kNiiPixdim + 4 * (a + 1)) * unit;

  const auto sform_code = read_le<std::int16_t>(buf, kNiiSformCode);
  const auto qform_code = read_le<std::int16_t>(buf, kNiiQformCode);
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r) {
      std::array<double, 4> row{};
      for (int c = 0; c < 4; ++c) row[c] = read_le<float>(buf, kNiiSrow + 16 * r + 4 * c);
      for (int c = 0; c < 3; ++c) {
        if (c != r && std::abs(row[c]) > 1e-6 * std::abs(row[r]))
          throw FormatError("NIfTI sform contains a rotation; only axis-aligned volumes are supported");
      }
      if (!(row[r] > 0.0))
        throw FormatError("NIfTI sform flips an axis; only axis-aligned volumes are supported");
      spacing[r] = row[r] * unit;
      origin[r] = row[3] * unit;
    }
  } else if (qform_code > 0) {
    for (int q = 0; q < 3; ++q)
      if (std::abs(read_le<float>(buf, kNiiQuatern + 4 * q)) > 1e-7)
        throw FormatError("NIfTI qform contains a rotation; only axis-aligned volumes are supported");
    if (read_le<float>(buf, kNiiPixdim) < 0.0f)
      throw FormatError("NIfTI qform flips an axis; only axis-aligned volumes are supported");
    for (int a = 0; a < 3; ++a) origin[a] = read_le<float>(buf, kNiiQoffset + 4 * a) * unit;
  }

  const auto vox_offset = static_cast<std::size_t>(read_le<float>(buf, kNiiVoxOffset));
  const std::size_t count = dims[0] * dims[1] * dims[2];
  if (vox_offset < kNiiHeaderSize || buf.size() != vox_offset + count * elem)
    throw FormatError("NIfTI payload size does not match dims " + std::to_string(dims[0]) + "x" +
                      std::to_string(dims[1]) + "x" + std::to_string(dims[2]));

  std::vector<double> data;
  const char* payload = buf.data() + vox_offset;
  if (datatype == kNiiInt16)
    data = decode_payload<std::int16_t>(payload, count);
  else if (datatype == kNiiFloat32)
    data = decode_payload<float>(payload, count);
  else
    data = decode_payload<double>(payload, count);

  const double slope = read_le<float>(buf, kNiiSclSlope);
  const double inter = read_le<float>(buf, kNiiSclInter);
  if (slope != 0.0 && (slope != 1.0 || inter != 0.0))
    for (auto& x : data) x = x * slope + inter;
  check_finite(data, path.string());

  VolumeKind kind = datatype == kNiiInt16 ? VolumeKind::Hu : VolumeKind::MriIntensity;
  const std::string descrip(buf.data() + kNiiDescrip, strnlen(buf.data() + kNiiDescrip, 80));
  if (descrip.rfind(kKindTag, 0) == 0) kind = volume_kind_from_string(descrip.substr(13));
  if (kind_override) kind = *kind_override;
  return VolumeGrid(dims, spacing, origin, std::move(data), kind);
}

inline void save_nifti1(const VolumeGrid& v, const std::filesystem::path& path) {
  for (int a = 0; a < 3; ++a)
    if (v.dims()[a] > 32767) throw ConfigError("NIfTI-1 dims are limited to 32767");

  std::vector<char> buf(kNiiDataOffset + v.size() * sizeof(double), 0);
  write_le<std::int32_t>(buf, 0, 348);
  write_le<std::int16_t>(buf, kNiiDim, 3);
  for (int a = 0; a < 3; ++a)
    write_le<std::int16_t>(buf, kNiiDim + 2 * (a + 1), static_cast<std::int16_t>(v.dims()[a]));
  for (int a = 4; a < 8; ++a) write_le<std::int16_t>(buf, kNiiDim + 2 * a, 1);
  write_le<std::int16_t>(buf, kNiiDatatype, kNiiFloat64);
  write_le<std::int16_t>(buf, kNiiBitpix, 64);
  write_le<float>(buf, kNiiPixdim, 1.0f);
  for (int a = 0; a < 3; ++a)
    write_le<float>(buf, kNiiPixdim + 4 * (a + 1), static_cast<float>(v.spacing()[a]));
  write_le<float>(buf, kNiiVoxOffset, static_cast<float>(kNiiDataOffset));
  write_le<float>(buf, kNiiSclSlope, 1.0f);
  buf[kNiiXyztUnits] = 2;  // mm

  const std::string descrip = std::string(kKindTag) + std::string(to_string(v.kind()));
  std::memcpy(buf.data() + kNiiDescrip, descrip.data(), descrip.size());

  write_le<std::int16_t>(buf, kNiiQformCode, 1);
  write_le<std::int16_t>(buf, kNiiSformCode, 1);
  for (int a = 0; a < 3; ++a) {
    write_le<float>(buf, kNiiQoffset + 4 * a, static_cast<float>(v.origin()[a]));
    write_le<float>(buf, kNiiSrow + 16 * a + 4 * a, static_cast<float>(v.spacing()[a]));
    write_le<float>(buf, kNiiSrow + 16 * a + 12, static_cast<float>(v.origin()[a]));
  }
  std::memcpy(buf.data() + kNiiMagic, "n+1\0", 4);
  std::memcpy(buf.data() + kNiiDataOffset, v.data().data(), v.size() * sizeof(double));
  write_file(path, buf.data(), buf.size());
}

}  // namespace detail

/**
 * Reads a volume. RAW_JSON headers name a little-endian payload next to them;
 * NIfTI-1 files must be single-file, uncompressed and axis-aligned. The kind
 * comes from the file unless `kind_override` is given.
 */
inline VolumeGrid load_volume(const std::filesystem::path& path, VolumeFormat format,
                              std::optional<VolumeKind> kind_override = std::nullopt) {
  return format == VolumeFormat::Nifti1 ? detail::load_nifti1(path, kind_override)
                                        : detail::load_raw_json(path, kind_override);
}

/**
 * Writes a volume as 64-bit floats. NIfTI-1 stores spacing and origin as
 * 32-bit floats, so geometry round-trips exactly only when representable.
 */
inline void save_volume(const VolumeGrid& v, const std::filesystem::path& path,
                        VolumeFormat format) {
  if (format == VolumeFormat::Nifti1)
    detail::save_nifti1(v, path);
  else
    detail::save_raw_json(v, path);
}

}  // namespace sonoray

#endif /* SONORAY_VOLUME_IO_HPP */
