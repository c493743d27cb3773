// Copyright 2026 The Entityseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ID PNG codec: each pixel stores id = R + 256*G + 256^2*B.

#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "entityseg/error.hpp"
#include "entityseg/mask.hpp"

namespace entityseg {

constexpr EntityId kMaxPngId = 0xffffff;

constexpr EntityId id_from_rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<EntityId>(r) + 256u * g + 65536u * b;
}

inline EntityMap read_id_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("missing PNG " + path.string());
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path.string() + ": " + msg);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  std::vector<EntityId> ids(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = id_from_rgb(buffer[4 * i], buffer[4 * i + 1], buffer[4 * i + 2]);
  }
  return EntityMap(h, w, std::move(ids));
}

inline void write_id_png(const std::filesystem::path& path, const EntityMap& map) {
  std::vector<std::uint8_t> buffer(map.size() * 3);
  const auto ids = map.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] > kMaxPngId) {
      throw FormatError("entity id " + std::to_string(ids[i]) +
                        " does not fit a 24-bit PNG");
    }
    buffer[3 * i] = static_cast<std::uint8_t>(ids[i] & 0xff);
    buffer[3 * i + 1] = static_cast<std::uint8_t>((ids[i] >> 8) & 0xff);
    buffer[3 * i + 2] = static_cast<std::uint8_t>((ids[i] >> 16) & 0xff);
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(map.width());
  image.height = static_cast<png_uint_32>(map.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(),
                               0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

}  // namespace entityseg
