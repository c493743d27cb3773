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

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "entityseg/error.hpp"
#include "entityseg/mask.hpp"
#include "json.hpp"

namespace entityseg {

using Json = nlohmann::ordered_json;

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string dump_json(const Json& doc) { return doc.dump(1) + "\n"; }

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, dump_json(doc));
}

namespace detail {

template <typename T>
T json_get(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(where + ": missing field \"" + key + "\"");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where + ": field \"" + key + "\" has the wrong type");
  }
}

}  // namespace detail

// {"size": [height, width], "counts": [...]}
inline Json rle_to_json(const RleMask& rle) {
  Json j;
  j["size"] = Json::array({rle.height(), rle.width()});
  j["counts"] = rle.counts();
  return j;
}

inline RleMask rle_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
    throw FormatError("rle object needs \"size\" and \"counts\"");
  }
  const Json& size = j.at("size");
  const Json& counts = j.at("counts");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
      !size[1].is_number_integer()) {
    throw FormatError("rle \"size\" must be [height, width]");
  }
  if (!counts.is_array()) {
    throw FormatError("rle \"counts\" must be an integer list");
  }
  std::vector<std::uint32_t> runs;
  runs.reserve(counts.size());
  for (const auto& c : counts) {
    if (!c.is_number_integer() || c.get<std::int64_t>() < 0 ||
        c.get<std::int64_t>() > 0xffffffffLL) {
      throw FormatError("rle counts must be non-negative integers");
    }
    runs.push_back(c.get<std::uint32_t>());
  }
  try {
    return RleMask(size[0].get<int>(), size[1].get<int>(), std::move(runs));
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
}

inline Json bbox_to_json(const Bbox& box) {
  return Json::array({box.x_min, box.y_min, box.width, box.height});
}

inline Bbox bbox_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw FormatError("bbox must be [x_min, y_min, width, height]");
  }
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw FormatError("bbox entries must be integers");
  }
  return Bbox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace entityseg
