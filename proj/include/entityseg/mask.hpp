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

// Dense and run-length mask representations plus the geometric kernels
// (area, IoU, tight boxes, entity-map decomposition) used by every other
// part of the toolkit.
//
// Coordinates are (row, col) with the origin at the top-left pixel. Dense
// grids are stored row-major; run-length counts walk the grid column-major
// and always start with a background run.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entityseg/error.hpp"

namespace entityseg {

using PixelCount = std::int64_t;
using EntityId = std::uint32_t;

namespace detail {

inline void check_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw ShapeError("mask dimensions must be positive, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

inline std::string dims_str(int height, int width) {
  return std::to_string(height) + "x" + std::to_string(width);
}

}  // namespace detail

class BinaryMask {
 public:
  BinaryMask(int height, int width)
      : height_(height), width_(width) {
    detail::check_dims(height, width);
    bits_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    detail::check_dims(height, width);
    if (bits_.size() != static_cast<std::size_t>(height) * width) {
      throw ShapeError("mask holds " + std::to_string(bits_.size()) +
                       " pixels, expected " + detail::dims_str(height, width));
    }
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * width_ + col] != 0;
  }
  void set(int row, int col, bool value = true) {
    bits_[static_cast<std::size_t>(row) * width_ + col] = value ? 1 : 0;
  }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<std::uint8_t> mutable_bits() { return bits_; }

  bool same_shape(const BinaryMask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

class RleMask {
 public:
  RleMask(int height, int width, std::vector<std::uint32_t> counts)
      : height_(height), width_(width), counts_(std::move(counts)) {
    detail::check_dims(height, width);
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (counts_[i] == 0 && i != 0) {
        throw FormatError("rle run " + std::to_string(i) + " has zero length");
      }
      total += counts_[i];
    }
    const auto expected = static_cast<std::uint64_t>(height) * width;
    if (total != expected) {
      throw FormatError("rle counts sum to " + std::to_string(total) +
                        ", expected " + std::to_string(expected) + " for " +
                        detail::dims_str(height, width));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<std::uint32_t>& counts() const { return counts_; }

  friend bool operator==(const RleMask&, const RleMask&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint32_t> counts_;
};

// Half-open in width/height arithmetic: covers columns x_min..x_min+width-1.
struct Bbox {
  int x_min = 0;
  int y_min = 0;
  int width = 0;
  int height = 0;

  PixelCount area() const { return static_cast<PixelCount>(width) * height; }

  friend bool operator==(const Bbox&, const Bbox&) = default;
};

// Pixel-wise entity map. ID 0 is void; each pixel carries exactly one ID.
class EntityMap {
 public:
  EntityMap(int height, int width)
      : height_(height), width_(width) {
    detail::check_dims(height, width);
    ids_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  EntityMap(int height, int width, std::vector<EntityId> ids)
      : height_(height), width_(width), ids_(std::move(ids)) {
    detail::check_dims(height, width);
    if (ids_.size() != static_cast<std::size_t>(height) * width) {
      throw ShapeError("entity map holds " + std::to_string(ids_.size()) +
                       " pixels, expected " + detail::dims_str(height, width));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return ids_.size(); }

  EntityId at(int row, int col) const {
    return ids_[static_cast<std::size_t>(row) * width_ + col];
  }
  void set(int row, int col, EntityId id) {
    ids_[static_cast<std::size_t>(row) * width_ + col] = id;
  }

  std::span<const EntityId> ids() const { return ids_; }
  std::span<EntityId> mutable_ids() { return ids_; }

  // Distinct nonzero IDs in ascending order.
  std::vector<EntityId> entity_ids() const {
    const EntityId max_id =
        ids_.empty() ? 0 : *std::max_element(ids_.begin(), ids_.end());
    std::vector<EntityId> out;
    if (max_id <= (1u << 22)) {
      std::vector<std::uint8_t> seen(static_cast<std::size_t>(max_id) + 1, 0);
      for (EntityId id : ids_) seen[id] = 1;
      for (EntityId id = 1; id <= max_id; ++id) {
        if (seen[id]) out.push_back(id);
      }
      return out;
    }
    out.assign(ids_.begin(), ids_.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (!out.empty() && out.front() == 0) out.erase(out.begin());
    return out;
  }

  friend bool operator==(const EntityMap&, const EntityMap&) = default;

 private:
  int height_;
  int width_;
  std::vector<EntityId> ids_;
};

inline RleMask rle_encode(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) {
      const std::uint8_t v = mask.at(r, c) ? 1 : 0;
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return RleMask(h, w, std::move(counts));
}

inline BinaryMask rle_decode(const RleMask& rle) {
  const int h = rle.height();
  BinaryMask mask(h, rle.width());
  auto bits = mask.mutable_bits();
  std::size_t k = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : rle.counts()) {
    for (std::uint32_t i = 0; i < run; ++i, ++k) {
      if (value) {
        const std::size_t r = k % h;
        const std::size_t c = k / h;
        bits[r * rle.width() + c] = 1;
      }
    }
    value ^= 1;
  }
  return mask;
}

inline PixelCount mask_area(const BinaryMask& mask) {
  return std::count(mask.bits().begin(), mask.bits().end(), std::uint8_t{1});
}

inline PixelCount mask_area(const RleMask& rle) {
  PixelCount area = 0;
  for (std::size_t i = 1; i < rle.counts().size(); i += 2) area += rle.counts()[i];
  return area;
}

namespace detail {

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": " +
                     dims_str(a.height(), a.width()) + " vs " +
                     dims_str(b.height(), b.width()));
  }
}

inline double ratio(PixelCount num, PixelCount den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// IoU of prediction `a` against ground truth `b`. Empty union yields 0.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "mask_iou");
  const auto ab = a.bits();
  const auto bb = b.bits();
  PixelCount inter = 0;
  PixelCount uni = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  return detail::ratio(inter, uni);
}

// As above, with the void pixels removed from the prediction operand first.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b,
                       const BinaryMask& void_mask) {
  detail::require_same_shape(a, b, "mask_iou");
  detail::require_same_shape(a, void_mask, "mask_iou void");
  const auto ab = a.bits();
  const auto bb = b.bits();
  const auto vb = void_mask.bits();
  PixelCount inter = 0;
  PixelCount uni = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const std::uint8_t pa = ab[i] & static_cast<std::uint8_t>(vb[i] ^ 1);
    inter += pa & bb[i];
    uni += pa | bb[i];
  }
  return detail::ratio(inter, uni);
}

inline Bbox bbox_of(const BinaryMask& mask) {
  int r0 = mask.height(), r1 = -1, c0 = mask.width(), c1 = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (r1 < 0) throw EmptyMaskError("bbox_of called on an empty mask");
  return Bbox{c0, r0, c1 - c0 + 1, r1 - r0 + 1};
}

inline double box_iou(const Bbox& a, const Bbox& b) {
  const PixelCount iw = std::max(
      0, std::min(a.x_min + a.width, b.x_min + b.width) - std::max(a.x_min, b.x_min));
  const PixelCount ih = std::max(
      0, std::min(a.y_min + a.height, b.y_min + b.height) - std::max(a.y_min, b.y_min));
  const PixelCount inter = iw * ih;
  return detail::ratio(inter, a.area() + b.area() - inter);
}

struct EntityMask {
  EntityId id;
  BinaryMask mask;
};

// One mask per distinct nonzero ID, ascending by ID. Disconnected parts of
// an ID stay in the same mask.
inline std::vector<EntityMask> entity_map_decompose(const EntityMap& map) {
  std::map<EntityId, std::size_t> slot;
  std::vector<EntityMask> out;
  for (EntityId id : map.entity_ids()) {
    slot.emplace(id, out.size());
    out.push_back({id, BinaryMask(map.height(), map.width())});
  }
  const auto ids = map.ids();
  std::size_t last_slot = 0;
  EntityId last_id = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == 0) continue;
    if (ids[i] != last_id) {
      last_id = ids[i];
      last_slot = slot.at(last_id);
    }
    out[last_slot].mask.mutable_bits()[i] = 1;
  }
  return out;
}

// Inverse of entity_map_decompose. Overlapping masks are rejected.
inline EntityMap compose_entity_map(int height, int width,
                                    std::span<const EntityMask> entities) {
  EntityMap map(height, width);
  auto ids = map.mutable_ids();
  for (const auto& e : entities) {
    if (e.id == 0) throw ValidationError("entity id 0 is reserved for void");
    if (e.mask.height() != height || e.mask.width() != width) {
      throw ShapeError("entity " + std::to_string(e.id) + " is " +
                       detail::dims_str(e.mask.height(), e.mask.width()) +
                       ", map is " + detail::dims_str(height, width));
    }
    const auto bits = e.mask.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (!bits[i]) continue;
      if (ids[i] != 0) {
        throw ConstraintViolation("entities " + std::to_string(ids[i]) +
                                  " and " + std::to_string(e.id) + " overlap");
      }
      ids[i] = e.id;
    }
  }
  return map;
}

}  // namespace entityseg
