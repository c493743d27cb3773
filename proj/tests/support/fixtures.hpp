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

// Fixture builders shared by the unit tests and the acceptance runner.

#pragma once

#include <algorithm>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "entityseg/annotation.hpp"
#include "entityseg/evaluator.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/mask.hpp"
#include "entityseg/png_io.hpp"
#include "entityseg/prng.hpp"
#include "entityseg/resolver.hpp"
#include "oracle/reference.hpp"

namespace entityseg::testing {

inline BinaryMask rect_mask(int h, int w, int r0, int c0, int rows, int cols) {
  BinaryMask m(h, w);
  for (int r = r0; r < std::min(h, r0 + rows); ++r) {
    for (int c = c0; c < std::min(w, c0 + cols); ++c) m.set(r, c);
  }
  return m;
}

inline void paint(EntityMap& map, const BinaryMask& m, EntityId id) {
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (m.at(r, c)) map.set(r, c, id);
    }
  }
}

inline BinaryMask random_rect(Pcg32& rng, int h, int w) {
  const int r0 = rng.range(0, h - 1), c0 = rng.range(0, w - 1);
  return rect_mask(h, w, r0, c0, rng.range(1, h - r0), rng.range(1, w - c0));
}

inline ImageRecord record_from_map(std::int64_t image_id, const EntityMap& map,
                                   const std::map<EntityId, std::int64_t>& categories = {},
                                   const std::string& tag = "test") {
  ImageRecord im;
  im.image_id = image_id;
  im.source_image_id = image_id;
  im.height = map.height();
  im.width = map.width();
  im.source_dataset = tag;
  for (const auto& em : entity_map_decompose(map)) {
    EntityRecord e;
    e.entity_id = em.id;
    e.mask = rle_encode(em.mask);
    e.area = mask_area(em.mask);
    e.bbox = bbox_of(em.mask);
    if (auto it = categories.find(em.id); it != categories.end()) e.source_category = it->second;
    im.entities.push_back(std::move(e));
  }
  finalize_image_record(im);
  return im;
}

// Rectangles painted over a void background; later rectangles occlude
// earlier ones, and an entity may vanish entirely.
inline EntityMap random_map(Pcg32& rng, int h, int w, int max_entities) {
  EntityMap map(h, w);
  const int n = rng.range(0, max_entities);
  if (rng.uniform() < 0.3 && n > 0) {
    for (auto& id : map.mutable_ids()) id = 1;
  }
  for (int k = 1; k <= n; ++k) paint(map, random_rect(rng, h, w), static_cast<EntityId>(k));
  return map;
}

inline double random_score(Pcg32& rng) {
  // Occasional exact ties exercise the tie-break rules.
  if (rng.uniform() < 0.2) return 0.25 * rng.range(1, 4);
  return rng.uniform(0.01, 1.0);
}

inline BinaryMask jitter(Pcg32& rng, const BinaryMask& m, double flip) {
  BinaryMask out = m;
  for (auto& b : out.mutable_bits()) {
    if (rng.uniform() < flip) b = b ? 0 : 1;
  }
  return out;
}

// Possibly overlapping scored masks loosely derived from a GT map.
inline std::vector<ScoredEntity> random_overlapping(Pcg32& rng, const EntityMap& gt,
                                                    int max_preds) {
  const auto parts = entity_map_decompose(gt);
  std::vector<ScoredEntity> out;
  const int n = rng.range(0, max_preds);
  for (int k = 0; k < n; ++k) {
    ScoredEntity e;
    e.entity_id = static_cast<EntityId>(k + 1);
    if (!parts.empty() && rng.uniform() < 0.6) {
      e.mask = jitter(rng, parts[rng.bounded(static_cast<std::uint32_t>(parts.size()))].mask,
                      rng.uniform(0.0, 0.15));
    } else {
      e.mask = random_rect(rng, gt.height(), gt.width());
    }
    if (mask_area(e.mask) == 0) e.mask.set(0, 0);
    e.score = random_score(rng);
    out.push_back(std::move(e));
  }
  return out;
}

// Non-overlapping prediction derived from a GT map by occluding it with
// random rectangles and relabelling.
inline ResolvedPrediction random_resolved(Pcg32& rng, const EntityMap& gt, int max_new) {
  EntityMap map = gt;
  const int extra = rng.range(0, max_new);
  for (int k = 0; k < extra; ++k) {
    paint(map, random_rect(rng, gt.height(), gt.width()), static_cast<EntityId>(100 + k));
  }
  if (rng.uniform() < 0.3) paint(map, random_rect(rng, gt.height(), gt.width()), 0);
  std::map<EntityId, EntityId> relabel;
  for (EntityId id : map.entity_ids()) relabel[id] = static_cast<EntityId>(rng.range(1, 50000));
  // Keep relabelling injective.
  std::set<EntityId> used;
  for (auto& [from, to] : relabel) {
    while (!used.insert(to).second) ++to;
  }
  for (auto& id : map.mutable_ids()) {
    if (id != 0) id = relabel[id];
  }
  ResolvedPrediction pred;
  pred.map = map;
  for (EntityId id : map.entity_ids()) pred.scores[id] = random_score(rng);
  return pred;
}

// ---------------------------------------------------------------------------
// Oracle inputs.

inline oracle::RefImage ref_image(const std::vector<std::pair<oracle::PixelSet, double>>& preds,
                                  const EntityMap& gt) {
  const oracle::PixelSet void_px = oracle::pixels_of(gt, 0);
  std::vector<oracle::PixelSet> gts;
  for (EntityId id : gt.entity_ids()) gts.push_back(oracle::pixels_of(gt, id));
  oracle::RefImage im;
  for (const auto& g : gts) im.gt_areas.push_back(static_cast<double>(g.size()));
  for (const auto& [px, score] : preds) {
    im.scores.push_back(score);
    im.pred_areas.push_back(static_cast<double>(px.size()));
    std::vector<double> row;
    for (const auto& g : gts) row.push_back(oracle::set_iou(px, g, void_px));
    im.iou.push_back(row);
  }
  return im;
}

inline oracle::RefImage ref_image(const std::vector<ScoredEntity>& preds, const EntityMap& gt) {
  std::vector<std::pair<oracle::PixelSet, double>> p;
  for (const auto& e : preds) p.push_back({oracle::pixels_of(e.mask), e.score});
  return ref_image(p, gt);
}

inline oracle::RefImage ref_image(const ResolvedPrediction& pred, const EntityMap& gt) {
  std::vector<std::pair<oracle::PixelSet, double>> p;
  for (EntityId id : pred.map.entity_ids()) {
    p.push_back({oracle::pixels_of(pred.map, id), pred.scores.at(id)});
  }
  return ref_image(p, gt);
}

inline oracle::RefConfig ref_config(const EvalConfig& cfg) {
  return {cfg.iou_thresholds, cfg.recall_points, cfg.max_dets_per_image, cfg.small_area_max,
          cfg.large_area_min};
}

// ---------------------------------------------------------------------------
// Files.

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / ("entityseg-test-" + std::to_string(::getpid()) + "-" +
                      std::to_string(counter++));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct PanopticFixture {
  std::filesystem::path json_path;
  std::filesystem::path png_dir;
  Json doc;
  std::vector<std::size_t> segment_counts;  // per annotation, counted while painting
};

// COCO panoptic layout with random segment ids; some segments are painted
// as two disconnected rectangles and the first image is fully void.
inline PanopticFixture write_panoptic_fixture(const std::filesystem::path& dir, int images,
                                              std::uint64_t seed, std::int64_t first_id = 1) {
  Pcg32 rng(seed, 7);
  PanopticFixture fx;
  fx.png_dir = dir / "png";
  fx.json_path = dir / "panoptic.json";
  std::filesystem::create_directories(fx.png_dir);
  Json doc;
  doc["images"] = Json::array();
  doc["annotations"] = Json::array();
  doc["categories"] = Json::array();
  for (int c = 1; c <= 6; ++c) doc["categories"].push_back({{"id", c}, {"isthing", c % 2}});
  for (int i = 0; i < images; ++i) {
    const std::int64_t image_id = first_id + i;
    const int h = rng.range(6, 20), w = rng.range(6, 20);
    EntityMap map(h, w);
    const int segs = i == 0 ? 0 : rng.range(1, 7);
    std::vector<EntityId> ids;
    for (int s = 0; s < segs; ++s) {
      EntityId id;
      do {
        id = static_cast<EntityId>(rng.range(1, static_cast<int>(kMaxPngId)));
      } while (std::find(ids.begin(), ids.end(), id) != ids.end());
      ids.push_back(id);
      paint(map, random_rect(rng, h, w), id);
      if (rng.uniform() < 0.3) paint(map, random_rect(rng, h, w), id);
    }
    std::map<EntityId, PixelCount> area;
    for (EntityId id : map.ids()) {
      if (id) ++area[id];
    }
    const std::string file = "img_" + std::to_string(image_id) + ".png";
    write_id_png(fx.png_dir / file, map);
    Json segments = Json::array();
    for (EntityId id : ids) {
      if (!area.count(id)) continue;
      segments.push_back({{"id", id}, {"category_id", rng.range(1, 6)}, {"area", area[id]},
                          {"iscrowd", 0}});
    }
    fx.segment_counts.push_back(area.size());
    doc["images"].push_back({{"id", image_id}, {"height", h}, {"width", w},
                             {"file_name", "img_" + std::to_string(image_id) + ".jpg"}});
    doc["annotations"].push_back(
        {{"image_id", image_id}, {"file_name", file}, {"segments_info", segments}});
  }
  write_json_file(fx.json_path, doc);
  fx.doc = doc;
  return fx;
}

}  // namespace entityseg::testing
