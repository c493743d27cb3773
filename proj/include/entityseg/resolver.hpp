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

// Inference-side postprocessing: score aggregation, box-level NMS, and the
// per-pixel argmax that fuses scored (possibly overlapping) masks into a
// single non-overlapping entity map.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "entityseg/error.hpp"
#include "entityseg/mask.hpp"

namespace entityseg {

constexpr double kDefaultNmsIou = 0.6;

inline double aggregate_score(double entityness, double centerness) {
  if (!(entityness >= 0.0 && entityness <= 1.0) ||
      !(centerness >= 0.0 && centerness <= 1.0)) {
    throw DomainError("entityness and centerness must lie in [0, 1]");
  }
  return std::sqrt(entityness * centerness);
}

struct Detection {
  Bbox bbox;
  double entityness = 0.0;
  double centerness = 0.0;
  double aggregated_score = 0.0;

  static Detection make(const Bbox& box, double entityness, double centerness) {
    return {box, entityness, centerness, aggregate_score(entityness, centerness)};
  }
};

// Greedy NMS. Returns indices into `detections` in keep order (score
// descending, ties by input index).
inline std::vector<std::size_t> box_nms_indices(std::span<const Detection> detections,
                                                double iou_threshold = kDefaultNmsIou) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw DomainError("nms iou threshold must lie in (0, 1]");
  }
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].aggregated_score > detections[b].aggregated_score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (box_iou(detections[i].bbox, detections[k].bbox) >= iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

inline std::vector<Detection> box_nms(std::span<const Detection> detections,
                                      double iou_threshold = kDefaultNmsIou) {
  std::vector<Detection> out;
  for (std::size_t i : box_nms_indices(detections, iou_threshold)) {
    out.push_back(detections[i]);
  }
  return out;
}

struct ScoredEntity {
  EntityId entity_id = 0;
  BinaryMask mask{1, 1};
  double score = 0.0;
  // Dense row-major probabilities; only values on the mask support matter.
  std::optional<std::vector<double>> pixel_probs;
};

using ScoreTable = std::map<EntityId, double>;

// Entity map plus the score table; index 0 is reserved for void with score 0.
struct ResolvedPrediction {
  EntityMap map{1, 1};
  ScoreTable scores{{0, 0.0}};
};

// Per pixel, the entity maximizing score * pixel_prob wins (pixel_prob is 1
// when absent); ties go to the lower entity id. Entities left without any
// pixel are dropped from the score table.
inline ResolvedPrediction resolve_overlaps(std::span<const ScoredEntity> entities,
                                           int height, int width) {
  std::set<EntityId> ids;
  for (const auto& e : entities) {
    const std::string who = "entity " + std::to_string(e.entity_id);
    if (e.entity_id == 0) throw ValidationError("entity id 0 is reserved for void");
    if (!ids.insert(e.entity_id).second) throw ValidationError(who + " appears twice");
    if (e.mask.height() != height || e.mask.width() != width) {
      throw ShapeError(who + " is " + detail::dims_str(e.mask.height(), e.mask.width()) +
                       ", image is " + detail::dims_str(height, width));
    }
    if (e.pixel_probs && e.pixel_probs->size() != e.mask.size()) {
      throw ShapeError(who + " pixel_probs size does not match the mask");
    }
    if (e.pixel_probs) {
      for (double p : *e.pixel_probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError(who + " pixel_probs must lie in [0, 1]");
      }
    }
    if (!(e.score >= 0.0 && e.score <= 1.0)) {
      throw DomainError(who + " score must lie in [0, 1]");
    }
  }

  ResolvedPrediction out;
  out.map = EntityMap(height, width);
  auto ids_out = out.map.mutable_ids();
  std::vector<double> best(ids_out.size(), -1.0);
  for (const auto& e : entities) {
    const auto bits = e.mask.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (!bits[i]) continue;
      const double conf = e.pixel_probs ? e.score * (*e.pixel_probs)[i] : e.score;
      if (conf > best[i] || (conf == best[i] && e.entity_id < ids_out[i])) {
        best[i] = conf;
        ids_out[i] = e.entity_id;
      }
    }
  }
  std::set<EntityId> survivors(ids_out.begin(), ids_out.end());
  for (const auto& e : entities) {
    if (survivors.count(e.entity_id)) out.scores[e.entity_id] = e.score;
  }
  return out;
}

inline void validate_prediction(const ResolvedPrediction& pred) {
  auto zero = pred.scores.find(0);
  if (zero == pred.scores.end() || zero->second != 0.0) {
    throw ValidationError("score table must reserve index 0 with score 0");
  }
  for (const auto& [id, score] : pred.scores) {
    if (!(score >= 0.0 && score <= 1.0)) {
      throw ValidationError("entity " + std::to_string(id) + " score " +
                            std::to_string(score) + " outside [0, 1]");
    }
  }
  for (EntityId id : pred.map.entity_ids()) {
    if (!pred.scores.count(id)) {
      throw ValidationError("entity " + std::to_string(id) + " has no score entry");
    }
  }
}

// Scored masks of a resolved prediction, ascending by entity id.
inline std::vector<ScoredEntity> decompose_prediction(const ResolvedPrediction& pred) {
  std::vector<ScoredEntity> out;
  for (auto& em : entity_map_decompose(pred.map)) {
    auto it = pred.scores.find(em.id);
    if (it == pred.scores.end()) {
      throw ValidationError("entity " + std::to_string(em.id) + " has no score entry");
    }
    out.push_back({em.id, std::move(em.mask), it->second, std::nullopt});
  }
  return out;
}

}  // namespace entityseg
