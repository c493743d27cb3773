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

// Metrics: the strict non-overlapping entity AP, the overlap-tolerant mask
// AP, box AP (category-agnostic or category-oriented) and panoptic quality.
//
// All AP variants share one engine. Each image is reduced to an
// ImageEvalInput (scores, areas and a prediction x ground-truth IoU matrix),
// matched greedily per threshold and size bucket, and the per-image results
// are pooled in dataset order with a stable score sort. The pooled reduction
// is serial, so reports do not depend on the number of worker threads.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "entityseg/annotation.hpp"
#include "entityseg/error.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/mask.hpp"
#include "entityseg/parallel.hpp"
#include "entityseg/resolver.hpp"

namespace entityseg {

enum class EvalMode { kCategoryAgnostic, kCategoryOriented };

inline std::string mode_name(EvalMode mode) {
  return mode == EvalMode::kCategoryAgnostic ? "agnostic" : "oriented";
}

inline EvalMode parse_mode(const std::string& name) {
  if (name == "agnostic" || name == "category-agnostic") return EvalMode::kCategoryAgnostic;
  if (name == "oriented" || name == "category-oriented") return EvalMode::kCategoryOriented;
  throw ConfigError("unknown evaluation mode \"" + name + "\"");
}

inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct EvalConfig {
  std::vector<double> iou_thresholds = default_iou_thresholds();
  int recall_points = 101;
  std::size_t max_dets_per_image = 100;
  // small: area < small_area_max; medium: in between; large: area > large_area_min.
  double small_area_max = 32.0 * 32.0;
  double large_area_min = 96.0 * 96.0;
  EvalMode mode = EvalMode::kCategoryAgnostic;

  void validate() const {
    if (iou_thresholds.empty()) throw ConfigError("at least one IoU threshold is required");
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      const double t = iou_thresholds[i];
      if (!(t > 0.0 && t <= 1.0)) throw ConfigError("IoU thresholds must lie in (0, 1]");
      if (i > 0 && !(t > iou_thresholds[i - 1])) {
        throw ConfigError("IoU thresholds must be strictly increasing");
      }
    }
    if (recall_points < 2) throw ConfigError("recall_points must be at least 2");
    if (max_dets_per_image < 1) throw ConfigError("max_dets must be at least 1");
    if (!(small_area_max <= large_area_min)) {
      throw ConfigError("size bucket thresholds are out of order");
    }
  }

  Json to_json() const {
    Json j;
    j["iou_thresholds"] = iou_thresholds;
    j["recall_points"] = recall_points;
    j["max_dets_per_image"] = max_dets_per_image;
    j["size_buckets"] = {{"small_below", small_area_max}, {"large_above", large_area_min}};
    j["mode"] = mode_name(mode);
    return j;
  }
};

enum class SizeBucket { kAll = 0, kSmall = 1, kMedium = 2, kLarge = 3 };
constexpr std::size_t kNumBuckets = 4;

inline bool in_bucket(double area, SizeBucket bucket, const EvalConfig& cfg) {
  switch (bucket) {
    case SizeBucket::kAll: return true;
    case SizeBucket::kSmall: return area < cfg.small_area_max;
    case SizeBucket::kMedium: return area >= cfg.small_area_max && area <= cfg.large_area_min;
    case SizeBucket::kLarge: return area > cfg.large_area_min;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Matching.

struct ImageEvalInput {
  std::vector<double> pred_scores;
  std::vector<double> pred_areas;
  std::vector<double> gt_areas;
  std::vector<double> ious;  // pred-major, pred_scores.size() x gt_areas.size()

  std::size_t num_preds() const { return pred_scores.size(); }
  std::size_t num_gts() const { return gt_areas.size(); }
  double iou(std::size_t p, std::size_t g) const { return ious[p * gt_areas.size() + g]; }
};

struct MatchPair {
  std::size_t pred;
  std::size_t gt;
  double iou;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchSet {
  double threshold = 0.0;
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

// Prediction indices by descending score, ties by ascending index.
inline std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Greedy matching in `pred_order`. Each prediction takes the unmatched GT
// with the highest IoU >= threshold (ties to the lower GT index), preferring
// non-ignored GTs over ignored ones. Returns the matched GT per position in
// pred_order, or -1.
inline std::vector<std::ptrdiff_t> greedy_match(const ImageEvalInput& in,
                                                std::span<const std::size_t> pred_order,
                                                std::span<const std::uint8_t> gt_ignore,
                                                double threshold) {
  const std::size_t num_gts = in.num_gts();
  std::vector<std::uint8_t> taken(num_gts, 0);
  std::vector<std::ptrdiff_t> result(pred_order.size(), -1);
  for (std::size_t k = 0; k < pred_order.size(); ++k) {
    const std::size_t p = pred_order[k];
    std::ptrdiff_t best = -1;
    double best_iou = 0.0;
    for (int pass = 0; pass < 2 && best < 0; ++pass) {
      for (std::size_t g = 0; g < num_gts; ++g) {
        if (taken[g] || (gt_ignore.empty() ? pass == 1 : gt_ignore[g] != pass)) continue;
        const double iou = in.iou(p, g);
        if (iou >= threshold && (best < 0 || iou > best_iou)) {
          best = static_cast<std::ptrdiff_t>(g);
          best_iou = iou;
        }
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = 1;
      result[k] = best;
    }
  }
  return result;
}

inline MatchSet match_image(const ImageEvalInput& in, double threshold) {
  MatchSet out;
  out.threshold = threshold;
  const auto order = score_order(in.pred_scores);
  const auto matched = greedy_match(in, order, {}, threshold);
  std::vector<std::uint8_t> gt_used(in.num_gts(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (matched[k] < 0) {
      out.unmatched_preds.push_back(order[k]);
    } else {
      const auto g = static_cast<std::size_t>(matched[k]);
      gt_used[g] = 1;
      out.pairs.push_back({order[k], g, in.iou(order[k], g)});
    }
  }
  for (std::size_t g = 0; g < in.num_gts(); ++g) {
    if (!gt_used[g]) out.unmatched_gts.push_back(g);
  }
  return out;
}

// Mask-level matching for one image. Void pixels are removed from each
// prediction before its IoU is computed.
inline MatchSet match_image(std::span<const ScoredEntity> preds,
                            std::span<const BinaryMask> gts, double threshold,
                            const BinaryMask& void_mask) {
  ImageEvalInput in;
  for (const auto& p : preds) {
    in.pred_scores.push_back(p.score);
    in.pred_areas.push_back(static_cast<double>(mask_area(p.mask)));
  }
  for (const auto& g : gts) in.gt_areas.push_back(static_cast<double>(mask_area(g)));
  in.ious.reserve(preds.size() * gts.size());
  for (const auto& p : preds) {
    for (const auto& g : gts) in.ious.push_back(mask_iou(p.mask, g, void_mask));
  }
  return match_image(in, threshold);
}

// ---------------------------------------------------------------------------
// Per-image evaluation and dataset-level accumulation.

enum DetState : std::uint8_t { kFalsePositive = 0, kTruePositive = 1, kIgnored = 2 };

struct ImageEvaluation {
  std::vector<double> scores;  // kept detections, descending
  // state[bucket][threshold][k] for the k-th kept detection
  std::array<std::vector<std::vector<std::uint8_t>>, kNumBuckets> state;
  std::array<std::size_t, kNumBuckets> num_gt{};
};

inline ImageEvaluation evaluate_image(const ImageEvalInput& in, const EvalConfig& cfg) {
  ImageEvaluation ev;
  auto order = score_order(in.pred_scores);
  if (order.size() > cfg.max_dets_per_image) order.resize(cfg.max_dets_per_image);
  for (std::size_t p : order) ev.scores.push_back(in.pred_scores[p]);

  std::vector<std::uint8_t> gt_ignore(in.num_gts());
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    const auto bucket = static_cast<SizeBucket>(b);
    std::size_t count = 0;
    for (std::size_t g = 0; g < in.num_gts(); ++g) {
      gt_ignore[g] = in_bucket(in.gt_areas[g], bucket, cfg) ? 0 : 1;
      count += gt_ignore[g] ? 0 : 1;
    }
    ev.num_gt[b] = count;
    ev.state[b].resize(cfg.iou_thresholds.size());
    for (std::size_t t = 0; t < cfg.iou_thresholds.size(); ++t) {
      const auto matched = greedy_match(in, order, gt_ignore, cfg.iou_thresholds[t]);
      auto& states = ev.state[b][t];
      states.resize(order.size());
      for (std::size_t k = 0; k < order.size(); ++k) {
        if (matched[k] >= 0) {
          states[k] = gt_ignore[static_cast<std::size_t>(matched[k])] ? kIgnored : kTruePositive;
        } else {
          states[k] = in_bucket(in.pred_areas[order[k]], bucket, cfg) ? kFalsePositive : kIgnored;
        }
      }
    }
  }
  return ev;
}

struct ThresholdAp {
  double iou = 0.0;
  std::optional<double> ap;

  friend bool operator==(const ThresholdAp&, const ThresholdAp&) = default;
};

// Undefined values (no ground truth in scope) are empty optionals.
struct ApReport {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::optional<double> ap_s;
  std::optional<double> ap_m;
  std::optional<double> ap_l;
  std::vector<ThresholdAp> per_threshold;

  friend bool operator==(const ApReport&, const ApReport&) = default;
};

namespace detail {

inline Json optional_json(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

inline std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> at_threshold(const std::vector<ThresholdAp>& per, double t) {
  for (const auto& p : per) {
    if (std::abs(p.iou - t) < 1e-9) return p.ap;
  }
  return std::nullopt;
}

// 101-point style interpolated AP over a ranked list of TP/FP flags.
inline double interpolated_ap(std::span<const std::uint8_t> is_tp, std::size_t num_gt,
                              int recall_points) {
  const std::size_t n = is_tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_tp[i];
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0.0;
  for (int k = 0; k < recall_points; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(recall_points - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(recall_points);
}

}  // namespace detail

inline Json ap_report_to_json(const ApReport& r) {
  Json j;
  j["ap"] = detail::optional_json(r.ap);
  j["ap50"] = detail::optional_json(r.ap50);
  j["ap75"] = detail::optional_json(r.ap75);
  j["ap_s"] = detail::optional_json(r.ap_s);
  j["ap_m"] = detail::optional_json(r.ap_m);
  j["ap_l"] = detail::optional_json(r.ap_l);
  Json per = Json::array();
  for (const auto& p : r.per_threshold) {
    per.push_back({{"iou", p.iou}, {"ap", detail::optional_json(p.ap)}});
  }
  j["per_threshold"] = std::move(per);
  return j;
}

inline ApReport accumulate(std::span<const ImageEvaluation> images, const EvalConfig& cfg) {
  struct Ref {
    double score;
    std::uint32_t image;
    std::uint32_t rank;
  };
  std::vector<Ref> pooled;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t k = 0; k < images[i].scores.size(); ++k) {
      pooled.push_back({images[i].scores[k], static_cast<std::uint32_t>(i),
                        static_cast<std::uint32_t>(k)});
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });

  const std::size_t num_t = cfg.iou_thresholds.size();
  std::array<std::vector<std::optional<double>>, kNumBuckets> ap_bt;
  std::vector<std::uint8_t> ranked;
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    std::size_t num_gt = 0;
    for (const auto& im : images) num_gt += im.num_gt[b];
    ap_bt[b].assign(num_t, std::nullopt);
    if (num_gt == 0) continue;
    for (std::size_t t = 0; t < num_t; ++t) {
      ranked.clear();
      for (const auto& ref : pooled) {
        const std::uint8_t s = images[ref.image].state[b][t][ref.rank];
        if (s != kIgnored) ranked.push_back(s == kTruePositive ? 1 : 0);
      }
      ap_bt[b][t] = detail::interpolated_ap(ranked, num_gt, cfg.recall_points);
    }
  }

  ApReport report;
  for (std::size_t t = 0; t < num_t; ++t) {
    report.per_threshold.push_back({cfg.iou_thresholds[t], ap_bt[0][t]});
  }
  report.ap = detail::mean_defined(ap_bt[0]);
  report.ap50 = detail::at_threshold(report.per_threshold, 0.5);
  report.ap75 = detail::at_threshold(report.per_threshold, 0.75);
  report.ap_s = detail::mean_defined(ap_bt[1]);
  report.ap_m = detail::mean_defined(ap_bt[2]);
  report.ap_l = detail::mean_defined(ap_bt[3]);
  return report;
}

inline ApReport evaluate_inputs(std::span<const ImageEvalInput> inputs, const EvalConfig& cfg,
                                int threads = 1) {
  cfg.validate();
  std::vector<ImageEvaluation> evals(inputs.size());
  parallel_for(inputs.size(), threads,
               [&](std::size_t i) { evals[i] = evaluate_image(inputs[i], cfg); });
  return accumulate(evals, cfg);
}

// ---------------------------------------------------------------------------
// Mask inputs.

namespace detail {

// Maps sparse ids to dense slots.
class IdIndex {
 public:
  explicit IdIndex(std::vector<EntityId> sorted_ids) : ids_(std::move(sorted_ids)) {
    const EntityId max_id = ids_.empty() ? 0 : ids_.back();
    if (max_id <= (1u << 22)) {
      table_.assign(static_cast<std::size_t>(max_id) + 1, -1);
      for (std::size_t i = 0; i < ids_.size(); ++i) table_[ids_[i]] = static_cast<std::int32_t>(i);
    }
  }

  const std::vector<EntityId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }

  // Slot of `id`, or -1 (also for void).
  std::int32_t slot(EntityId id) const {
    if (!table_.empty() || ids_.empty()) {
      return id < table_.size() ? table_[id] : -1;
    }
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    return it != ids_.end() && *it == id ? static_cast<std::int32_t>(it - ids_.begin()) : -1;
  }

 private:
  std::vector<EntityId> ids_;
  std::vector<std::int32_t> table_;
};

inline void require_same_dims(const EntityMap& a, const EntityMap& b, const std::string& who) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(who + ": prediction is " + dims_str(a.height(), a.width()) +
                     ", ground truth is " + dims_str(b.height(), b.width()));
  }
}

inline double iou_from_counts(PixelCount inter, PixelCount pred_nonvoid, PixelCount gt_area) {
  return ratio(inter, pred_nonvoid + gt_area - inter);
}

}  // namespace detail

// Entity-map vs entity-map input. Predictions are indexed by ascending id;
// GT pixels with id 0 are void and are removed from the prediction side.
inline ImageEvalInput entity_eval_input(const EntityMap& pred, const ScoreTable& scores,
                                        const EntityMap& gt) {
  detail::require_same_dims(pred, gt, "entity_eval_input");
  const detail::IdIndex pidx(pred.entity_ids());
  const detail::IdIndex gidx(gt.entity_ids());
  const std::size_t np = pidx.size();
  const std::size_t ng = gidx.size();
  // Column ng collects pred pixels on void.
  std::vector<PixelCount> hist(np * (ng + 1), 0);
  std::vector<PixelCount> gt_area(ng, 0);
  const auto pids = pred.ids();
  const auto gids = gt.ids();
  for (std::size_t i = 0; i < pids.size(); ++i) {
    const std::int32_t g = gids[i] == 0 ? static_cast<std::int32_t>(ng) : gidx.slot(gids[i]);
    if (g < static_cast<std::int32_t>(ng)) ++gt_area[static_cast<std::size_t>(g)];
    if (pids[i] == 0) continue;
    const std::int32_t p = pidx.slot(pids[i]);
    ++hist[static_cast<std::size_t>(p) * (ng + 1) + static_cast<std::size_t>(g)];
  }
  ImageEvalInput in;
  in.pred_scores.resize(np);
  in.pred_areas.resize(np);
  in.gt_areas.assign(gt_area.begin(), gt_area.end());
  in.ious.resize(np * ng);
  for (std::size_t p = 0; p < np; ++p) {
    auto it = scores.find(pidx.ids()[p]);
    if (it == scores.end()) {
      throw ValidationError("entity " + std::to_string(pidx.ids()[p]) + " has no score entry");
    }
    in.pred_scores[p] = it->second;
    const PixelCount* row = &hist[p * (ng + 1)];
    PixelCount nonvoid = 0;
    for (std::size_t g = 0; g < ng; ++g) nonvoid += row[g];
    in.pred_areas[p] = static_cast<double>(nonvoid + row[ng]);
    for (std::size_t g = 0; g < ng; ++g) {
      in.ious[p * ng + g] = detail::iou_from_counts(row[g], nonvoid, gt_area[g]);
    }
  }
  return in;
}

// Possibly overlapping scored masks vs an entity map. Predictions keep
// their list order as index.
inline ImageEvalInput tolerant_eval_input(std::span<const ScoredEntity> preds,
                                          const EntityMap& gt) {
  const detail::IdIndex gidx(gt.entity_ids());
  const std::size_t ng = gidx.size();
  const auto gids = gt.ids();
  ImageEvalInput in;
  in.gt_areas.assign(ng, 0.0);
  for (EntityId id : gids) {
    if (id != 0) in.gt_areas[static_cast<std::size_t>(gidx.slot(id))] += 1.0;
  }
  std::vector<PixelCount> inter(ng);
  for (const auto& p : preds) {
    if (p.mask.height() != gt.height() || p.mask.width() != gt.width()) {
      throw ShapeError("entity " + std::to_string(p.entity_id) + " is " +
                       detail::dims_str(p.mask.height(), p.mask.width()) +
                       ", ground truth is " + detail::dims_str(gt.height(), gt.width()));
    }
    std::fill(inter.begin(), inter.end(), 0);
    PixelCount area = 0;
    PixelCount nonvoid = 0;
    const auto bits = p.mask.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (!bits[i]) continue;
      ++area;
      if (gids[i] == 0) continue;
      ++nonvoid;
      ++inter[static_cast<std::size_t>(gidx.slot(gids[i]))];
    }
    in.pred_scores.push_back(p.score);
    in.pred_areas.push_back(static_cast<double>(area));
    for (std::size_t g = 0; g < ng; ++g) {
      in.ious.push_back(detail::iou_from_counts(inter[g], nonvoid,
                                                static_cast<PixelCount>(in.gt_areas[g])));
    }
  }
  return in;
}

using ResolvedSet = std::map<std::int64_t, ResolvedPrediction>;
using ScoredSet = std::map<std::int64_t, std::vector<ScoredEntity>>;

namespace detail {

template <typename PredMap>
void check_known_images(const PredMap& preds, const EntityDataset& gts) {
  std::set<std::int64_t> known;
  for (const auto& im : gts.images) known.insert(im.image_id);
  for (const auto& [id, _] : preds) {
    if (!known.count(id)) {
      throw ValidationError(image_label(id) + ": prediction for an image absent from the ground truth");
    }
  }
}

inline void require_agnostic(const EvalConfig& cfg, const char* metric) {
  if (cfg.mode != EvalMode::kCategoryAgnostic) {
    throw ConfigError(std::string(metric) + " is category-agnostic only");
  }
}

}  // namespace detail

// Strict entity AP over resolved (inherently non-overlapping) predictions.
// Images without a prediction count as having zero detections.
inline ApReport ap_entity(const ResolvedSet& preds, const EntityDataset& gts,
                          const EvalConfig& cfg, int threads = 1) {
  cfg.validate();
  detail::require_agnostic(cfg, "entity AP");
  detail::check_known_images(preds, gts);
  std::vector<ImageEvaluation> evals(gts.images.size());
  parallel_for(gts.images.size(), threads, [&](std::size_t i) {
    const ImageRecord& im = gts.images[i];
    const std::string who = image_label(im.image_id);
    const EntityMap gt = entity_map_of(im);
    auto it = preds.find(im.image_id);
    ImageEvalInput in;
    if (it == preds.end()) {
      in = entity_eval_input(EntityMap(im.height, im.width), ScoreTable{{0, 0.0}}, gt);
    } else {
      try {
        validate_prediction(it->second);
        in = entity_eval_input(it->second.map, it->second.scores, gt);
      } catch (const ValidationError& e) {
        throw ValidationError(who + ": " + e.what());
      } catch (const ShapeError& e) {
        throw ShapeError(who + ": " + e.what());
      }
    }
    evals[i] = evaluate_image(in, cfg);
  });
  return accumulate(evals, cfg);
}

// Builds the resolved form of a scored-mask prediction, rejecting any
// overlap between different entities.
inline ResolvedPrediction compose_prediction(std::span<const ScoredEntity> entities,
                                             int height, int width) {
  std::vector<EntityMask> masks;
  ResolvedPrediction out;
  for (const auto& e : entities) {
    if (out.scores.count(e.entity_id)) {
      throw ValidationError("entity " + std::to_string(e.entity_id) + " appears twice");
    }
    masks.push_back({e.entity_id, e.mask});
    out.scores[e.entity_id] = e.score;
  }
  out.map = compose_entity_map(height, width, masks);
  std::set<EntityId> present;
  for (EntityId id : out.map.entity_ids()) present.insert(id);
  for (auto it = out.scores.begin(); it != out.scores.end();) {
    it = (it->first != 0 && !present.count(it->first)) ? out.scores.erase(it) : std::next(it);
  }
  return out;
}

// Entity AP on the scored-mask form: any overlap is a constraint violation.
inline ApReport ap_entity(const ScoredSet& preds, const EntityDataset& gts,
                          const EvalConfig& cfg, int threads = 1) {
  detail::check_known_images(preds, gts);
  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& im : gts.images) by_id[im.image_id] = &im;
  ResolvedSet resolved;
  for (const auto& [id, list] : preds) {
    const ImageRecord& im = *by_id.at(id);
    try {
      resolved.emplace(id, compose_prediction(list, im.height, im.width));
    } catch (const ConstraintViolation& e) {
      throw ConstraintViolation(image_label(id) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError(image_label(id) + ": " + e.what());
    }
  }
  return ap_entity(resolved, gts, cfg, threads);
}

inline ApReport ap_overlap_tolerant(const ScoredSet& preds, const EntityDataset& gts,
                                    const EvalConfig& cfg, int threads = 1) {
  cfg.validate();
  detail::require_agnostic(cfg, "overlap-tolerant AP");
  detail::check_known_images(preds, gts);
  std::vector<ImageEvaluation> evals(gts.images.size());
  static const std::vector<ScoredEntity> kNone;
  parallel_for(gts.images.size(), threads, [&](std::size_t i) {
    const ImageRecord& im = gts.images[i];
    auto it = preds.find(im.image_id);
    const auto& list = it == preds.end() ? kNone : it->second;
    try {
      evals[i] = evaluate_image(tolerant_eval_input(list, entity_map_of(im)), cfg);
    } catch (const ShapeError& e) {
      throw ShapeError(image_label(im.image_id) + ": " + e.what());
    }
  });
  return accumulate(evals, cfg);
}

// ---------------------------------------------------------------------------
// Box AP.

struct ScoredBox {
  Bbox box;
  double score = 0.0;
  std::optional<std::int64_t> category;
};

struct GtBox {
  Bbox box;
  std::optional<std::int64_t> category;
};

using BoxSet = std::map<std::int64_t, std::vector<ScoredBox>>;
using GtBoxSet = std::map<std::int64_t, std::vector<GtBox>>;

inline GtBoxSet gt_boxes_of(const EntityDataset& ds) {
  GtBoxSet out;
  for (const auto& im : ds.images) {
    auto& list = out[im.image_id];
    for (const auto& e : im.entities) list.push_back({e.bbox, e.source_category});
  }
  return out;
}

namespace detail {

inline ImageEvalInput box_eval_input(std::span<const ScoredBox> dets, std::span<const GtBox> gts,
                                     std::optional<std::int64_t> category) {
  ImageEvalInput in;
  std::vector<const GtBox*> g_kept;
  for (const auto& g : gts) {
    if (!category || g.category == category) {
      g_kept.push_back(&g);
      in.gt_areas.push_back(static_cast<double>(g.box.area()));
    }
  }
  for (const auto& d : dets) {
    if (category && d.category != category) continue;
    in.pred_scores.push_back(d.score);
    in.pred_areas.push_back(static_cast<double>(d.box.area()));
    for (const GtBox* g : g_kept) in.ious.push_back(box_iou(d.box, g->box));
  }
  return in;
}

inline ApReport average_reports(std::span<const ApReport> reports, const EvalConfig& cfg) {
  ApReport out;
  auto field = [&](auto member) {
    std::vector<std::optional<double>> v;
    for (const auto& r : reports) v.push_back(r.*member);
    return mean_defined(v);
  };
  out.ap = field(&ApReport::ap);
  out.ap50 = field(&ApReport::ap50);
  out.ap75 = field(&ApReport::ap75);
  out.ap_s = field(&ApReport::ap_s);
  out.ap_m = field(&ApReport::ap_m);
  out.ap_l = field(&ApReport::ap_l);
  for (std::size_t t = 0; t < cfg.iou_thresholds.size(); ++t) {
    std::vector<std::optional<double>> v;
    for (const auto& r : reports) v.push_back(r.per_threshold[t].ap);
    out.per_threshold.push_back({cfg.iou_thresholds[t], mean_defined(v)});
  }
  return out;
}

}  // namespace detail

// Agnostic mode pools every box regardless of label. Oriented mode computes
// AP per category over all images and averages over categories that have
// ground truth.
inline ApReport ap_box(const BoxSet& dets, const GtBoxSet& gts, const EvalConfig& cfg,
                       int threads = 1) {
  cfg.validate();
  for (const auto& [id, _] : dets) {
    if (!gts.count(id)) {
      throw ValidationError(image_label(id) + ": detections for an image absent from the ground truth");
    }
  }
  std::vector<std::int64_t> image_ids;
  for (const auto& [id, _] : gts) image_ids.push_back(id);
  static const std::vector<ScoredBox> kNone;
  auto dets_of = [&](std::int64_t id) -> const std::vector<ScoredBox>& {
    auto it = dets.find(id);
    return it == dets.end() ? kNone : it->second;
  };

  auto run = [&](std::optional<std::int64_t> category) {
    std::vector<ImageEvaluation> evals(image_ids.size());
    parallel_for(image_ids.size(), threads, [&](std::size_t i) {
      const auto id = image_ids[i];
      evals[i] = evaluate_image(detail::box_eval_input(dets_of(id), gts.at(id), category), cfg);
    });
    return accumulate(evals, cfg);
  };

  if (cfg.mode == EvalMode::kCategoryAgnostic) return run(std::nullopt);

  std::set<std::int64_t> categories;
  for (const auto& [id, list] : gts) {
    for (const auto& g : list) {
      if (!g.category) throw ConfigError(image_label(id) + ": ground-truth box without a category");
      categories.insert(*g.category);
    }
  }
  for (const auto& [id, list] : dets) {
    for (const auto& d : list) {
      if (!d.category) throw ConfigError(image_label(id) + ": detection without a category");
      categories.insert(*d.category);
    }
  }
  std::vector<ApReport> per_category;
  for (std::int64_t c : categories) per_category.push_back(run(c));
  return detail::average_reports(per_category, cfg);
}

// ---------------------------------------------------------------------------
// Panoptic quality.

struct CategorizedPrediction {
  ResolvedPrediction prediction;
  std::map<EntityId, std::int64_t> categories;
};

using CategorizedSet = std::map<std::int64_t, CategorizedPrediction>;

struct PqCategory {
  std::int64_t category = 0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  friend bool operator==(const PqCategory&, const PqCategory&) = default;
};

struct PqReport {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::vector<PqCategory> per_category;

  friend bool operator==(const PqReport&, const PqReport&) = default;
};

inline Json pq_report_to_json(const PqReport& r) {
  Json j;
  j["pq"] = r.pq;
  j["sq"] = r.sq;
  j["rq"] = r.rq;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  Json per = Json::array();
  for (const auto& c : r.per_category) {
    per.push_back({{"category", c.category}, {"pq", c.pq}, {"sq", c.sq}, {"rq", c.rq},
                   {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  }
  j["per_category"] = std::move(per);
  return j;
}

// Segments match iff they share a category and IoU > 0.5, where the IoU
// excludes prediction pixels on void. Unmatched predictions lying more than
// half on void are not counted as false positives.
inline PqReport pq(const CategorizedSet& preds, const EntityDataset& gts, int threads = 1) {
  detail::check_known_images(preds, gts);
  struct Accum {
    double iou_sum = 0.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
  };
  using PerImage = std::map<std::int64_t, Accum>;
  std::vector<PerImage> partial(gts.images.size());

  parallel_for(gts.images.size(), threads, [&](std::size_t i) {
    const ImageRecord& im = gts.images[i];
    const std::string who = image_label(im.image_id);
    std::map<EntityId, std::int64_t> gt_cat;
    for (const auto& e : im.entities) {
      if (!e.source_category) {
        throw ConfigError(who + ": ground truth lacks categories; use entity AP instead");
      }
      gt_cat[e.entity_id] = *e.source_category;
    }
    const EntityMap gt = entity_map_of(im);
    auto it = preds.find(im.image_id);
    const CategorizedPrediction empty{ResolvedPrediction{EntityMap(im.height, im.width), {{0, 0.0}}}, {}};
    const CategorizedPrediction& cp = it == preds.end() ? empty : it->second;
    detail::require_same_dims(cp.prediction.map, gt, who);
    try {
      validate_prediction(cp.prediction);
    } catch (const ValidationError& e) {
      throw ValidationError(who + ": " + e.what());
    }

    std::map<EntityId, PixelCount> pred_area, pred_void, gt_area;
    std::map<std::pair<EntityId, EntityId>, PixelCount> inter;
    const auto pids = cp.prediction.map.ids();
    const auto gids = gt.ids();
    for (std::size_t k = 0; k < pids.size(); ++k) {
      if (gids[k] != 0) ++gt_area[gids[k]];
      if (pids[k] == 0) continue;
      ++pred_area[pids[k]];
      if (gids[k] == 0) {
        ++pred_void[pids[k]];
      } else {
        ++inter[{pids[k], gids[k]}];
      }
    }
    for (const auto& [pid, _] : pred_area) {
      if (!cp.categories.count(pid)) {
        throw ConfigError(who + ": predicted entity " + std::to_string(pid) +
                          " lacks a category; use entity AP instead");
      }
    }

    PerImage& acc = partial[i];
    std::set<EntityId> pred_matched, gt_matched;
    for (const auto& [key, count] : inter) {
      const auto [pid, gid] = key;
      if (cp.categories.at(pid) != gt_cat.at(gid)) continue;
      const PixelCount uni = pred_area[pid] + gt_area[gid] - count - pred_void[pid];
      const double iou = detail::ratio(count, uni);
      if (iou > 0.5) {
        auto& a = acc[gt_cat.at(gid)];
        a.iou_sum += iou;
        ++a.tp;
        pred_matched.insert(pid);
        gt_matched.insert(gid);
      }
    }
    for (const auto& [gid, _] : gt_area) {
      if (!gt_matched.count(gid)) ++acc[gt_cat.at(gid)].fn;
    }
    for (const auto& [pid, area] : pred_area) {
      if (pred_matched.count(pid)) continue;
      if (static_cast<double>(pred_void[pid]) / static_cast<double>(area) > 0.5) continue;
      ++acc[cp.categories.at(pid)].fp;
    }
  });

  std::map<std::int64_t, Accum> total;
  for (const auto& per : partial) {
    for (const auto& [cat, a] : per) {
      auto& t = total[cat];
      t.iou_sum += a.iou_sum;
      t.tp += a.tp;
      t.fp += a.fp;
      t.fn += a.fn;
    }
  }
  PqReport report;
  for (const auto& [cat, a] : total) {
    if (a.tp + a.fp + a.fn == 0) continue;
    PqCategory c;
    c.category = cat;
    c.tp = a.tp;
    c.fp = a.fp;
    c.fn = a.fn;
    const double denom = static_cast<double>(a.tp) + 0.5 * a.fp + 0.5 * a.fn;
    c.pq = a.iou_sum / denom;
    c.sq = a.tp > 0 ? a.iou_sum / static_cast<double>(a.tp) : 0.0;
    c.rq = static_cast<double>(a.tp) / denom;
    report.tp += a.tp;
    report.fp += a.fp;
    report.fn += a.fn;
    report.per_category.push_back(c);
  }
  if (!report.per_category.empty()) {
    for (const auto& c : report.per_category) {
      report.pq += c.pq;
      report.sq += c.sq;
      report.rq += c.rq;
    }
    const auto n = static_cast<double>(report.per_category.size());
    report.pq /= n;
    report.sq /= n;
    report.rq /= n;
  }
  return report;
}

}  // namespace entityseg
