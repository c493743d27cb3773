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

// Independent reference implementations used only by the tests. They are
// written for obviousness, not speed, and share no code with the library
// beyond its plain data types.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "entityseg/mask.hpp"

namespace entityseg::oracle {

using Pixel = std::pair<int, int>;  // (row, col)
using PixelSet = std::set<Pixel>;

inline PixelSet pixels_of(const BinaryMask& m) {
  PixelSet s;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (m.at(r, c)) s.insert({r, c});
    }
  }
  return s;
}

inline PixelSet pixels_of(const EntityMap& m, EntityId id) {
  PixelSet s;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (m.at(r, c) == id) s.insert({r, c});
    }
  }
  return s;
}

inline PixelSet box_pixels(const Bbox& b) {
  PixelSet s;
  for (int y = b.y_min; y < b.y_min + b.height; ++y) {
    for (int x = b.x_min; x < b.x_min + b.width; ++x) s.insert({y, x});
  }
  return s;
}

inline std::size_t intersection_size(const PixelSet& a, const PixelSet& b) {
  std::size_t n = 0;
  for (const auto& p : a) n += b.count(p);
  return n;
}

// |pred' & gt| / |pred' | gt| with pred' = pred minus void.
inline double set_iou(const PixelSet& pred, const PixelSet& gt, const PixelSet& void_px = {}) {
  PixelSet kept;
  for (const auto& p : pred) {
    if (!void_px.count(p)) kept.insert(p);
  }
  PixelSet uni = kept;
  uni.insert(gt.begin(), gt.end());
  if (uni.empty()) return 0.0;
  return static_cast<double>(intersection_size(kept, gt)) / static_cast<double>(uni.size());
}

inline double rect_iou(const Bbox& a, const Bbox& b) { return set_iou(box_pixels(a), box_pixels(b)); }

// Column-major walk counting alternating runs, background first.
inline std::vector<std::uint32_t> naive_runs(const BinaryMask& m) {
  std::vector<std::uint32_t> runs{0};
  int current = 0;
  for (int c = 0; c < m.width(); ++c) {
    for (int r = 0; r < m.height(); ++r) {
      const int v = m.at(r, c) ? 1 : 0;
      if (v != current) {
        runs.push_back(0);
        current = v;
      }
      ++runs.back();
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// AP reference.

struct RefImage {
  std::vector<double> scores;
  std::vector<double> pred_areas;
  std::vector<double> gt_areas;
  std::vector<std::vector<double>> iou;  // iou[pred][gt]
};

struct RefConfig {
  std::vector<double> thresholds;
  int recall_points = 101;
  std::size_t max_dets = 100;
  double small_below = 1024.0;
  double large_above = 9216.0;
};

struct RefReport {
  std::optional<double> ap, ap50, ap75, ap_s, ap_m, ap_l;
  std::vector<std::optional<double>> per_threshold;
};

inline bool ref_in_bucket(double area, int bucket, const RefConfig& cfg) {
  if (bucket == 0) return true;
  if (bucket == 1) return area < cfg.small_below;
  if (bucket == 2) return !(area < cfg.small_below) && !(area > cfg.large_above);
  return area > cfg.large_above;
}

// Exhaustive per-image matching. Returns state per ranked prediction:
// 0 false positive, 1 true positive, 2 ignored.
inline std::vector<std::pair<std::size_t, int>> ref_match(const RefImage& im, int bucket, double t,
                                                         const RefConfig& cfg) {
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t p = 0; p < im.scores.size(); ++p) ranked.push_back({-im.scores[p], p});
  std::sort(ranked.begin(), ranked.end());
  if (ranked.size() > cfg.max_dets) ranked.resize(cfg.max_dets);

  std::vector<bool> used(im.gt_areas.size(), false);
  std::vector<std::pair<std::size_t, int>> out;
  for (const auto& [neg_score, p] : ranked) {
    // Candidate key: (ignored, -iou, index); the smallest wins.
    std::optional<std::tuple<int, double, std::size_t>> best;
    for (std::size_t g = 0; g < im.gt_areas.size(); ++g) {
      if (used[g] || im.iou[p][g] < t) continue;
      const int ignored = ref_in_bucket(im.gt_areas[g], bucket, cfg) ? 0 : 1;
      const auto key = std::make_tuple(ignored, -im.iou[p][g], g);
      if (!best || key < *best) best = key;
    }
    int state;
    if (best) {
      used[std::get<2>(*best)] = true;
      state = std::get<0>(*best) ? 2 : 1;
    } else {
      state = ref_in_bucket(im.pred_areas[p], bucket, cfg) ? 0 : 2;
    }
    out.push_back({p, state});
  }
  return out;
}

// Interpolated precision read directly as the best precision at any recall
// at or above each sample point.
inline double ref_interpolated_ap(const std::vector<int>& is_tp, std::size_t num_gt, int points) {
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double total = 0.0;
  for (int k = 0; k < points; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(points - 1);
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= r) best = std::max(best, precision[i]);
    }
    total += best;
  }
  return total / points;
}

inline std::optional<double> ref_mean(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

inline RefReport reference_ap(const std::vector<RefImage>& images, const RefConfig& cfg) {
  std::vector<std::vector<std::optional<double>>> by_bucket(4);
  for (int b = 0; b < 4; ++b) {
    std::size_t num_gt = 0;
    for (const auto& im : images) {
      for (double a : im.gt_areas) num_gt += ref_in_bucket(a, b, cfg) ? 1 : 0;
    }
    for (double t : cfg.thresholds) {
      if (num_gt == 0) {
        by_bucket[b].push_back(std::nullopt);
        continue;
      }
      // (-score, image, rank, state)
      std::vector<std::tuple<double, std::size_t, std::size_t, int>> pool;
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto states = ref_match(images[i], b, t, cfg);
        for (std::size_t k = 0; k < states.size(); ++k) {
          pool.push_back({-images[i].scores[states[k].first], i, k, states[k].second});
        }
      }
      std::sort(pool.begin(), pool.end());
      std::vector<int> is_tp;
      for (const auto& e : pool) {
        if (std::get<3>(e) != 2) is_tp.push_back(std::get<3>(e));
      }
      by_bucket[b].push_back(ref_interpolated_ap(is_tp, num_gt, cfg.recall_points));
    }
  }
  RefReport r;
  r.per_threshold = by_bucket[0];
  r.ap = ref_mean(by_bucket[0]);
  for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
    if (std::abs(cfg.thresholds[t] - 0.5) < 1e-12) r.ap50 = by_bucket[0][t];
    if (std::abs(cfg.thresholds[t] - 0.75) < 1e-12) r.ap75 = by_bucket[0][t];
  }
  r.ap_s = ref_mean(by_bucket[1]);
  r.ap_m = ref_mean(by_bucket[2]);
  r.ap_l = ref_mean(by_bucket[3]);
  return r;
}

// ---------------------------------------------------------------------------
// Resolver reference.

struct RefScored {
  EntityId id;
  PixelSet pixels;
  double score;
  std::map<Pixel, double> probs;  // empty means 1 everywhere
};

// Winner per pixel by max score * prob, ties to the lower id; 0 if uncovered.
inline EntityMap brute_force_argmax(const std::vector<RefScored>& ents, int h, int w) {
  EntityMap out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      EntityId best = 0;
      double best_conf = -1.0;
      for (const auto& e : ents) {
        if (!e.pixels.count({r, c})) continue;
        const double prob = e.probs.empty() ? 1.0 : e.probs.at({r, c});
        const double conf = e.score * prob;
        if (conf > best_conf || (conf == best_conf && e.id < best)) {
          best = e.id;
          best_conf = conf;
        }
      }
      out.set(r, c, best);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss references.

inline double ref_dice(const std::vector<double>& p, const std::vector<double>& y, double eps) {
  double py = 0.0, pp = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    py += p[i] * y[i];
    pp += p[i] * p[i];
    yy += y[i] * y[i];
  }
  return 1.0 - (2.0 * py + eps) / (pp + yy + eps);
}

// y = relu(W x + b) for one dense layer; `relu` off for the last layer.
inline std::vector<double> ref_affine(const std::vector<std::vector<double>>& w,
                                      const std::vector<double>& b, const std::vector<double>& x,
                                      bool relu) {
  std::vector<double> y(w.size());
  for (std::size_t o = 0; o < w.size(); ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < x.size(); ++i) s += w[o][i] * x[i];
    y[o] = relu ? std::max(0.0, s) : s;
  }
  return y;
}

}  // namespace entityseg::oracle
