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

// Seeded synthetic entity maps for benchmarking the evaluator end to end.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "entityseg/evaluator.hpp"
#include "entityseg/mask.hpp"
#include "entityseg/parallel.hpp"
#include "entityseg/prng.hpp"

namespace entityseg {

struct SyntheticSpec {
  std::size_t images = 100;
  int height = 480;
  int width = 640;
  int entities = 12;
  std::uint64_t seed = 0;
};

struct SyntheticImage {
  EntityMap gt{1, 1};
  EntityMap pred{1, 1};
  ScoreTable scores{{0, 0.0}};
};

namespace detail {

struct Rect {
  int row, col, height, width;
};

// Guillotine partition: repeatedly split the largest rectangle across its
// longer side.
inline std::vector<Rect> guillotine(int height, int width, int pieces, Pcg32& rng) {
  std::vector<Rect> rects{{0, 0, height, width}};
  while (static_cast<int>(rects.size()) < pieces) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < rects.size(); ++i) {
      if (static_cast<long>(rects[i].height) * rects[i].width >
          static_cast<long>(rects[pick].height) * rects[pick].width) {
        pick = i;
      }
    }
    Rect r = rects[pick];
    const bool vertical = r.width >= r.height;
    const int side = vertical ? r.width : r.height;
    if (side < 2) break;
    const int lo = std::max(1, side * 3 / 10);
    const int hi = std::max(lo, side * 7 / 10);
    const int cut = rng.range(lo, hi);
    Rect a = r, b = r;
    if (vertical) {
      a.width = cut;
      b.col += cut;
      b.width -= cut;
    } else {
      a.height = cut;
      b.row += cut;
      b.height -= cut;
    }
    rects[pick] = a;
    rects.push_back(b);
  }
  return rects;
}

}  // namespace detail

// Image `index` draws from PCG stream `index`, so images can be generated in
// any order or in parallel.
inline SyntheticImage make_synthetic_image(const SyntheticSpec& spec, std::size_t index) {
  Pcg32 rng(spec.seed, index);
  const int h = spec.height;
  const int w = spec.width;
  const auto rects = detail::guillotine(h, w, std::max(spec.entities, 1), rng);
  const std::size_t k = rects.size();

  std::vector<EntityId> gt_of(k, 0), pred_of(k, 0);
  EntityId next_gt = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (rng.uniform() >= 0.1 || (i + 1 == k && next_gt == 0)) gt_of[i] = ++next_gt;
  }
  SyntheticImage out;
  EntityId next_pred = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double u = rng.uniform();
    if (u < 0.1) continue;
    if (u < 0.25 && i > 0 && pred_of[i - 1] != 0) {
      pred_of[i] = pred_of[i - 1];
      continue;
    }
    pred_of[i] = ++next_pred;
    out.scores[next_pred] = rng.uniform(0.05, 1.0);
  }
  const int shift = std::max(1, std::max(h, w) / 16);
  const int dy = rng.range(-shift, shift);
  const int dx = rng.range(-shift, shift);

  std::vector<std::uint16_t> cell(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& r = rects[i];
    for (int y = r.row; y < r.row + r.height; ++y) {
      std::fill_n(cell.begin() + static_cast<std::ptrdiff_t>(y) * w + r.col, r.width,
                  static_cast<std::uint16_t>(i));
    }
  }
  out.gt = EntityMap(h, w);
  out.pred = EntityMap(h, w);
  auto g = out.gt.mutable_ids();
  auto p = out.pred.mutable_ids();
  for (int y = 0; y < h; ++y) {
    const int sy = std::clamp(y + dy, 0, h - 1);
    for (int x = 0; x < w; ++x) {
      const int sx = std::clamp(x + dx, 0, w - 1);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g[i] = gt_of[cell[i]];
      p[i] = pred_of[cell[static_cast<std::size_t>(sy) * w + sx]];
    }
  }
  return out;
}

struct BenchResult {
  ApReport report;
  double seconds = 0.0;
  std::size_t images = 0;
  std::size_t gt_entities = 0;
  std::size_t pred_entities = 0;
};

// Generates and evaluates every image on the worker pool; only the compact
// per-image match results are retained.
inline BenchResult run_synthetic_benchmark(const SyntheticSpec& spec, const EvalConfig& cfg,
                                           int threads) {
  if (spec.images == 0) throw UsageError("benchmark needs at least one image");
  if (spec.height < 1 || spec.width < 1 || spec.entities < 1) {
    throw UsageError("benchmark dimensions and entity count must be positive");
  }
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<ImageEvaluation> evals(spec.images);
  std::vector<std::size_t> gt_counts(spec.images), pred_counts(spec.images);
  parallel_for(spec.images, threads, [&](std::size_t i) {
    const SyntheticImage im = make_synthetic_image(spec, i);
    const ImageEvalInput in = entity_eval_input(im.pred, im.scores, im.gt);
    gt_counts[i] = in.num_gts();
    pred_counts[i] = in.num_preds();
    evals[i] = evaluate_image(in, cfg);
  });
  BenchResult out;
  out.report = accumulate(evals, cfg);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.images = spec.images;
  for (std::size_t i = 0; i < spec.images; ++i) {
    out.gt_entities += gt_counts[i];
    out.pred_entities += pred_counts[i];
  }
  return out;
}

}  // namespace entityseg
