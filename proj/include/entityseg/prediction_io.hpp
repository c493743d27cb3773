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

// Prediction file formats.
//
// Scored-mask file (overlap tolerant):
//   {"images": [{"image_id", "height", "width", "entities": [
//       {"entity_id", "rle", "score"?, "entityness"?, "centerness"?,
//        "pixel_probs"?, "category"?, "bbox"?}]}]}
// pixel_probs lists one probability per foreground pixel, in the same
// column-major order as the rle.
//
// Resolved directory: <dir>/scores.json plus one ID PNG per image.
//   {"images": [{"image_id", "height", "width", "file_name",
//                "scores": [{"id": 0, "score": 0.0}, {"id", "score", "category"?}]}]}

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "entityseg/error.hpp"
#include "entityseg/evaluator.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/mask.hpp"
#include "entityseg/png_io.hpp"
#include "entityseg/resolver.hpp"

namespace entityseg {

struct PredictionEntry {
  EntityId entity_id = 0;
  std::optional<RleMask> rle;
  std::optional<double> score;
  std::optional<double> entityness;
  std::optional<double> centerness;
  std::optional<std::vector<double>> pixel_probs;
  std::optional<std::int64_t> category;
  std::optional<Bbox> bbox;

  // Aggregated score when entityness and centerness are both given.
  double effective_score() const {
    if (entityness && centerness) return aggregate_score(*entityness, *centerness);
    if (!score) {
      throw FormatError("entity " + std::to_string(entity_id) +
                        " needs a score or an entityness/centerness pair");
    }
    return *score;
  }
};

struct PredictionImage {
  std::int64_t image_id = 0;
  int height = 1;
  int width = 1;
  std::vector<PredictionEntry> entities;
};

inline std::vector<PredictionImage> predictions_from_json(const Json& doc) {
  using detail::json_get;
  if (!doc.is_object() || !doc.contains("images") || !doc.at("images").is_array()) {
    throw FormatError("prediction file needs an \"images\" list");
  }
  std::vector<PredictionImage> out;
  std::set<std::int64_t> seen;
  for (const auto& j : doc.at("images")) {
    PredictionImage im;
    im.image_id = json_get<std::int64_t>(j, "image_id", "prediction image");
    const std::string who = image_label(im.image_id);
    if (!seen.insert(im.image_id).second) throw FormatError(who + " appears twice");
    im.height = json_get<int>(j, "height", who);
    im.width = json_get<int>(j, "width", who);
    if (j.contains("entities")) {
      for (const auto& ej : j.at("entities")) {
        PredictionEntry e;
        e.entity_id = json_get<EntityId>(ej, "entity_id", who);
        const std::string ewho = who + " entity " + std::to_string(e.entity_id);
        try {
          if (ej.contains("rle")) e.rle = rle_from_json(ej.at("rle"));
          if (ej.contains("bbox")) e.bbox = bbox_from_json(ej.at("bbox"));
        } catch (const FormatError& err) {
          throw FormatError(ewho + ": " + err.what());
        }
        if (e.rle && (e.rle->height() != im.height || e.rle->width() != im.width)) {
          throw ShapeError(ewho + ": rle size differs from the image");
        }
        if (ej.contains("score")) e.score = json_get<double>(ej, "score", ewho);
        if (ej.contains("entityness")) e.entityness = json_get<double>(ej, "entityness", ewho);
        if (ej.contains("centerness")) e.centerness = json_get<double>(ej, "centerness", ewho);
        if (ej.contains("category") && !ej.at("category").is_null()) {
          e.category = json_get<std::int64_t>(ej, "category", ewho);
        }
        if (ej.contains("pixel_probs")) {
          e.pixel_probs = json_get<std::vector<double>>(ej, "pixel_probs", ewho);
        }
        im.entities.push_back(std::move(e));
      }
    }
    out.push_back(std::move(im));
  }
  return out;
}

inline std::vector<PredictionImage> read_predictions(const std::filesystem::path& path) {
  return predictions_from_json(read_json_file(path));
}

inline Json predictions_to_json(const std::vector<PredictionImage>& images) {
  Json doc;
  Json list = Json::array();
  for (const auto& im : images) {
    Json j;
    j["image_id"] = im.image_id;
    j["height"] = im.height;
    j["width"] = im.width;
    Json ents = Json::array();
    for (const auto& e : im.entities) {
      Json ej;
      ej["entity_id"] = e.entity_id;
      if (e.rle) ej["rle"] = rle_to_json(*e.rle);
      if (e.score) ej["score"] = *e.score;
      if (e.entityness) ej["entityness"] = *e.entityness;
      if (e.centerness) ej["centerness"] = *e.centerness;
      if (e.pixel_probs) ej["pixel_probs"] = *e.pixel_probs;
      if (e.category) ej["category"] = *e.category;
      if (e.bbox) ej["bbox"] = bbox_to_json(*e.bbox);
      ents.push_back(std::move(ej));
    }
    j["entities"] = std::move(ents);
    list.push_back(std::move(j));
  }
  doc["images"] = std::move(list);
  return doc;
}

// Support-ordered probabilities (column-major over foreground pixels) to a
// dense row-major map, and back.
inline std::vector<double> expand_pixel_probs(const BinaryMask& mask,
                                              std::span<const double> support) {
  std::vector<double> dense(mask.size(), 0.0);
  std::size_t k = 0;
  for (int c = 0; c < mask.width(); ++c) {
    for (int r = 0; r < mask.height(); ++r) {
      if (!mask.at(r, c)) continue;
      if (k >= support.size()) throw ShapeError("pixel_probs shorter than the mask support");
      const double v = support[k++];
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("pixel_probs must lie in [0, 1]");
      dense[static_cast<std::size_t>(r) * mask.width() + c] = v;
    }
  }
  if (k != support.size()) throw ShapeError("pixel_probs longer than the mask support");
  return dense;
}

inline std::vector<double> compact_pixel_probs(const BinaryMask& mask,
                                               std::span<const double> dense) {
  std::vector<double> support;
  for (int c = 0; c < mask.width(); ++c) {
    for (int r = 0; r < mask.height(); ++r) {
      if (mask.at(r, c)) support.push_back(dense[static_cast<std::size_t>(r) * mask.width() + c]);
    }
  }
  return support;
}

inline std::vector<ScoredEntity> scored_entities_of(const PredictionImage& im) {
  std::vector<ScoredEntity> out;
  for (const auto& e : im.entities) {
    const std::string who = image_label(im.image_id) + " entity " + std::to_string(e.entity_id);
    if (!e.rle) throw FormatError(who + ": mask metrics need an rle");
    ScoredEntity s;
    s.entity_id = e.entity_id;
    s.mask = rle_decode(*e.rle);
    try {
      s.score = e.effective_score();
      if (e.pixel_probs) s.pixel_probs = expand_pixel_probs(s.mask, *e.pixel_probs);
    } catch (const Error& err) {
      throw FormatError(who + ": " + err.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline ScoredSet scored_set_of(const std::vector<PredictionImage>& images) {
  ScoredSet out;
  for (const auto& im : images) out[im.image_id] = scored_entities_of(im);
  return out;
}

inline BoxSet box_set_of(const std::vector<PredictionImage>& images) {
  BoxSet out;
  for (const auto& im : images) {
    auto& list = out[im.image_id];
    for (const auto& e : im.entities) {
      ScoredBox b;
      if (e.bbox) {
        b.box = *e.bbox;
      } else if (e.rle) {
        b.box = bbox_of(rle_decode(*e.rle));
      } else {
        throw FormatError(image_label(im.image_id) + " entity " + std::to_string(e.entity_id) +
                          ": box metric needs a bbox or an rle");
      }
      b.score = e.effective_score();
      b.category = e.category;
      list.push_back(b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resolved directory.

struct ResolvedImage {
  std::int64_t image_id = 0;
  ResolvedPrediction prediction;
  std::map<EntityId, std::int64_t> categories;
};

inline std::string resolved_png_name(std::int64_t image_id) {
  return std::to_string(image_id) + ".png";
}

inline void write_resolved(const std::filesystem::path& dir,
                           const std::vector<ResolvedImage>& images) {
  std::filesystem::create_directories(dir);
  Json doc;
  Json list = Json::array();
  for (const auto& im : images) {
    validate_prediction(im.prediction);
    const std::string file = resolved_png_name(im.image_id);
    write_id_png(dir / file, im.prediction.map);
    Json j;
    j["image_id"] = im.image_id;
    j["height"] = im.prediction.map.height();
    j["width"] = im.prediction.map.width();
    j["file_name"] = file;
    Json scores = Json::array();
    for (const auto& [id, score] : im.prediction.scores) {
      Json s;
      s["id"] = id;
      s["score"] = score;
      auto cat = im.categories.find(id);
      if (cat != im.categories.end()) s["category"] = cat->second;
      scores.push_back(std::move(s));
    }
    j["scores"] = std::move(scores);
    list.push_back(std::move(j));
  }
  doc["images"] = std::move(list);
  write_json_file(dir / "scores.json", doc);
}

inline std::vector<ResolvedImage> read_resolved(const std::filesystem::path& dir) {
  using detail::json_get;
  const Json doc = read_json_file(dir / "scores.json");
  if (!doc.contains("images") || !doc.at("images").is_array()) {
    throw FormatError("scores.json needs an \"images\" list");
  }
  std::vector<ResolvedImage> out;
  for (const auto& j : doc.at("images")) {
    ResolvedImage im;
    im.image_id = json_get<std::int64_t>(j, "image_id", "resolved image");
    const std::string who = image_label(im.image_id);
    const auto file = json_get<std::string>(j, "file_name", who);
    im.prediction.map = read_id_png(dir / file);
    if (im.prediction.map.height() != json_get<int>(j, "height", who) ||
        im.prediction.map.width() != json_get<int>(j, "width", who)) {
      throw ShapeError(who + ": PNG size differs from scores.json");
    }
    im.prediction.scores.clear();
    for (const auto& s : j.at("scores")) {
      const auto id = json_get<EntityId>(s, "id", who);
      im.prediction.scores[id] = json_get<double>(s, "score", who);
      if (s.contains("category") && !s.at("category").is_null()) {
        im.categories[id] = json_get<std::int64_t>(s, "category", who);
      }
    }
    try {
      validate_prediction(im.prediction);
    } catch (const ValidationError& e) {
      throw ValidationError(who + ": " + e.what());
    }
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace entityseg
