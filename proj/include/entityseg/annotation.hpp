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

// Ingestion of COCO panoptic annotations, conversion into the categoryless
// entity format, and dataset-level merging and presampling.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "entityseg/error.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/mask.hpp"
#include "entityseg/parallel.hpp"
#include "entityseg/png_io.hpp"
#include "entityseg/prng.hpp"

namespace entityseg {

struct PanopticSegment {
  EntityId segment_id = 0;
  std::int64_t category_id = 0;
  bool is_thing = false;
  PixelCount area = 0;
};

struct PanopticImage {
  std::int64_t image_id = 0;
  std::string file_name;
  std::vector<PanopticSegment> segments;
  EntityMap id_map{1, 1};

  int height() const { return id_map.height(); }
  int width() const { return id_map.width(); }
};

struct EntityRecord {
  EntityId entity_id = 0;
  RleMask mask{1, 1, {1}};
  PixelCount area = 0;
  Bbox bbox;
  std::optional<std::int64_t> source_category;
  std::optional<bool> source_is_thing;

  friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

struct ImageRecord {
  std::int64_t image_id = 0;
  // ID of the image in the dataset it was converted from; survives merging
  // and presampling.
  std::int64_t source_image_id = 0;
  int height = 1;
  int width = 1;
  std::string source_dataset;
  std::vector<EntityRecord> entities;
  BinaryMask void_mask{1, 1};
};

struct ProvenanceEntry {
  std::string source;
  std::int64_t image_id_offset = 0;

  friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

struct EntityDataset {
  std::vector<ImageRecord> images;
  std::vector<ProvenanceEntry> provenance;
};

inline std::string image_label(std::int64_t image_id, const std::string& file_name = {}) {
  std::string label = "image " + std::to_string(image_id);
  if (!file_name.empty()) label += " (" + file_name + ")";
  return label;
}

// Ground-truth map of an image record (entity IDs as stored, 0 for void).
inline EntityMap entity_map_of(const ImageRecord& image) {
  EntityMap map(image.height, image.width);
  auto ids = map.mutable_ids();
  for (const auto& e : image.entities) {
    const BinaryMask m = rle_decode(e.mask);
    const auto bits = m.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (!bits[i]) continue;
      if (ids[i] != 0) {
        throw IntegrityError(image_label(image.image_id) + ": entities " +
                             std::to_string(ids[i]) + " and " +
                             std::to_string(e.entity_id) + " overlap");
      }
      ids[i] = e.entity_id;
    }
  }
  return map;
}

inline BinaryMask void_mask_of(const EntityMap& map) {
  BinaryMask v(map.height(), map.width());
  const auto ids = map.ids();
  auto bits = v.mutable_bits();
  for (std::size_t i = 0; i < ids.size(); ++i) bits[i] = ids[i] == 0 ? 1 : 0;
  return v;
}

// Checks area/bbox bookkeeping and disjointness, then recomputes void.
inline void finalize_image_record(ImageRecord& image) {
  std::set<EntityId> seen;
  for (const auto& e : image.entities) {
    const std::string who = image_label(image.image_id) + " entity " +
                            std::to_string(e.entity_id);
    if (e.entity_id == 0 || !seen.insert(e.entity_id).second) {
      throw IntegrityError(who + ": entity ids must be unique and positive");
    }
    if (e.mask.height() != image.height || e.mask.width() != image.width) {
      throw IntegrityError(who + ": mask size differs from the image");
    }
    const BinaryMask m = rle_decode(e.mask);
    if (mask_area(m) != e.area || e.area < 1) {
      throw IntegrityError(who + ": stored area does not match its mask");
    }
    if (!(bbox_of(m) == e.bbox)) {
      throw IntegrityError(who + ": stored bbox does not match its mask");
    }
  }
  image.void_mask = void_mask_of(entity_map_of(image));
}

namespace detail {

inline PanopticImage parse_panoptic_entry(const Json& ann, const Json& image_info,
                                          const std::map<std::int64_t, bool>& is_thing,
                                          const std::filesystem::path& png_dir) {
  PanopticImage out;
  out.image_id = json_get<std::int64_t>(ann, "image_id", "annotation");
  out.file_name = json_get<std::string>(ann, "file_name", image_label(out.image_id));
  const std::string who = image_label(out.image_id, out.file_name);

  try {
    out.id_map = read_id_png(png_dir / out.file_name);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw IoError(who + ": " + e.what());
    throw IngestionError(who + ": " + e.what());
  }

  const int h = json_get<int>(image_info, "height", who);
  const int w = json_get<int>(image_info, "width", who);
  if (h != out.height() || w != out.width()) {
    throw IngestionError(who + ": PNG is " + dims_str(out.height(), out.width()) +
                         " but the annotation says " + dims_str(h, w));
  }

  std::map<EntityId, PixelCount> pixel_counts;
  for (EntityId id : out.id_map.ids()) {
    if (id != 0) ++pixel_counts[id];
  }

  std::set<EntityId> declared;
  const Json& segs = ann.contains("segments_info") ? ann.at("segments_info") : Json::array();
  for (const auto& s : segs) {
    PanopticSegment seg;
    const auto raw_id = json_get<std::int64_t>(s, "id", who);
    if (raw_id <= 0 || raw_id > kMaxPngId) {
      throw IngestionError(who + ": segment id " + std::to_string(raw_id) +
                           " is not a positive 24-bit id");
    }
    seg.segment_id = static_cast<EntityId>(raw_id);
    seg.category_id = json_get<std::int64_t>(s, "category_id", who);
    auto thing = is_thing.find(seg.category_id);
    seg.is_thing = thing != is_thing.end() && thing->second;
    if (!declared.insert(seg.segment_id).second) {
      throw IntegrityError(who + ": segment " + std::to_string(seg.segment_id) +
                           " is declared twice");
    }
    auto found = pixel_counts.find(seg.segment_id);
    if (found == pixel_counts.end()) {
      throw IngestionError(who + ": segment " + std::to_string(seg.segment_id) +
                           " does not appear in the PNG");
    }
    seg.area = found->second;
    out.segments.push_back(seg);
  }
  for (const auto& [id, count] : pixel_counts) {
    if (!declared.count(id)) {
      throw IngestionError(who + ": PNG contains id " + std::to_string(id) +
                           " absent from segments_info");
    }
  }
  return out;
}

}  // namespace detail

// Parses an in-memory COCO panoptic document. PNGs are looked up as
// png_dir / annotation.file_name.
inline std::vector<PanopticImage> parse_panoptic(const Json& doc,
                                                 const std::filesystem::path& png_dir,
                                                 int threads = 1) {
  std::map<std::int64_t, bool> is_thing;
  if (doc.contains("categories")) {
    for (const auto& c : doc.at("categories")) {
      is_thing[detail::json_get<std::int64_t>(c, "id", "category")] =
          c.contains("isthing") && c.at("isthing").get<int>() != 0;
    }
  }
  std::map<std::int64_t, const Json*> images;
  if (doc.contains("images")) {
    for (const auto& im : doc.at("images")) {
      images[detail::json_get<std::int64_t>(im, "id", "image")] = &im;
    }
  }
  const Json annotations = doc.contains("annotations") ? doc.at("annotations") : Json::array();
  std::vector<const Json*> anns;
  for (const auto& a : annotations) anns.push_back(&a);

  std::vector<PanopticImage> out(anns.size());
  parallel_for(anns.size(), threads, [&](std::size_t i) {
    const auto image_id = detail::json_get<std::int64_t>(*anns[i], "image_id", "annotation");
    auto info = images.find(image_id);
    if (info == images.end()) {
      throw IngestionError(image_label(image_id) + ": no entry in \"images\"");
    }
    out[i] = detail::parse_panoptic_entry(*anns[i], *info->second, is_thing, png_dir);
  });
  return out;
}

inline std::vector<PanopticImage> parse_panoptic(const std::filesystem::path& json_path,
                                                 const std::filesystem::path& png_dir,
                                                 int threads = 1) {
  return parse_panoptic(read_json_file(json_path), png_dir, threads);
}

// Every thing or stuff segment becomes one entity. Dense IDs 1..N are
// assigned by descending area, ties by ascending source segment id.
inline ImageRecord to_entity_format(const PanopticImage& image,
                                    const std::string& source_dataset) {
  const std::string who = image_label(image.image_id, image.file_name);
  std::vector<PanopticSegment> order = image.segments;
  std::set<EntityId> unique_ids;
  for (const auto& s : order) {
    if (!unique_ids.insert(s.segment_id).second) {
      throw IntegrityError(who + ": overlapping segments share id " +
                           std::to_string(s.segment_id));
    }
  }
  std::sort(order.begin(), order.end(), [](const PanopticSegment& a, const PanopticSegment& b) {
    if (a.area != b.area) return a.area > b.area;
    return a.segment_id < b.segment_id;
  });

  std::map<EntityId, std::size_t> slot;
  std::vector<BinaryMask> masks;
  for (std::size_t k = 0; k < order.size(); ++k) {
    slot[order[k].segment_id] = k;
    masks.emplace_back(image.height(), image.width());
  }
  const auto ids = image.id_map.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == 0) continue;
    auto it = slot.find(ids[i]);
    if (it == slot.end()) {
      throw IngestionError(who + ": unknown pixel id " + std::to_string(ids[i]));
    }
    masks[it->second].mutable_bits()[i] = 1;
  }

  ImageRecord rec;
  rec.image_id = image.image_id;
  rec.source_image_id = image.image_id;
  rec.height = image.height();
  rec.width = image.width();
  rec.source_dataset = source_dataset;
  for (std::size_t k = 0; k < order.size(); ++k) {
    EntityRecord e;
    e.entity_id = static_cast<EntityId>(k + 1);
    e.mask = rle_encode(masks[k]);
    e.area = mask_area(masks[k]);
    if (e.area < 1) {
      throw IngestionError(who + ": segment " + std::to_string(order[k].segment_id) +
                           " has no pixels");
    }
    e.bbox = bbox_of(masks[k]);
    e.source_category = order[k].category_id;
    e.source_is_thing = order[k].is_thing;
    rec.entities.push_back(std::move(e));
  }
  rec.void_mask = void_mask_of(image.id_map);
  return rec;
}

inline EntityDataset convert_panoptic(const std::vector<PanopticImage>& images,
                                      const std::string& source_dataset) {
  EntityDataset ds;
  ds.provenance.push_back({source_dataset, 0});
  std::set<std::int64_t> ids;
  for (const auto& im : images) {
    if (!ids.insert(im.image_id).second) {
      throw IntegrityError(image_label(im.image_id) + " appears twice");
    }
    ds.images.push_back(to_entity_format(im, source_dataset));
  }
  return ds;
}

// Concatenates datasets. Each source's image IDs are shifted by an offset
// that keeps them globally unique; categories are carried through untouched.
inline EntityDataset merge_datasets(std::span<const EntityDataset> datasets) {
  if (datasets.empty()) throw UsageError("merge needs at least one dataset");
  EntityDataset out;
  std::int64_t offset = 0;
  for (const auto& ds : datasets) {
    std::int64_t max_id = -1;
    std::set<std::int64_t> ids;
    for (const auto& im : ds.images) {
      if (im.image_id < 0) {
        throw IntegrityError(image_label(im.image_id) + ": negative image id");
      }
      if (!ids.insert(im.image_id).second) {
        throw IntegrityError(image_label(im.image_id) + " appears twice in one input");
      }
      max_id = std::max(max_id, im.image_id);
    }
    for (const auto& p : ds.provenance) {
      out.provenance.push_back({p.source, p.image_id_offset + offset});
    }
    for (const auto& im : ds.images) {
      ImageRecord copy = im;
      copy.image_id += offset;
      out.images.push_back(std::move(copy));
    }
    offset += max_id + 1;
  }
  return out;
}

// Sample positions for presample(). n <= size: a partial Fisher-Yates draw
// without replacement. n > size: floor(n / size) full shuffled passes
// followed by a partial pass, so every image appears at least
// floor(n / size) times.
inline std::vector<std::size_t> presample_indices(std::size_t size, std::size_t n,
                                                  std::uint64_t seed) {
  if (size == 0) throw UsageError("cannot presample an empty dataset");
  if (n < 1) throw DomainError("presample count must be at least 1");
  if (size > 0xffffffffULL) throw DomainError("dataset too large to presample");
  Pcg32 rng(seed, 0x5eed);
  std::vector<std::size_t> out;
  out.reserve(n);
  std::vector<std::size_t> pool(size);
  while (out.size() < n) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const std::size_t take = std::min(size, n - out.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.bounded(static_cast<std::uint32_t>(size - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

// Sampled images are renumbered 0..n-1 in sample order.
inline EntityDataset presample(const EntityDataset& dataset, std::size_t n,
                               std::uint64_t seed) {
  EntityDataset out;
  out.provenance = dataset.provenance;
  std::int64_t next_id = 0;
  for (std::size_t idx : presample_indices(dataset.images.size(), n, seed)) {
    ImageRecord copy = dataset.images[idx];
    copy.image_id = next_id++;
    out.images.push_back(std::move(copy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Entity-dataset JSON.

inline Json entity_to_json(const EntityRecord& e) {
  Json j;
  j["entity_id"] = e.entity_id;
  j["rle"] = rle_to_json(e.mask);
  j["area"] = e.area;
  j["bbox"] = bbox_to_json(e.bbox);
  if (e.source_category) j["source_category"] = *e.source_category;
  if (e.source_is_thing) j["source_is_thing"] = *e.source_is_thing;
  return j;
}

inline Json dataset_to_json(const EntityDataset& ds) {
  Json doc;
  Json prov = Json::array();
  for (const auto& p : ds.provenance) {
    prov.push_back({{"source", p.source}, {"image_id_offset", p.image_id_offset}});
  }
  doc["provenance"] = std::move(prov);
  Json images = Json::array();
  for (const auto& im : ds.images) {
    Json j;
    j["image_id"] = im.image_id;
    j["height"] = im.height;
    j["width"] = im.width;
    j["source_dataset"] = im.source_dataset;
    j["source_image_id"] = im.source_image_id;
    Json ents = Json::array();
    for (const auto& e : im.entities) ents.push_back(entity_to_json(e));
    j["entities"] = std::move(ents);
    images.push_back(std::move(j));
  }
  doc["images"] = std::move(images);
  return doc;
}

inline EntityDataset dataset_from_json(const Json& doc) {
  using detail::json_get;
  EntityDataset ds;
  if (!doc.is_object() || !doc.contains("images")) {
    throw FormatError("entity dataset needs an \"images\" list");
  }
  if (doc.contains("provenance")) {
    for (const auto& p : doc.at("provenance")) {
      ds.provenance.push_back({json_get<std::string>(p, "source", "provenance"),
                               json_get<std::int64_t>(p, "image_id_offset", "provenance")});
    }
  }
  std::set<std::int64_t> ids;
  for (const auto& j : doc.at("images")) {
    ImageRecord im;
    im.image_id = json_get<std::int64_t>(j, "image_id", "image");
    const std::string who = image_label(im.image_id);
    if (!ids.insert(im.image_id).second) {
      throw IntegrityError(who + " appears twice");
    }
    im.height = json_get<int>(j, "height", who);
    im.width = json_get<int>(j, "width", who);
    im.source_dataset = j.contains("source_dataset")
                            ? json_get<std::string>(j, "source_dataset", who)
                            : std::string();
    im.source_image_id = j.contains("source_image_id")
                             ? json_get<std::int64_t>(j, "source_image_id", who)
                             : im.image_id;
    if (j.contains("entities")) {
      for (const auto& ej : j.at("entities")) {
        EntityRecord e;
        e.entity_id = json_get<EntityId>(ej, "entity_id", who);
        if (!ej.contains("rle")) throw FormatError(who + ": entity without rle");
        e.mask = rle_from_json(ej.at("rle"));
        e.area = ej.contains("area") ? json_get<PixelCount>(ej, "area", who)
                                     : mask_area(e.mask);
        e.bbox = ej.contains("bbox") ? bbox_from_json(ej.at("bbox"))
                                     : bbox_of(rle_decode(e.mask));
        if (ej.contains("source_category") && !ej.at("source_category").is_null()) {
          e.source_category = json_get<std::int64_t>(ej, "source_category", who);
        }
        if (ej.contains("source_is_thing") && !ej.at("source_is_thing").is_null()) {
          e.source_is_thing = json_get<bool>(ej, "source_is_thing", who);
        }
        im.entities.push_back(std::move(e));
      }
    }
    try {
      im.void_mask = BinaryMask(im.height, im.width);
    } catch (const ShapeError& e) {
      throw FormatError(who + ": " + e.what());
    }
    finalize_image_record(im);
    ds.images.push_back(std::move(im));
  }
  return ds;
}

inline EntityDataset read_dataset(const std::filesystem::path& path) {
  return dataset_from_json(read_json_file(path));
}

inline void write_dataset(const std::filesystem::path& path, const EntityDataset& ds) {
  write_json_file(path, dataset_to_json(ds));
}

}  // namespace entityseg
