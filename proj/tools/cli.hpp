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

// Command-line front end. Exposed as a header so tests can drive the same
// code paths in-process.
//
// Exit codes: 0 success, 1 validation or constraint failure, 2 I/O, format
// or usage failure.

#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "entityseg/annotation.hpp"
#include "entityseg/error.hpp"
#include "entityseg/evaluator.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/loss.hpp"
#include "entityseg/losscheck.hpp"
#include "entityseg/prediction_io.hpp"
#include "entityseg/resolver.hpp"
#include "entityseg/synthetic.hpp"
#include "entityseg/version.hpp"

namespace entityseg::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat:
    case ErrorKind::kIo:
    case ErrorKind::kIngestion:
    case ErrorKind::kShape:
    case ErrorKind::kUsage:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

struct EvalFlags {
  std::vector<double> iou_thresholds;
  std::size_t max_dets = 100;
  int recall_points = 101;
  std::string mode = "agnostic";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--iou-thresholds", iou_thresholds, "comma-separated IoU thresholds")
        ->delimiter(',');
    cmd->add_option("--max-dets", max_dets, "detections kept per image")->capture_default_str();
    cmd->add_option("--recall-points", recall_points, "recall sampling points")
        ->capture_default_str();
    cmd->add_option("--mode", mode, "agnostic | oriented")->capture_default_str();
  }

  EvalConfig config() const {
    EvalConfig cfg;
    if (!iou_thresholds.empty()) cfg.iou_thresholds = iou_thresholds;
    cfg.max_dets_per_image = max_dets;
    cfg.recall_points = recall_points;
    cfg.mode = parse_mode(mode);
    cfg.validate();
    return cfg;
  }
};

inline std::string fmt_value(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

inline void print_ap_table(std::ostream& out, const std::string& metric, const ApReport& r) {
  out << "metric " << metric << "\n";
  out << "  AP     " << fmt_value(r.ap) << "\n";
  out << "  AP50   " << fmt_value(r.ap50) << "\n";
  out << "  AP75   " << fmt_value(r.ap75) << "\n";
  out << "  AP_S   " << fmt_value(r.ap_s) << "\n";
  out << "  AP_M   " << fmt_value(r.ap_m) << "\n";
  out << "  AP_L   " << fmt_value(r.ap_l) << "\n";
}

// Report metadata: toolkit version plus the effective configuration and
// its hash.
inline Json with_provenance(Json report, const std::string& metric, const Json& config,
                            const Json& run) {
  Json meta;
  meta["toolkit"] = "entityseg";
  meta["version"] = std::string(kVersion);
  meta["metric"] = metric;
  meta["config"] = config;
  meta["config_hash"] = fnv1a_hex(metric + "|" + config.dump());
  meta["run"] = run;
  for (auto& [k, v] : meta.items()) report[k] = v;
  return report;
}

inline bool is_resolved_dir(const std::string& path) {
  return std::filesystem::is_directory(path) &&
         std::filesystem::exists(std::filesystem::path(path) / "scores.json");
}

// ---------------------------------------------------------------------------

inline int cmd_convert(const std::string& json_path, const std::string& png_dir,
                       const std::string& out_path, const std::string& tag, int threads,
                       std::ostream& out) {
  const auto images = parse_panoptic(std::filesystem::path(json_path), png_dir, threads);
  const EntityDataset ds = convert_panoptic(images, tag);
  write_dataset(out_path, ds);
  std::size_t entities = 0;
  for (const auto& im : ds.images) entities += im.entities.size();
  out << "images " << ds.images.size() << " entities " << entities << "\n";
  return kExitOk;
}

inline int cmd_merge(const std::vector<std::string>& inputs, const std::string& out_path,
                     std::ostream& out) {
  if (inputs.empty()) throw UsageError("merge needs at least one --in dataset");
  std::vector<EntityDataset> sets;
  for (const auto& p : inputs) sets.push_back(read_dataset(p));
  const EntityDataset merged = merge_datasets(sets);
  write_dataset(out_path, merged);
  out << "images " << merged.images.size() << " from " << inputs.size() << " datasets\n";
  return kExitOk;
}

inline int cmd_presample(const std::string& input, std::size_t n, std::uint64_t seed,
                         const std::string& out_path, std::ostream& out) {
  const EntityDataset ds = read_dataset(input);
  const EntityDataset sampled = presample(ds, n, seed);
  write_dataset(out_path, sampled);
  out << "images " << sampled.images.size() << " sampled with seed " << seed << "\n";
  return kExitOk;
}

inline int cmd_resolve(const std::string& pred_path, const std::string& out_dir, double nms_iou,
                       bool nms, int threads, std::ostream& out) {
  std::vector<ResolvedImage> results;
  if (is_resolved_dir(pred_path)) {
    // Already non-overlapping: re-run the per-pixel argmax only.
    const auto inputs = read_resolved(pred_path);
    results.resize(inputs.size());
    parallel_for(inputs.size(), threads, [&](std::size_t i) {
      const auto& in = inputs[i];
      const auto ents = decompose_prediction(in.prediction);
      results[i].image_id = in.image_id;
      results[i].prediction =
          resolve_overlaps(ents, in.prediction.map.height(), in.prediction.map.width());
      for (const auto& [id, _] : results[i].prediction.scores) {
        auto c = in.categories.find(id);
        if (c != in.categories.end()) results[i].categories[id] = c->second;
      }
    });
  } else {
    const auto images = read_predictions(pred_path);
    results.resize(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
      const PredictionImage& im = images[i];
      const std::string who = image_label(im.image_id);
      try {
        std::vector<ScoredEntity> ents = scored_entities_of(im);
        std::vector<ScoredEntity> kept;
        if (nms) {
          std::vector<Detection> dets;
          for (std::size_t k = 0; k < ents.size(); ++k) {
            const auto& e = im.entities[k];
            Detection d;
            d.bbox = e.bbox ? *e.bbox : bbox_of(ents[k].mask);
            d.entityness = e.entityness.value_or(ents[k].score);
            d.centerness = e.centerness.value_or(ents[k].score);
            d.aggregated_score = ents[k].score;
            dets.push_back(d);
          }
          for (std::size_t k : box_nms_indices(dets, nms_iou)) kept.push_back(ents[k]);
        } else {
          kept = std::move(ents);
        }
        results[i].image_id = im.image_id;
        results[i].prediction = resolve_overlaps(kept, im.height, im.width);
        for (const auto& e : im.entities) {
          if (e.category && results[i].prediction.scores.count(e.entity_id)) {
            results[i].categories[e.entity_id] = *e.category;
          }
        }
        validate_prediction(results[i].prediction);
      } catch (const ShapeError& e) {
        throw ShapeError(who + ": " + e.what());
      } catch (const EmptyMaskError& e) {
        throw FormatError(who + ": " + e.what());
      }
    });
  }
  write_resolved(out_dir, results);
  std::size_t kept = 0;
  for (const auto& r : results) kept += r.prediction.scores.size() - 1;
  out << "images " << results.size() << " entities " << kept << "\n";
  return kExitOk;
}

inline ScoredSet scored_from_resolved(const std::vector<ResolvedImage>& images) {
  ScoredSet out;
  for (const auto& im : images) out[im.image_id] = decompose_prediction(im.prediction);
  return out;
}

inline int cmd_eval(const std::string& pred_path, const std::string& gt_path,
                    const std::string& metric, const EvalFlags& flags, int threads,
                    const std::string& out_path, std::ostream& out) {
  const EvalConfig cfg = flags.config();
  const EntityDataset gts = read_dataset(gt_path);
  const bool resolved = is_resolved_dir(pred_path);
  std::vector<ResolvedImage> resolved_images;
  std::vector<PredictionImage> scored_images;
  if (resolved) {
    resolved_images = read_resolved(pred_path);
  } else {
    scored_images = read_predictions(pred_path);
  }

  Json report;
  Json config = cfg.to_json();
  if (metric == "entity" || metric == "tolerant" || metric == "box") {
    ApReport r;
    if (metric == "entity") {
      if (resolved) {
        ResolvedSet set;
        for (const auto& im : resolved_images) set.emplace(im.image_id, im.prediction);
        r = ap_entity(set, gts, cfg, threads);
      } else {
        r = ap_entity(scored_set_of(scored_images), gts, cfg, threads);
      }
    } else if (metric == "tolerant") {
      r = ap_overlap_tolerant(
          resolved ? scored_from_resolved(resolved_images) : scored_set_of(scored_images), gts,
          cfg, threads);
    } else {
      BoxSet boxes;
      if (resolved) {
        for (const auto& im : resolved_images) {
          auto& list = boxes[im.image_id];
          for (const auto& e : decompose_prediction(im.prediction)) {
            std::optional<std::int64_t> cat;
            if (auto c = im.categories.find(e.entity_id); c != im.categories.end()) cat = c->second;
            list.push_back({bbox_of(e.mask), e.score, cat});
          }
        }
      } else {
        boxes = box_set_of(scored_images);
      }
      r = ap_box(boxes, gt_boxes_of(gts), cfg, threads);
    }
    print_ap_table(out, metric, r);
    report = ap_report_to_json(r);
  } else if (metric == "pq") {
    CategorizedSet set;
    if (resolved) {
      for (const auto& im : resolved_images) {
        set.emplace(im.image_id, CategorizedPrediction{im.prediction, im.categories});
      }
    } else {
      std::map<std::int64_t, const ImageRecord*> dims;
      for (const auto& im : gts.images) dims[im.image_id] = &im;
      for (const auto& im : scored_images) {
        CategorizedPrediction cp;
        try {
          cp.prediction = compose_prediction(scored_entities_of(im), im.height, im.width);
        } catch (const ConstraintViolation& e) {
          throw ConstraintViolation(image_label(im.image_id) + ": " + e.what());
        }
        for (const auto& e : im.entities) {
          if (e.category) cp.categories[e.entity_id] = *e.category;
        }
        set.emplace(im.image_id, std::move(cp));
      }
    }
    const PqReport r = pq(set, gts, threads);
    out << "metric pq\n  PQ     " << fmt_value(r.pq) << "\n  SQ     " << fmt_value(r.sq)
        << "\n  RQ     " << fmt_value(r.rq) << "\n  TP " << r.tp << " FP " << r.fp << " FN "
        << r.fn << "\n";
    report = pq_report_to_json(r);
    config = Json{{"iou_rule", "strictly above 0.5"}, {"void_fp_rule", "more than half on void"}};
  } else {
    throw UsageError("unknown metric \"" + metric + "\" (entity | tolerant | pq | box)");
  }
  const Json run{{"pred", pred_path}, {"gt", gt_path}, {"threads", threads}};
  const Json doc = with_provenance(report, metric, config, run);
  if (!out_path.empty()) write_json_file(out_path, doc);
  return kExitOk;
}

inline int cmd_losscheck(std::uint64_t seed, std::size_t fixtures, const std::string& weights_path,
                         const std::string& out_path, std::ostream& out) {
  const PathWeights weights =
      weights_path.empty() ? default_path_weights() : load_path_weights(weights_path);
  const auto rows = run_loss_checks(seed, fixtures, weights);
  bool ok = true;
  Json table = Json::array();
  out << std::left << std::setw(48) << "check" << std::setw(10) << "fixtures" << std::setw(14)
      << "worst" << std::setw(12) << "tolerance" << "status\n";
  for (const auto& row : rows) {
    ok = ok && row.passed();
    std::ostringstream worst, tol;
    worst << std::scientific << std::setprecision(3) << row.worst;
    tol << std::scientific << std::setprecision(1) << row.tolerance;
    out << std::left << std::setw(48) << row.name << std::setw(10) << row.fixtures
        << std::setw(14) << worst.str() << std::setw(12) << tol.str()
        << (row.passed() ? "PASS" : "FAIL") << "\n";
    table.push_back({{"check", row.name}, {"fixtures", row.fixtures}, {"worst", row.worst},
                     {"tolerance", row.tolerance}, {"passed", row.passed()}});
  }
  if (!out_path.empty()) {
    Json config{{"seed", seed}, {"fixtures", fixtures}, {"path_weights", weights},
                {"dice_epsilon", kDiceEpsilon}, {"step", 1e-6}};
    write_json_file(out_path, with_provenance(Json{{"checks", table}, {"passed", ok}},
                                              "losscheck", config, Json::object()));
  }
  return ok ? kExitOk : kExitValidation;
}

inline int cmd_bench(const SyntheticSpec& spec, const EvalFlags& flags, int threads,
                     const std::string& out_path, std::ostream& out) {
  const EvalConfig cfg = flags.config();
  const BenchResult r = run_synthetic_benchmark(spec, cfg, threads);
  const double pixels = static_cast<double>(spec.images) * spec.height * spec.width;
  out << "images " << r.images << " (" << spec.width << "x" << spec.height << "), gt entities "
      << r.gt_entities << ", predictions " << r.pred_entities << "\n";
  out << "threads " << threads << ", wall " << std::fixed << std::setprecision(3) << r.seconds
      << " s, " << std::setprecision(1) << r.images / r.seconds << " images/s, "
      << pixels / r.seconds / 1e6 << " Mpx/s\n";
  print_ap_table(out, "entity (synthetic)", r.report);
  if (!out_path.empty()) {
    Json config = cfg.to_json();
    config["synthetic"] = {{"images", spec.images}, {"height", spec.height},
                           {"width", spec.width}, {"entities", spec.entities},
                           {"seed", spec.seed}};
    Json report = ap_report_to_json(r.report);
    report["timing"] = {{"seconds", r.seconds}, {"images_per_second", r.images / r.seconds}};
    write_json_file(out_path, with_provenance(report, "bench", config, Json{{"threads", threads}}));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"entityseg: entity segmentation evaluation and dataset toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  int threads = default_thread_count();
  std::string out_path;

  auto* convert = app.add_subcommand("convert", "COCO panoptic -> entity dataset");
  std::string panoptic_json, png_dir, tag = "coco";
  convert->add_option("--panoptic-json", panoptic_json)->required();
  convert->add_option("--png-dir", png_dir)->required();
  convert->add_option("--source-tag", tag)->capture_default_str();
  convert->add_option("--out", out_path)->required();
  convert->add_option("--threads", threads);

  auto* merge = app.add_subcommand("merge", "concatenate entity datasets");
  std::vector<std::string> merge_inputs;
  merge->add_option("--in", merge_inputs)->required();
  merge->add_option("--out", out_path)->required();

  auto* sample = app.add_subcommand("presample", "deterministic presampling");
  std::string sample_in;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  sample->add_option("--in", sample_in)->required();
  sample->add_option("--n", n)->required();
  sample->add_option("--seed", seed)->capture_default_str();
  sample->add_option("--out", out_path)->required();

  auto* resolve = app.add_subcommand("resolve", "NMS + per-pixel overlap resolution");
  std::string pred_path;
  double nms_iou = kDefaultNmsIou;
  bool no_nms = false;
  resolve->add_option("--pred", pred_path)->required();
  resolve->add_option("--out", out_path)->required();
  resolve->add_option("--nms-iou", nms_iou)->capture_default_str();
  resolve->add_flag("--no-nms", no_nms);
  resolve->add_option("--threads", threads);

  auto* eval = app.add_subcommand("eval", "compute a metric report");
  std::string gt_path, metric = "entity";
  EvalFlags eval_flags;
  eval->add_option("--pred", pred_path)->required();
  eval->add_option("--gt", gt_path)->required();
  eval->add_option("--metric", metric, "entity | tolerant | pq | box")->capture_default_str();
  eval_flags.add_to(eval);
  eval->add_option("--threads", threads);
  eval->add_option("--out", out_path);

  auto* losscheck = app.add_subcommand("losscheck", "loss gradient and decomposition checks");
  std::size_t fixtures = 50;
  std::string weights_path;
  losscheck->add_option("--seed", seed)->capture_default_str();
  losscheck->add_option("--fixtures", fixtures)->capture_default_str();
  losscheck->add_option("--weights", weights_path, "JSON with \"path_weights\"");
  losscheck->add_option("--out", out_path);

  auto* bench = app.add_subcommand("bench", "synthetic end-to-end entity AP benchmark");
  SyntheticSpec spec;
  EvalFlags bench_flags;
  bench->add_option("--images", spec.images)->capture_default_str();
  bench->add_option("--height", spec.height)->capture_default_str();
  bench->add_option("--width", spec.width)->capture_default_str();
  bench->add_option("--entities", spec.entities)->capture_default_str();
  bench->add_option("--seed", spec.seed)->capture_default_str();
  bench_flags.add_to(bench);
  bench->add_option("--threads", threads);
  bench->add_option("--out", out_path);

  std::vector<std::string> storage = args;
  std::vector<char*> argv;
  std::string prog = "entityseg";
  argv.push_back(prog.data());
  for (auto& a : storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? e.what() : app.help()) << "\n";
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kExitIo;
  }

  try {
    if (threads < 1) throw UsageError("--threads must be at least 1");
    if (*convert) return cmd_convert(panoptic_json, png_dir, out_path, tag, threads, out);
    if (*merge) return cmd_merge(merge_inputs, out_path, out);
    if (*sample) return cmd_presample(sample_in, n, seed, out_path, out);
    if (*resolve) return cmd_resolve(pred_path, out_path, nms_iou, !no_nms, threads, out);
    if (*eval) return cmd_eval(pred_path, gt_path, metric, eval_flags, threads, out_path, out);
    if (*losscheck) return cmd_losscheck(seed, fixtures, weights_path, out_path, out);
    if (*bench) return cmd_bench(spec, bench_flags, threads, out_path, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitIo;
}

}  // namespace entityseg::cli
