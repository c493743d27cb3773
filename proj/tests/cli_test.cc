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

#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "support/fixtures.hpp"

namespace entityseg {
namespace {

using testing::TempDir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string s(const std::filesystem::path& p) { return p.string(); }

// Predictions that reproduce a dataset's ground truth.
std::vector<PredictionImage> gt_as_predictions(const EntityDataset& ds) {
  std::vector<PredictionImage> out;
  for (const auto& im : ds.images) {
    PredictionImage p{im.image_id, im.height, im.width, {}};
    for (const auto& e : im.entities) {
      PredictionEntry pe;
      pe.entity_id = e.entity_id;
      pe.rle = e.mask;
      pe.score = 1.0;
      pe.category = e.source_category;
      p.entities.push_back(pe);
    }
    out.push_back(p);
  }
  return out;
}

struct Converted {
  TempDir dir;
  std::filesystem::path dataset;
  testing::PanopticFixture fx;
  explicit Converted(int images, std::uint64_t seed = 5, const std::string& tag = "coco") {
    fx = testing::write_panoptic_fixture(dir.path(), images, seed);
    dataset = dir / "entities.json";
    const auto o = run({"convert", "--panoptic-json", s(fx.json_path), "--png-dir", s(fx.png_dir),
                        "--out", s(dataset), "--source-tag", tag, "--threads", "2"});
    EXPECT_EQ(o.code, 0) << o.err;
  }
};

TEST(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"eval", "--bogus"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--version"}).out, std::string(kVersion) + "\n");
}

TEST(CliTest, ConvertThreeImages) {
  Converted c(3);
  const auto ds = read_dataset(c.dataset);
  ASSERT_EQ(ds.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ds.images[i].entities.size(), c.fx.segment_counts[i]);
}

TEST(CliTest, ConvertMissingPngNamesImage) {
  TempDir dir;
  const auto fx = testing::write_panoptic_fixture(dir.path(), 3, 1, 100);
  std::filesystem::remove(fx.png_dir / "img_101.png");
  const auto o = run({"convert", "--panoptic-json", s(fx.json_path), "--png-dir", s(fx.png_dir),
                      "--out", s(dir / "out.json")});
  EXPECT_NE(o.code, 0);
  EXPECT_NE(o.err.find("image 101"), std::string::npos) << o.err;
}

TEST(CliTest, ConvertEmptyAnnotationList) {
  TempDir dir;
  write_json_file(dir / "p.json", Json{{"images", Json::array()}, {"annotations", Json::array()},
                                       {"categories", Json::array()}});
  const auto o = run({"convert", "--panoptic-json", s(dir / "p.json"), "--png-dir", s(dir.path()),
                      "--out", s(dir / "out.json")});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(read_dataset(dir / "out.json").images.empty());
}

TEST(CliTest, MergeAndPresample) {
  Converted a(2, 1, "a"), b(3, 2, "b");
  TempDir dir;
  ASSERT_EQ(run({"merge", "--in", s(a.dataset), s(b.dataset), "--out", s(dir / "m.json")}).code, 0);
  const auto merged = read_dataset(dir / "m.json");
  EXPECT_EQ(merged.images.size(), 5u);

  ASSERT_EQ(run({"presample", "--in", s(dir / "m.json"), "--n", "5", "--seed", "3", "--out",
                 s(dir / "p1.json")}).code, 0);
  ASSERT_EQ(run({"presample", "--in", s(dir / "m.json"), "--n", "5", "--seed", "3", "--out",
                 s(dir / "p2.json")}).code, 0);
  EXPECT_EQ(testing::read_file(dir / "p1.json"), testing::read_file(dir / "p2.json"));
  const auto sampled = read_dataset(dir / "p1.json");
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& im : sampled.images) seen.insert({im.source_dataset, im.source_image_id});
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_NE(run({"merge", "--out", s(dir / "x.json")}).code, 0);
}

TEST(CliTest, EvalGtAsPredictionIsPerfect) {
  Converted c(4);
  const auto ds = read_dataset(c.dataset);
  write_json_file(c.dir / "pred.json", predictions_to_json(gt_as_predictions(ds)));
  for (const std::string metric : {"entity", "tolerant", "box"}) {
    const auto o = run({"eval", "--pred", s(c.dir / "pred.json"), "--gt", s(c.dataset), "--metric",
                        metric, "--out", s(c.dir / "r.json")});
    ASSERT_EQ(o.code, 0) << metric << ": " << o.err;
    const Json r = read_json_file(c.dir / "r.json");
    EXPECT_EQ(r.at("ap").get<double>(), 1.0) << metric;
    EXPECT_EQ(r.at("metric"), metric);
    EXPECT_EQ(r.at("version"), std::string(kVersion));
    EXPECT_TRUE(r.contains("config_hash"));
  }
  const auto o = run({"eval", "--pred", s(c.dir / "pred.json"), "--gt", s(c.dataset), "--metric",
                      "pq", "--out", s(c.dir / "pq.json")});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(read_json_file(c.dir / "pq.json").at("pq").get<double>(), 1.0);
}

TEST(CliTest, ConfigHashIgnoresThreads) {
  Converted c(3);
  write_json_file(c.dir / "pred.json", predictions_to_json(gt_as_predictions(read_dataset(c.dataset))));
  ASSERT_EQ(run({"eval", "--pred", s(c.dir / "pred.json"), "--gt", s(c.dataset), "--threads", "1",
                 "--out", s(c.dir / "a.json")}).code, 0);
  ASSERT_EQ(run({"eval", "--pred", s(c.dir / "pred.json"), "--gt", s(c.dataset), "--threads", "3",
                 "--out", s(c.dir / "b.json")}).code, 0);
  const Json a = read_json_file(c.dir / "a.json"), b = read_json_file(c.dir / "b.json");
  EXPECT_EQ(a.at("config_hash"), b.at("config_hash"));
  EXPECT_EQ(a.at("per_threshold"), b.at("per_threshold"));
  ASSERT_EQ(run({"eval", "--pred", s(c.dir / "pred.json"), "--gt", s(c.dataset), "--iou-thresholds",
                 "0.5,0.7", "--out", s(c.dir / "c.json")}).code, 0);
  const Json r = read_json_file(c.dir / "c.json");
  EXPECT_NE(r.at("config_hash"), a.at("config_hash"));
  EXPECT_EQ(r.at("per_threshold").size(), 2u);
}

struct Overlapping {
  TempDir dir;
  Overlapping() {
    EntityMap gt(4, 4);
    testing::paint(gt, testing::rect_mask(4, 4, 0, 0, 2, 4), 1);
    EntityDataset ds;
    ds.images.push_back(testing::record_from_map(17, gt));
    write_dataset(dir / "gt.json", ds);
    PredictionImage p{17, 4, 4, {}};
    for (EntityId id : {1u, 2u}) {
      PredictionEntry e;
      e.entity_id = id;
      e.rle = ds.images[0].entities[0].mask;
      e.score = id == 1 ? 0.9 : 0.8;
      p.entities.push_back(e);
    }
    write_json_file(dir / "pred.json", predictions_to_json({p}));
  }
};

TEST(CliTest, EntityMetricRejectsOverlap) {
  Overlapping f;
  const auto o = run({"eval", "--pred", s(f.dir / "pred.json"), "--gt", s(f.dir / "gt.json"),
                      "--metric", "entity"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("image 17"), std::string::npos) << o.err;
  const auto t = run({"eval", "--pred", s(f.dir / "pred.json"), "--gt", s(f.dir / "gt.json"),
                      "--metric", "tolerant", "--out", s(f.dir / "t.json")});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(read_json_file(f.dir / "t.json").at("ap").is_number());
}

TEST(CliTest, ResolveDropsDuplicateAndIsIdempotent) {
  Overlapping f;
  ASSERT_EQ(run({"resolve", "--pred", s(f.dir / "pred.json"), "--out", s(f.dir / "r1")}).code, 0);
  const auto r1 = read_resolved(f.dir / "r1");
  ASSERT_EQ(r1.size(), 1u);
  EXPECT_EQ(r1[0].prediction.map.entity_ids(), (std::vector<EntityId>{1}));
  ASSERT_EQ(run({"resolve", "--pred", s(f.dir / "r1"), "--out", s(f.dir / "r2")}).code, 0);
  EXPECT_EQ(testing::read_file(f.dir / "r1" / "scores.json"),
            testing::read_file(f.dir / "r2" / "scores.json"));
  EXPECT_EQ(testing::read_file(f.dir / "r1" / "17.png"), testing::read_file(f.dir / "r2" / "17.png"));
  const auto o = run({"eval", "--pred", s(f.dir / "r1"), "--gt", s(f.dir / "gt.json"), "--metric",
                      "entity", "--out", s(f.dir / "e.json")});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(read_json_file(f.dir / "e.json").at("ap").get<double>(), 1.0);
}

TEST(CliTest, ResolveAggregatesEntitynessAndCenterness) {
  TempDir dir;
  const Json doc = Json::parse(R"({"images":[{"image_id":1,"height":2,"width":4,"entities":[
      {"entity_id":1,"rle":{"size":[2,4],"counts":[0,4,4]},"entityness":0.81,"centerness":0.49},
      {"entity_id":2,"rle":{"size":[2,4],"counts":[4,4]},"entityness":0.25,"centerness":1.0}]}]})");
  write_json_file(dir / "p.json", doc);
  ASSERT_EQ(run({"resolve", "--pred", s(dir / "p.json"), "--out", s(dir / "r")}).code, 0);
  const auto r = read_resolved(dir / "r");
  EXPECT_NEAR(r[0].prediction.scores.at(1), 0.63, 1e-15);
  EXPECT_NEAR(r[0].prediction.scores.at(2), 0.5, 1e-15);
}

TEST(CliTest, ResolveShapeErrorNamesImage) {
  TempDir dir;
  const Json doc = Json::parse(R"({"images":[{"image_id":8,"height":2,"width":4,"entities":[
      {"entity_id":1,"rle":{"size":[4,2],"counts":[0,8]},"score":0.5}]}]})");
  write_json_file(dir / "p.json", doc);
  const auto o = run({"resolve", "--pred", s(dir / "p.json"), "--out", s(dir / "r")});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("image 8"), std::string::npos) << o.err;
}

TEST(CliTest, BenchDeterministicAcrossThreads) {
  TempDir dir;
  ASSERT_EQ(run({"bench", "--images", "12", "--height", "48", "--width", "64", "--threads", "1",
                 "--out", s(dir / "a.json")}).code, 0);
  ASSERT_EQ(run({"bench", "--images", "12", "--height", "48", "--width", "64", "--threads", "4",
                 "--out", s(dir / "b.json")}).code, 0);
  Json a = read_json_file(dir / "a.json"), b = read_json_file(dir / "b.json");
  for (const char* k : {"ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l", "per_threshold", "config_hash"}) {
    EXPECT_EQ(a.at(k), b.at(k)) << k;
  }
  EXPECT_EQ(run({"bench", "--images", "0"}).code, 2);
}

TEST(CliTest, LossCheckPasses) {
  TempDir dir;
  const auto o = run({"losscheck", "--fixtures", "5", "--weights",
                      std::string(ENTITYSEG_CONFIG_DIR) + "/kernel_bank.json", "--out", s(dir / "l.json")});
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_TRUE(read_json_file(dir / "l.json").at("passed").get<bool>());
}

TEST(CliTest, MissingInputIsIoExit) {
  TempDir dir;
  EXPECT_EQ(run({"eval", "--pred", s(dir / "none.json"), "--gt", s(dir / "none.json")}).code, 2);
}

}  // namespace
}  // namespace entityseg
