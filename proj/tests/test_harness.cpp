#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "harness.hpp"
#include "test_util.hpp"

using namespace camb;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = fs::path(CAMB_SOURCE_DIR) / "fixtures";

nlohmann::json base_config(const fs::path& out) {
  return {{"backend", {{"name", "toy"}, {"layer", "conv"}}},
          {"methods", {"cam", {{"name", "iscam"}, {"n_steps", 3}}, "gradcam"}},
          {"metrics", {"avg_drop", "avg_inc", "win", "ins_auc", "del_auc", "energy_pg"}},
          {"dataset", {{"root", "images"}, {"annotations", "annotations.jsonl"}, {"seed", 0}, {"count", 4}}},
          {"output_dir", out.string()},
          {"step_pixels", 4480}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_config_error(const nlohmann::json& j, const std::string& needle) {
  try {
    parse_config(j.dump(), kFixtures);
    FAIL() << "accepted: " << j.dump();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

EvalRecord sample_record(const std::string& id, const std::string& method, double drop) {
  EvalRecord r;
  r.image_id = id;
  r.backend = "toy";
  r.layer = "conv";
  r.method = method;
  r.class_used = 1;
  r.annotated_class = 0;
  r.class_mismatch = true;
  r.y = 0.1 + 1.0 / 3.0;
  r.o = 0.2;
  r.drop_pct = drop;
  r.increased = false;
  r.ins_auc = 0.7;
  r.del_auc = 0.123456789012345;
  r.energy_pg = 0.5;
  r.hyperparams = "softmax_weights=1;n_steps=3,\"quoted\"";
  r.wall_time_ms = 12.345;
  r.insertion_curve = {0.1, 0.2, 1e-17};
  r.deletion_curve = {0.3, 0.25, 0.2};
  return r;
}

}  // namespace

TEST(Config, ParsesFixtureConfig) {
  const auto cfg = load_config(kFixtures / "experiment.json");
  EXPECT_EQ(cfg.backend_name, "toy");
  EXPECT_EQ(cfg.layer, "conv");
  EXPECT_EQ(cfg.methods.size(), 7u);
  EXPECT_EQ(cfg.methods[6].method, Method::kIsCam);
  EXPECT_EQ(cfg.methods[6].params.n_steps, 10);
  EXPECT_EQ(cfg.metrics.size(), 6u);
  EXPECT_EQ(cfg.dataset_root, (kFixtures / "images").lexically_normal());
  EXPECT_EQ(cfg.dataset_count, 10);
}

TEST(Config, PerMethodOverridesAndDefaults) {
  auto j = base_config("/tmp/x");
  j["hyperparams"] = {{"sigma", 0.5}, {"softmax_weights", false}};
  j["methods"] = {"sscam", {{"name", "iscam"}, {"iscam_path", "cumulative"}, {"softmax_weights", nullptr}}};
  j.erase("metrics");
  const auto cfg = parse_config(j.dump(), kFixtures);
  EXPECT_EQ(cfg.metrics.size(), 6u);
  EXPECT_DOUBLE_EQ(cfg.methods[0].params.sigma, 0.5);
  EXPECT_EQ(cfg.methods[0].params.softmax_weights, false);
  EXPECT_EQ(cfg.methods[1].params.iscam_path, IsCamPath::kCumulative);
  EXPECT_FALSE(cfg.methods[1].params.softmax_weights.has_value());
}

TEST(Config, MissingAndInvalidKeysAreNamed) {
  auto j = base_config("/tmp/x");
  j["backend"].erase("layer");
  expect_config_error(j, "backend.layer");

  j = base_config("/tmp/x");
  j["methods"] = {"cam", "bogus"};
  expect_config_error(j, "bogus");

  j = base_config("/tmp/x");
  j["methods"] = {"cam", "cam"};
  expect_config_error(j, "twice");

  j = base_config("/tmp/x");
  j["extra"] = 1;
  expect_config_error(j, "extra");

  j = base_config("/tmp/x");
  j["hyperparams"] = {{"n_steps", 0}};
  expect_config_error(j, "n_steps");

  j = base_config("/tmp/x");
  j["backend"] = {{"name", "onnx"}, {"layer", "default"}};
  expect_config_error(j, "backend.weights");

  j = base_config("/tmp/x");
  j["metrics"] = {"accuracy"};
  expect_config_error(j, "accuracy");

  j = base_config("/tmp/x");
  j["dataset"]["count"] = 0;
  expect_config_error(j, "dataset.count");

  expect_config_error(nlohmann::json::array(), "top level");
  try {
    parse_config("{", kFixtures);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(RecordsCsv, RoundTripsExactly) {
  testutil::TempDir dir("csv");
  std::vector<EvalRecord> rs{sample_record("a", "cam", 12.5), sample_record("b,c", "iscam", 1.0 / 7.0)};
  EvalRecord sparse;
  sparse.image_id = "s";
  sparse.backend = "toy";
  sparse.method = "gradcam";
  rs.push_back(sparse);
  write_records_csv(rs, dir / "r.csv");
  EXPECT_EQ(read_records_csv(dir / "r.csv"), rs);
  std::ofstream(dir / "bad.csv") << "image_id,backend\nx,y\n";
  EXPECT_THROW(read_records_csv(dir / "bad.csv"), Error);
}

TEST(Aggregate, MeansWinsAndJsonRoundTrip) {
  std::vector<EvalRecord> rs{sample_record("i1", "cam", 10.0), sample_record("i2", "cam", 30.0),
                             sample_record("i1", "iscam", 5.0), sample_record("i2", "iscam", 30.0)};
  rs[1].energy_pg.reset();
  rs[1].increased = true;
  const auto rep = aggregate(rs);
  EXPECT_EQ(rep.record_count, 4);
  const auto& b = rep.backends.at("toy");
  EXPECT_EQ(b.layer, "conv");
  const auto& cam = b.methods.at("cam");
  EXPECT_EQ(cam.records, 2);
  EXPECT_DOUBLE_EQ(*cam.avg_drop, 20.0);
  EXPECT_DOUBLE_EQ(*cam.avg_inc, 50.0);
  EXPECT_DOUBLE_EQ(*cam.ins_auc, 70.0);
  EXPECT_DOUBLE_EQ(*cam.energy_pg, 50.0);
  EXPECT_EQ(cam.energy_pg_count, 1);
  EXPECT_EQ(cam.deletion_curve, (std::vector<double>{0.3, 0.25, 0.2}));
  EXPECT_DOUBLE_EQ(b.win.at("iscam").at("cam"), 50.0);
  EXPECT_DOUBLE_EQ(b.win.at("cam").at("iscam"), 0.0);

  EXPECT_EQ(aggregate_from_json(aggregate_to_json(rep)), rep);
  // Order of the input records does not matter.
  std::vector<EvalRecord> shuffled{rs[3], rs[0], rs[2], rs[1]};
  EXPECT_EQ(aggregate(shuffled), rep);

  const std::string md = render_tables(rep);
  EXPECT_NE(md.find("iscam"), std::string::npos);
  EXPECT_NE(md.find("20.00"), std::string::npos);
}

TEST(Aggregate, MismatchedCurveLengthsAreAnError) {
  std::vector<EvalRecord> rs{sample_record("i1", "cam", 1.0), sample_record("i2", "cam", 2.0)};
  rs[1].insertion_curve.push_back(0.5);
  EXPECT_THROW(aggregate(rs), Error);
}

TEST(Run, EndToEndOnFixturesAndReportIsReproducible) {
  testutil::TempDir dir("run");
  const auto cfg = parse_config(base_config(dir / "out").dump(), kFixtures);
  const auto summary = run_experiment(cfg);
  EXPECT_EQ(summary.images_scored, 4);
  EXPECT_EQ(summary.images_failed, 0);
  EXPECT_EQ(summary.records.size(), 12u);
  for (const auto& f : {summary.files.records_csv, summary.files.aggregate_json, summary.files.tables_md,
                        summary.files.insertion_png, summary.files.deletion_png}) {
    EXPECT_TRUE(fs::is_regular_file(f)) << f;
  }
  for (const auto& r : summary.records) {
    ASSERT_TRUE(r.drop_pct && r.ins_auc && r.del_auc && r.energy_pg);
    EXPECT_GE(*r.drop_pct, 0.0);
    EXPECT_LE(*r.drop_pct, 100.0);
    EXPECT_EQ(r.insertion_curve.size(), static_cast<std::size_t>(stage_count(224 * 224, 4480)));
  }
  const auto back = read_records_csv(summary.files.records_csv);
  EXPECT_EQ(back, summary.records);
  EXPECT_EQ(aggregate(back), summary.report);

  // Re-rendering from the records reproduces the aggregate byte for byte.
  const auto again = render_report(aggregate(back), back, dir / "again");
  EXPECT_EQ(slurp(again.aggregate_json), slurp(summary.files.aggregate_json));
  EXPECT_EQ(slurp(again.records_csv), slurp(summary.files.records_csv));
  EXPECT_EQ(slurp(again.tables_md), slurp(summary.files.tables_md));
}

TEST(Run, WorkersDoNotChangeResults) {
  testutil::TempDir dir("workers");
  auto j = base_config(dir / "one");
  j["methods"] = {"cam", "gradcam"};
  const auto one = run_experiment(parse_config(j.dump(), kFixtures));
  j["output_dir"] = (dir / "three").string();
  j["workers"] = 3;
  const auto three = run_experiment(parse_config(j.dump(), kFixtures));
  ASSERT_EQ(one.records.size(), three.records.size());
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    auto a = one.records[i], b = three.records[i];
    a.wall_time_ms = b.wall_time_ms = 0.0;
    EXPECT_EQ(a, b);
  }
}

TEST(Run, UnknownLayerAndCapabilityChecks) {
  testutil::TempDir dir("run_bad");
  auto j = base_config(dir / "out");
  j["backend"]["layer"] = "fc9";
  try {
    run_experiment(parse_config(j.dump(), kFixtures));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos);
  }
  j = base_config(dir / "out");
  j["backend"]["layer"] = "default";
  j["methods"] = {"cam"};
  j["dataset"]["count"] = 1;
  EXPECT_EQ(run_experiment(parse_config(j.dump(), kFixtures)).records.at(0).layer, "conv");
}

TEST(Config, EmptyMethodListIsRejected) {
  auto j = base_config("/tmp/x");
  j["methods"] = nlohmann::json::array();
  expect_config_error(j, "methods");
}

TEST(Aggregate, SingleRecordEqualsThatRecord) {
  const auto r = sample_record("only", "scorecam", 17.5);
  const auto rep = aggregate({r});
  const auto& m = rep.backends.at("toy").methods.at("scorecam");
  EXPECT_EQ(m.records, 1);
  EXPECT_DOUBLE_EQ(*m.avg_drop, *r.drop_pct);
  EXPECT_DOUBLE_EQ(*m.ins_auc, 100.0 * *r.ins_auc);
  EXPECT_DOUBLE_EQ(*m.del_auc, 100.0 * *r.del_auc);
  EXPECT_DOUBLE_EQ(*m.energy_pg, 100.0 * *r.energy_pg);
  EXPECT_EQ(m.insertion_curve, r.insertion_curve);
  EXPECT_TRUE(rep.backends.at("toy").win.empty());

  testutil::TempDir dir("one_record");
  const auto files = render_report(rep, {r}, dir.path());
  for (const auto& f : {files.records_csv, files.aggregate_json, files.tables_md, files.insertion_png, files.deletion_png}) {
    EXPECT_TRUE(fs::is_regular_file(f)) << f;
  }
  std::ifstream in(files.records_csv);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST(Run, ScoreFamilyOnAllFixturesMatchesHandMeans) {
  testutil::TempDir dir("score_family");
  auto j = base_config(dir / "a");
  j["methods"] = {{{"name", "scorecam"}}, {{"name", "iscam"}, {"n_steps", 4}}};
  j["dataset"]["count"] = 10;
  j["metrics"] = {"avg_drop", "avg_inc", "win", "energy_pg"};
  const auto first = run_experiment(parse_config(j.dump(), kFixtures));
  ASSERT_EQ(first.records.size(), 20u);
  for (const std::string method : {"scorecam", "iscam"}) {
    double drop = 0.0, pg = 0.0;
    int n = 0;
    for (const auto& r : first.records) {
      if (r.method != method) continue;
      drop += *r.drop_pct;
      pg += *r.energy_pg;
      ++n;
    }
    const auto& m = first.report.backends.at("toy").methods.at(method);
    EXPECT_EQ(n, 10);
    EXPECT_NEAR(*m.avg_drop, drop / n, 1e-12);
    EXPECT_NEAR(*m.energy_pg, 100.0 * pg / n, 1e-12);
    EXPECT_FALSE(m.ins_auc.has_value());
  }

  // Seeded rerun: identical records apart from timing.
  j["output_dir"] = (dir / "b").string();
  const auto second = run_experiment(parse_config(j.dump(), kFixtures));
  ASSERT_EQ(second.records.size(), first.records.size());
  for (std::size_t i = 0; i < first.records.size(); ++i) {
    auto a = first.records[i], b = second.records[i];
    a.wall_time_ms = b.wall_time_ms = 0.0;
    EXPECT_EQ(a, b);
  }
}
