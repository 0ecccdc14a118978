#pragma once

// Experiment orchestration: config -> per-image records -> aggregate report
// -> files (records.csv, aggregate.json, tables.md, insertion_curve.png,
// deletion_curve.png).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "backend.hpp"
#include "cams.hpp"
#include "metrics.hpp"

namespace camb {

enum class Metric { kAvgDrop, kAvgInc, kWin, kInsAuc, kDelAuc, kEnergyPg };

inline constexpr std::array<Metric, 6> kAllMetrics{Metric::kAvgDrop, Metric::kAvgInc, Metric::kWin,
                                                   Metric::kInsAuc,  Metric::kDelAuc, Metric::kEnergyPg};

// Stable identifiers: avg_drop, avg_inc, win, ins_auc, del_auc, energy_pg.
std::string_view metric_id(Metric m);
std::optional<Metric> parse_metric(std::string_view id);

struct MethodSpec {
  Method method = Method::kIsCam;
  CamHyperparams params;
};

struct ExperimentConfig {
  std::string backend_name;  // "toy" or "onnx"
  std::string weights;       // model file for onnx backends
  std::string layer;         // "default" picks the backend's default layer
  std::vector<MethodSpec> methods;
  std::vector<Metric> metrics;
  std::filesystem::path dataset_root;
  std::filesystem::path annotations;
  std::uint64_t dataset_seed = 0;
  int dataset_count = 0;
  std::filesystem::path output_dir;
  int workers = 1;
  int step_pixels = 224;

  bool wants(Metric m) const;
  // Throws kInvalidArgument naming the first offending key.
  void validate() const;
};

// Parses a JSON config. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

struct EvalRecord {
  std::string image_id;
  std::string backend;
  std::string layer;
  std::string method;
  int class_used = 0;  // model's top-1 prediction
  int annotated_class = 0;
  bool class_mismatch = false;
  std::optional<double> y;  // softmax score of class_used on the image
  std::optional<double> o;  // ... on the explanation map
  std::optional<double> drop_pct;
  std::optional<bool> increased;
  std::optional<double> ins_auc;
  std::optional<double> del_auc;
  std::optional<double> energy_pg;  // explaining annotated_class
  std::string hyperparams;
  double wall_time_ms = 0.0;
  std::vector<double> insertion_curve;
  std::vector<double> deletion_curve;

  bool operator==(const EvalRecord&) const = default;
};

// Means over records; every field except the curves is a percentage.
struct MethodAggregate {
  int records = 0;
  std::optional<double> avg_drop;
  std::optional<double> avg_inc;
  std::optional<double> ins_auc;
  std::optional<double> del_auc;
  std::optional<double> energy_pg;
  int energy_pg_count = 0;
  std::vector<double> insertion_curve;  // stage-wise mean
  std::vector<double> deletion_curve;

  bool operator==(const MethodAggregate&) const = default;
};

struct BackendAggregate {
  std::string layer;
  std::map<std::string, MethodAggregate> methods;
  // win[a][b]: % of paired images where a's drop is lower than b's.
  std::map<std::string, std::map<std::string, double>> win;

  bool operator==(const BackendAggregate&) const = default;
};

struct AggregateReport {
  int record_count = 0;
  std::map<std::string, BackendAggregate> backends;

  bool operator==(const AggregateReport&) const = default;
};

AggregateReport aggregate(const std::vector<EvalRecord>& records);

std::string aggregate_to_json(const AggregateReport& r);
AggregateReport aggregate_from_json(const std::string& text);

// CSV with a header row; doubles at round-trip precision.
void write_records_csv(const std::vector<EvalRecord>& records, const std::filesystem::path& path);
std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path);

std::string render_tables(const AggregateReport& r);

struct ReportFiles {
  std::filesystem::path records_csv, aggregate_json, tables_md, insertion_png, deletion_png;
};

ReportFiles render_report(const AggregateReport& r, const std::vector<EvalRecord>& records,
                          const std::filesystem::path& outdir);

struct RunSummary {
  AggregateReport report;
  std::vector<EvalRecord> records;
  ReportFiles files;
  int images_scored = 0;
  int images_failed = 0;
  int annotations_skipped = 0;
};

using BackendFactory = std::function<std::unique_ptr<ModelBackend>(const ExperimentConfig&)>;

// Default factory: "toy" or an ONNX file from `weights`.
std::unique_ptr<ModelBackend> make_backend(const ExperimentConfig& cfg);

RunSummary run_experiment(const ExperimentConfig& cfg, const BackendFactory& factory = make_backend);

// Evaluates one preprocessed image with one method. `boxes` are in input
// coordinates; empty skips the pointing game.
EvalRecord evaluate_image(const ModelBackend& backend, const Image& x, const std::string& image_id,
                          const std::string& layer, const MethodSpec& spec, const std::vector<Metric>& metrics,
                          int annotated_class, const std::vector<BoundingBox>& boxes, int step_pixels);

}  // namespace camb
