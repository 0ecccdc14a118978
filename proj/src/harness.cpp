#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "data.hpp"
#include "error.hpp"
#include "imageio.hpp"
#include "metrics.hpp"

namespace camb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view metric_id(Metric m) {
  switch (m) {
    case Metric::kAvgDrop: return "avg_drop";
    case Metric::kAvgInc: return "avg_inc";
    case Metric::kWin: return "win";
    case Metric::kInsAuc: return "ins_auc";
    case Metric::kDelAuc: return "del_auc";
    case Metric::kEnergyPg: return "energy_pg";
  }
  return "?";
}

std::optional<Metric> parse_metric(std::string_view id) {
  for (Metric m : kAllMetrics) {
    if (metric_id(m) == id) return m;
  }
  return std::nullopt;
}

bool ExperimentConfig::wants(Metric m) const { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); }

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::kInvalidArgument, "config: " + msg); };
  if (backend_name != "toy" && backend_name != "onnx") bad(fmt::format("backend.name must be 'toy' or 'onnx', got '{}'", backend_name));
  if (backend_name == "onnx" && weights.empty()) bad("backend.weights is required for onnx backends");
  if (layer.empty()) bad("backend.layer must not be empty (use \"default\" for the backend's default layer)");
  if (methods.empty()) bad("methods must list at least one method");
  std::set<Method> seen;
  for (const auto& m : methods) {
    if (!seen.insert(m.method).second) bad(fmt::format("method '{}' listed twice", method_id(m.method)));
    try {
      m.params.validate();
    } catch (const Error& e) {
      bad(fmt::format("methods.{}: {}", method_id(m.method), e.what()));
    }
  }
  if (metrics.empty()) bad("metrics must list at least one metric");
  if (dataset_count < 1) bad(fmt::format("dataset.count must be >= 1, got {}", dataset_count));
  if (output_dir.empty()) bad("output_dir is required");
  if (workers < 1) bad(fmt::format("workers must be >= 1, got {}", workers));
  if (step_pixels < 1) bad(fmt::format("step_pixels must be >= 1, got {}", step_pixels));
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorCode::kInvalidArgument, "config: " + msg); }

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_error(fmt::format("unknown key '{}{}'", where.empty() ? "" : where + ".", key));
    }
  }
}

const json& require(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) config_error(fmt::format("missing required key '{}.{}'", where, key));
  return obj.at(key);
}

std::string get_string(const json& v, const std::string& name) {
  if (!v.is_string()) config_error(fmt::format("'{}' must be a string", name));
  return v.get<std::string>();
}

long long get_int(const json& v, const std::string& name) {
  if (!v.is_number_integer()) config_error(fmt::format("'{}' must be an integer", name));
  return v.get<long long>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void apply_hyperparams(const json& obj, const std::string& where, CamHyperparams& h) {
  for (const auto& [key, v] : obj.items()) {
    const std::string name = where + "." + key;
    if (key == "name") continue;
    if (key == "n_steps") {
      h.n_steps = static_cast<int>(get_int(v, name));
    } else if (key == "smooth_samples") {
      h.smooth_samples = static_cast<int>(get_int(v, name));
    } else if (key == "sigma") {
      if (!v.is_number()) config_error(fmt::format("'{}' must be a number", name));
      h.sigma = v.get<double>();
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) config_error(fmt::format("'{}' must be a non-negative integer", name));
      h.seed = v.get<std::uint64_t>();
    } else if (key == "softmax_weights") {
      if (v.is_null()) {
        h.softmax_weights.reset();
      } else if (v.is_boolean()) {
        h.softmax_weights = v.get<bool>();
      } else {
        config_error(fmt::format("'{}' must be true, false or null", name));
      }
    } else if (key == "iscam_path") {
      const auto p = parse_path(get_string(v, name));
      if (!p) config_error(fmt::format("'{}' must be 'linear' or 'cumulative'", name));
      h.iscam_path = *p;
    } else {
      config_error(fmt::format("unknown key '{}'", name));
    }
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, fmt::format("config: invalid JSON: {}", e.what()));
  }
  if (!j.is_object()) config_error("top level must be an object");
  check_keys(j, "", {"backend", "methods", "hyperparams", "metrics", "dataset", "output_dir", "workers", "step_pixels"});

  ExperimentConfig cfg;
  if (!j.contains("backend")) config_error("missing required key 'backend'");
  const json& b = j["backend"];
  if (!b.is_object()) config_error("'backend' must be an object");
  check_keys(b, "backend", {"name", "weights", "layer"});
  cfg.backend_name = get_string(require(b, "backend", "name"), "backend.name");
  cfg.layer = get_string(require(b, "backend", "layer"), "backend.layer");
  if (b.contains("weights")) {
    const std::string w = get_string(b["weights"], "backend.weights");
    const fs::path local = resolve(base_dir, w);
    // Leave unresolved names alone so the model cache can supply them.
    cfg.weights = fs::exists(local) ? local.string() : w;
  }

  CamHyperparams defaults;
  if (j.contains("hyperparams")) {
    if (!j["hyperparams"].is_object()) config_error("'hyperparams' must be an object");
    if (j["hyperparams"].contains("name")) config_error("unknown key 'hyperparams.name'");
    apply_hyperparams(j["hyperparams"], "hyperparams", defaults);
  }

  if (!j.contains("methods")) config_error("missing required key 'methods'");
  if (!j["methods"].is_array()) config_error("'methods' must be an array");
  for (const auto& m : j["methods"]) {
    MethodSpec spec;
    spec.params = defaults;
    std::string id;
    if (m.is_string()) {
      id = m.get<std::string>();
    } else if (m.is_object()) {
      id = get_string(require(m, "methods[]", "name"), "methods[].name");
    } else {
      config_error("each entry of 'methods' must be a string or an object");
    }
    const auto method = parse_method(id);
    if (!method) {
      config_error(fmt::format("unknown method '{}' (expected cam, gradcam, gradcampp, sgradcampp, scorecam, sscam, iscam)", id));
    }
    spec.method = *method;
    if (m.is_object()) apply_hyperparams(m, "methods." + id, spec.params);
    cfg.methods.push_back(spec);
  }

  if (j.contains("metrics")) {
    if (!j["metrics"].is_array()) config_error("'metrics' must be an array");
    for (const auto& v : j["metrics"]) {
      const std::string id = get_string(v, "metrics[]");
      const auto m = parse_metric(id);
      if (!m) config_error(fmt::format("unknown metric '{}' (expected avg_drop, avg_inc, win, ins_auc, del_auc, energy_pg)", id));
      if (!cfg.wants(*m)) cfg.metrics.push_back(*m);
    }
  } else {
    cfg.metrics.assign(kAllMetrics.begin(), kAllMetrics.end());
  }

  if (!j.contains("dataset")) config_error("missing required key 'dataset'");
  const json& d = j["dataset"];
  if (!d.is_object()) config_error("'dataset' must be an object");
  check_keys(d, "dataset", {"root", "annotations", "seed", "count"});
  cfg.dataset_root = resolve(base_dir, get_string(require(d, "dataset", "root"), "dataset.root"));
  cfg.annotations = resolve(base_dir, get_string(require(d, "dataset", "annotations"), "dataset.annotations"));
  cfg.dataset_count = static_cast<int>(get_int(require(d, "dataset", "count"), "dataset.count"));
  if (d.contains("seed")) {
    if (!d["seed"].is_number_unsigned()) config_error("'dataset.seed' must be a non-negative integer");
    cfg.dataset_seed = d["seed"].get<std::uint64_t>();
  }

  if (!j.contains("output_dir")) config_error("missing required key 'output_dir'");
  cfg.output_dir = resolve(base_dir, get_string(j["output_dir"], "output_dir"));
  if (j.contains("workers")) cfg.workers = static_cast<int>(get_int(j["workers"], "workers"));
  if (j.contains("step_pixels")) cfg.step_pixels = static_cast<int>(get_int(j["step_pixels"], "step_pixels"));
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Records CSV

namespace {

constexpr std::array<const char*, 18> kColumns{
    "image_id",  "backend",   "layer",   "method",      "class_used",   "annotated_class",
    "class_mismatch", "y",     "o",       "drop_pct",    "increased",    "ins_auc",
    "del_auc",   "energy_pg", "hyperparams", "wall_time_ms", "insertion_curve", "deletion_curve"};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

std::string join_curve(const std::vector<double>& c) {
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (i) out += ';';
    out += fmt::format("{}", c[i]);
  }
  return out;
}

std::string record_row(const EvalRecord& r) {
  const std::array<std::string, kColumns.size()> cells{
      r.image_id,
      r.backend,
      r.layer,
      r.method,
      std::to_string(r.class_used),
      std::to_string(r.annotated_class),
      r.class_mismatch ? "1" : "0",
      opt(r.y),
      opt(r.o),
      opt(r.drop_pct),
      r.increased ? (*r.increased ? "1" : "0") : "",
      opt(r.ins_auc),
      opt(r.del_auc),
      opt(r.energy_pg),
      r.hyperparams,
      fmt::format("{}", r.wall_time_ms),
      join_curve(r.insertion_curve),
      join_curve(r.deletion_curve)};
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += csv_field(cells[i]);
  }
  return line;
}

std::string header_row() {
  std::string line;
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (i) line += ',';
    line += kColumns[i];
  }
  return line;
}

// Splits CSV text into rows of fields, honouring quoted fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) fail(ErrorCode::kParse, "records: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_double(const std::string& s, const char* column) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(ErrorCode::kParse, fmt::format("records: bad number '{}' in {}", s, column));
  return v;
}

int parse_int(const std::string& s, const char* column) {
  const double v = parse_double(s, column);
  if (v != std::floor(v)) fail(ErrorCode::kParse, fmt::format("records: bad integer '{}' in {}", s, column));
  return static_cast<int>(v);
}

std::optional<double> parse_opt(const std::string& s, const char* column) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, column);
}

bool parse_flag(const std::string& s, const char* column) {
  if (s == "1") return true;
  if (s == "0") return false;
  fail(ErrorCode::kParse, fmt::format("records: bad flag '{}' in {}", s, column));
}

std::vector<double> parse_curve(const std::string& s, const char* column) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find(';', start);
    out.push_back(parse_double(s.substr(start, end - start), column));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

void write_records_csv(const std::vector<EvalRecord>& records, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  os << header_row() << '\n';
  for (const auto& r : records) os << record_row(r) << '\n';
  if (!os) fail(ErrorCode::kIo, fmt::format("short write to '{}'", path.string()));
}

std::vector<EvalRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open records '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto rows = parse_csv(ss.str());
  if (rows.empty()) fail(ErrorCode::kParse, fmt::format("{}: empty records file", path.string()));
  if (rows[0].size() != kColumns.size() || !std::equal(kColumns.begin(), kColumns.end(), rows[0].begin())) {
    fail(ErrorCode::kParse, fmt::format("{}: unexpected header (expected '{}')", path.string(), header_row()));
  }
  std::vector<EvalRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != kColumns.size()) {
      fail(ErrorCode::kParse, fmt::format("{}: row {} has {} fields, expected {}", path.string(), i + 1, f.size(), kColumns.size()));
    }
    EvalRecord r;
    r.image_id = f[0];
    r.backend = f[1];
    r.layer = f[2];
    r.method = f[3];
    r.class_used = parse_int(f[4], kColumns[4]);
    r.annotated_class = parse_int(f[5], kColumns[5]);
    r.class_mismatch = parse_flag(f[6], kColumns[6]);
    r.y = parse_opt(f[7], kColumns[7]);
    r.o = parse_opt(f[8], kColumns[8]);
    r.drop_pct = parse_opt(f[9], kColumns[9]);
    if (!f[10].empty()) r.increased = parse_flag(f[10], kColumns[10]);
    r.ins_auc = parse_opt(f[11], kColumns[11]);
    r.del_auc = parse_opt(f[12], kColumns[12]);
    r.energy_pg = parse_opt(f[13], kColumns[13]);
    r.hyperparams = f[14];
    r.wall_time_ms = parse_double(f[15], kColumns[15]);
    r.insertion_curve = parse_curve(f[16], kColumns[16]);
    r.deletion_curve = parse_curve(f[17], kColumns[17]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> get(double scale = 1.0) const {
    if (n == 0) return std::nullopt;
    return scale * sum / n;
  }
};

std::vector<double> mean_curve(const std::vector<const std::vector<double>*>& curves, const std::string& what) {
  if (curves.empty()) return {};
  const std::size_t len = curves[0]->size();
  std::vector<double> out(len, 0.0);
  for (const auto* c : curves) {
    if (c->size() != len) {
      fail(ErrorCode::kInvalidArgument, fmt::format("{}: curves have different lengths ({} vs {})", what, len, c->size()));
    }
    for (std::size_t i = 0; i < len; ++i) out[i] += (*c)[i];
  }
  for (auto& v : out) v /= static_cast<double>(curves.size());
  return out;
}

}  // namespace

AggregateReport aggregate(const std::vector<EvalRecord>& records) {
  std::vector<const EvalRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const EvalRecord* a, const EvalRecord* b) {
    return std::tie(a->backend, a->method, a->image_id) < std::tie(b->backend, b->method, b->image_id);
  });

  AggregateReport rep;
  rep.record_count = static_cast<int>(records.size());
  std::map<std::string, std::map<std::string, std::vector<const EvalRecord*>>> groups;
  for (const auto* r : sorted) groups[r->backend][r->method].push_back(r);

  for (const auto& [backend, methods] : groups) {
    BackendAggregate& ba = rep.backends[backend];
    std::set<std::string> layers;
    for (const auto& [method, rs] : methods) {
      MethodAggregate ma;
      ma.records = static_cast<int>(rs.size());
      Mean drop, inc, ins, del, pg;
      std::vector<const std::vector<double>*> ins_curves, del_curves;
      for (const auto* r : rs) {
        layers.insert(r->layer);
        if (r->drop_pct) drop.add(*r->drop_pct);
        if (r->increased) inc.add(*r->increased ? 1.0 : 0.0);
        if (r->ins_auc) ins.add(*r->ins_auc);
        if (r->del_auc) del.add(*r->del_auc);
        if (r->energy_pg) pg.add(*r->energy_pg);
        if (!r->insertion_curve.empty()) ins_curves.push_back(&r->insertion_curve);
        if (!r->deletion_curve.empty()) del_curves.push_back(&r->deletion_curve);
      }
      ma.avg_drop = drop.get();
      ma.avg_inc = inc.get(100.0);
      ma.ins_auc = ins.get(100.0);
      ma.del_auc = del.get(100.0);
      ma.energy_pg = pg.get(100.0);
      ma.energy_pg_count = pg.n;
      ma.insertion_curve = mean_curve(ins_curves, backend + "/" + method + " insertion");
      ma.deletion_curve = mean_curve(del_curves, backend + "/" + method + " deletion");
      ba.methods[method] = std::move(ma);
    }
    std::string layer;
    for (const auto& l : layers) layer += (layer.empty() ? "" : ",") + l;
    ba.layer = layer;

    for (const auto& [a, ra] : methods) {
      std::map<std::string, double> drops_a;
      for (const auto* r : ra) {
        if (r->drop_pct) drops_a[r->image_id] = *r->drop_pct;
      }
      for (const auto& [b, rb] : methods) {
        if (a == b) continue;
        std::vector<double> da, db;
        for (const auto* r : rb) {
          if (!r->drop_pct) continue;
          auto it = drops_a.find(r->image_id);
          if (it == drops_a.end()) continue;
          da.push_back(it->second);
          db.push_back(*r->drop_pct);
        }
        if (!da.empty()) ba.win[a][b] = win_rate(da, db);
      }
    }
  }
  return rep;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorCode::kParse, fmt::format("aggregate: missing '{}'", key));
  const json& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) fail(ErrorCode::kParse, fmt::format("aggregate: '{}' must be a number or null", key));
  return v.get<double>();
}

}  // namespace

std::string aggregate_to_json(const AggregateReport& r) {
  json backends = json::object();
  for (const auto& [name, b] : r.backends) {
    json methods = json::object();
    for (const auto& [m, a] : b.methods) {
      methods[m] = json{{"records", a.records},
                        {"avg_drop_pct", opt_json(a.avg_drop)},
                        {"avg_inc_pct", opt_json(a.avg_inc)},
                        {"ins_auc_pct", opt_json(a.ins_auc)},
                        {"del_auc_pct", opt_json(a.del_auc)},
                        {"energy_pg_pct", opt_json(a.energy_pg)},
                        {"energy_pg_count", a.energy_pg_count},
                        {"insertion_curve", a.insertion_curve},
                        {"deletion_curve", a.deletion_curve}};
    }
    backends[name] = json{{"layer", b.layer}, {"methods", methods}, {"win_pct", b.win}};
  }
  json j{{"record_count", r.record_count}, {"backends", backends}};
  return j.dump(2) + "\n";
}

AggregateReport aggregate_from_json(const std::string& text) {
  AggregateReport r;
  try {
    const json j = json::parse(text);
    r.record_count = j.at("record_count").get<int>();
    for (const auto& [name, b] : j.at("backends").items()) {
      BackendAggregate ba;
      ba.layer = b.at("layer").get<std::string>();
      for (const auto& [m, a] : b.at("methods").items()) {
        MethodAggregate ma;
        ma.records = a.at("records").get<int>();
        ma.avg_drop = opt_from(a, "avg_drop_pct");
        ma.avg_inc = opt_from(a, "avg_inc_pct");
        ma.ins_auc = opt_from(a, "ins_auc_pct");
        ma.del_auc = opt_from(a, "del_auc_pct");
        ma.energy_pg = opt_from(a, "energy_pg_pct");
        ma.energy_pg_count = a.at("energy_pg_count").get<int>();
        ma.insertion_curve = a.at("insertion_curve").get<std::vector<double>>();
        ma.deletion_curve = a.at("deletion_curve").get<std::vector<double>>();
        ba.methods[m] = std::move(ma);
      }
      ba.win = b.at("win_pct").get<std::map<std::string, std::map<std::string, double>>>();
      r.backends[name] = std::move(ba);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("aggregate: {}", e.what()));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v) : "-"; }

// Methods in canonical order first, anything else alphabetically after.
std::vector<std::string> method_order(const AggregateReport& r) {
  std::set<std::string> present;
  for (const auto& [_, b] : r.backends) {
    for (const auto& [m, _a] : b.methods) present.insert(m);
  }
  std::vector<std::string> out;
  for (Method m : kAllMethods) {
    const std::string id(method_id(m));
    if (present.erase(id)) out.push_back(id);
  }
  out.insert(out.end(), present.begin(), present.end());
  return out;
}

const MethodAggregate* find(const BackendAggregate& b, const std::string& m) {
  auto it = b.methods.find(m);
  return it == b.methods.end() ? nullptr : &it->second;
}

}  // namespace

std::string render_tables(const AggregateReport& r) {
  const auto methods = method_order(r);
  std::string out = fmt::format("# Evaluation summary\n\n{} records.\n", r.record_count);

  out += "\n## Insertion and deletion AUC (%)\n";
  for (const auto& [name, b] : r.backends) {
    out += fmt::format("\nBackend `{}`, layer `{}`. Higher insertion and lower deletion are better.\n\n", name, b.layer);
    out += "| Method | Insertion AUC | Deletion AUC | Images |\n|---|---:|---:|---:|\n";
    for (const auto& m : methods) {
      if (const auto* a = find(b, m)) out += fmt::format("| {} | {} | {} | {} |\n", m, cell(a->ins_auc), cell(a->del_auc), a->records);
    }
  }

  auto header = [&](const std::vector<std::string>& cols) {
    std::string h = "| Method |", rule = "|---|";
    for (const auto& [name, _] : r.backends) {
      for (const auto& c : cols) {
        h += fmt::format(" {} {} |", name, c);
        rule += "---:|";
      }
    }
    return h + "\n" + rule + "\n";
  };

  out += "\n## Faithfulness (%)\n\nAverage drop (lower is better) and average increase in confidence (higher is better).\n\n";
  out += header({"Avg Drop", "Avg Inc"});
  for (const auto& m : methods) {
    out += "| " + m + " |";
    for (const auto& [_, b] : r.backends) {
      const auto* a = find(b, m);
      out += fmt::format(" {} | {} |", a ? cell(a->avg_drop) : "-", a ? cell(a->avg_inc) : "-");
    }
    out += "\n";
  }

  out += "\n## Localization: energy-based pointing game (%)\n\n";
  out += header({"Proportion"});
  for (const auto& m : methods) {
    out += "| " + m + " |";
    for (const auto& [_, b] : r.backends) {
      const auto* a = find(b, m);
      out += fmt::format(" {} |", a ? cell(a->energy_pg) : "-");
    }
    out += "\n";
  }

  out += "\n## Win rate (%)\n\nShare of images on which the row method has a lower drop than the column method.\n";
  for (const auto& [name, b] : r.backends) {
    if (b.win.empty()) continue;
    std::vector<std::string> present;
    for (const auto& m : methods) {
      if (b.methods.count(m)) present.push_back(m);
    }
    out += fmt::format("\nBackend `{}`.\n\n|  |", name);
    std::string rule = "|---|";
    for (const auto& m : present) {
      out += " " + m + " |";
      rule += "---:|";
    }
    out += "\n" + rule + "\n";
    for (const auto& a : present) {
      out += "| " + a + " |";
      for (const auto& c : present) {
        std::string v = "-";
        if (auto it = b.win.find(a); it != b.win.end()) {
          if (auto jt = it->second.find(c); jt != it->second.end()) v = fmt::format("{:.1f}", jt->second);
        }
        out += " " + v + " |";
      }
      out += "\n";
    }
  }
  return out;
}

ReportFiles render_report(const AggregateReport& r, const std::vector<EvalRecord>& records, const fs::path& outdir) {
  std::error_code ec;
  fs::create_directories(outdir, ec);
  if (ec) fail(ErrorCode::kIo, fmt::format("cannot create '{}': {}", outdir.string(), ec.message()));
  ReportFiles files;
  files.records_csv = outdir / "records.csv";
  write_records_csv(records, files.records_csv);

  files.aggregate_json = outdir / "aggregate.json";
  {
    std::ofstream os(files.aggregate_json, std::ios::binary);
    if (!os) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", files.aggregate_json.string()));
    os << aggregate_to_json(r);
  }
  files.tables_md = outdir / "tables.md";
  {
    std::ofstream os(files.tables_md, std::ios::binary);
    if (!os) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", files.tables_md.string()));
    os << render_tables(r);
  }

  const bool multi = r.backends.size() > 1;
  std::vector<Series> ins, del;
  for (const auto& m : method_order(r)) {
    for (const auto& [name, b] : r.backends) {
      const auto* a = find(b, m);
      if (!a) continue;
      const std::string label = multi ? name + "/" + m : m;
      if (!a->insertion_curve.empty()) ins.push_back({label, a->insertion_curve});
      if (!a->deletion_curve.empty()) del.push_back({label, a->deletion_curve});
    }
  }
  if (!ins.empty()) {
    files.insertion_png = outdir / "insertion_curve.png";
    write_line_chart("Insertion", "fraction of pixels inserted", "class probability", ins, files.insertion_png);
  }
  if (!del.empty()) {
    files.deletion_png = outdir / "deletion_curve.png";
    write_line_chart("Deletion", "fraction of pixels deleted", "class probability", del, files.deletion_png);
  }
  return files;
}

// ---------------------------------------------------------------------------
// Running

std::unique_ptr<ModelBackend> make_backend(const ExperimentConfig& cfg) {
  if (cfg.backend_name == "toy") return open_backend("toy");
  return open_backend(cfg.weights);
}

EvalRecord evaluate_image(const ModelBackend& backend, const Image& x, const std::string& image_id,
                          const std::string& layer, const MethodSpec& spec, const std::vector<Metric>& metrics,
                          int annotated_class, const std::vector<BoundingBox>& boxes, int step_pixels) {
  const auto start = std::chrono::steady_clock::now();
  auto wants = [&](Metric m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };

  EvalRecord rec;
  rec.image_id = image_id;
  rec.backend = backend.name();
  rec.layer = layer;
  rec.method = std::string(method_id(spec.method));
  rec.hyperparams = spec.params.snapshot(spec.method);

  const ClassScores probs = backend.forward(x);
  const int c = probs.argmax();
  rec.class_used = c;
  rec.annotated_class = annotated_class;
  rec.class_mismatch = c != annotated_class;

  const CamResult res = explain(spec.method, backend, x, layer, c, spec.params);

  if (wants(Metric::kAvgDrop) || wants(Metric::kAvgInc) || wants(Metric::kWin)) {
    const ScorePair p{probs.scores[static_cast<std::size_t>(c)],
                      backend.forward(explanation_map(x, res.map)).scores[static_cast<std::size_t>(c)]};
    rec.y = p.y;
    rec.o = p.o;
    rec.drop_pct = drop_percent(p);
    rec.increased = p.o > p.y;
  }
  if (wants(Metric::kInsAuc) || wants(Metric::kDelAuc)) {
    CurveResult curves = insertion_deletion(backend, x, res.map, c, step_pixels);
    if (wants(Metric::kInsAuc)) {
      rec.ins_auc = curves.insertion_auc;
      rec.insertion_curve = std::move(curves.insertion_scores);
    }
    if (wants(Metric::kDelAuc)) {
      rec.del_auc = curves.deletion_auc;
      rec.deletion_curve = std::move(curves.deletion_scores);
    }
  }
  if (wants(Metric::kEnergyPg) && !boxes.empty()) {
    if (annotated_class == c) {
      rec.energy_pg = pointing_game(res.map, boxes);
    } else {
      const CamResult target = explain(spec.method, backend, x, layer, annotated_class, spec.params);
      rec.energy_pg = pointing_game(target.map, boxes);
    }
  }
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  rec.wall_time_ms = std::round(elapsed.count() * 1000.0) / 1000.0;
  return rec;
}

namespace {

void check_backend(const ModelBackend& backend, const std::string& layer, const ExperimentConfig& cfg) {
  const auto layers = backend.layers();
  if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
    std::string known;
    for (const auto& l : layers) known += (known.empty() ? "" : ", ") + l;
    fail(ErrorCode::kInvalidArgument, fmt::format("config: backend.layer '{}' not found; available: {}", layer, known));
  }
  const Capabilities caps = backend.capabilities();
  for (const auto& m : cfg.methods) {
    if (needs_gradients(m.method) && !caps.gradients) {
      fail(ErrorCode::kUnsupported, fmt::format("method '{}' needs gradients, which backend '{}' does not provide",
                                                method_id(m.method), backend.name()));
    }
    if (m.method == Method::kCam) backend.gap_class_weights(layer, 0);
  }
}

struct Slot {
  bool done = false;
  bool failed = false;
  std::vector<EvalRecord> records;
};

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, const BackendFactory& factory) {
  cfg.validate();
  std::unique_ptr<ModelBackend> backend = factory(cfg);
  const std::string layer = cfg.layer == "default" ? backend->default_layer() : cfg.layer;
  check_backend(*backend, layer, cfg);

  const DatasetManifest manifest = load_manifest(cfg.dataset_root, cfg.annotations, cfg.dataset_seed, cfg.dataset_count);
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorCode::kIo, fmt::format("cannot create '{}': {}", cfg.output_dir.string(), ec.message()));

  // Records are appended in manifest order as soon as every earlier image is
  // finished, so partial results survive an interrupted run.
  const fs::path records_path = cfg.output_dir / "records.csv";
  std::ofstream csv(records_path, std::ios::binary);
  if (!csv) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", records_path.string()));
  csv << header_row() << '\n' << std::flush;

  const std::size_t n = manifest.samples.size();
  std::vector<Slot> slots(n);
  std::size_t next_to_write = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  RunSummary summary;
  summary.annotations_skipped = manifest.skipped_entries;

  auto work = [&](const ModelBackend& model) {
    for (std::size_t i = next++; i < n; i = next++) {
      const Sample& s = manifest.samples[i];
      Slot slot;
      try {
        const Image raw = load_image(s.image_path);
        const Image x = preprocess(raw, model.input_size());
        std::vector<BoundingBox> boxes;
        for (const auto& b : s.boxes) boxes.push_back(map_boxes_to_input(b, raw.size(), x.size()));
        for (const auto& spec : cfg.methods) {
          slot.records.push_back(
              evaluate_image(model, x, s.image_id, layer, spec, cfg.metrics, s.true_class, boxes, cfg.step_pixels));
        }
      } catch (const std::exception& e) {
        spdlog::warn("skipping image '{}': {}", s.image_id, e.what());
        slot.records.clear();
        slot.failed = true;
      }
      slot.done = true;
      std::lock_guard lock(mu);
      slots[i] = std::move(slot);
      while (next_to_write < n && slots[next_to_write].done) {
        for (const auto& r : slots[next_to_write].records) csv << record_row(r) << '\n';
        csv.flush();
        ++next_to_write;
      }
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(n)));
  if (workers == 1) {
    work(*backend);
  } else {
    std::vector<std::unique_ptr<ModelBackend>> clones;
    for (int w = 0; w < workers; ++w) clones.push_back(backend->clone());
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, std::cref(*clones[static_cast<std::size_t>(w)]));
    for (auto& t : threads) t.join();
  }
  csv.close();
  if (!csv) fail(ErrorCode::kIo, fmt::format("short write to '{}'", records_path.string()));

  for (auto& slot : slots) {
    if (slot.failed) {
      ++summary.images_failed;
      continue;
    }
    ++summary.images_scored;
    for (auto& r : slot.records) summary.records.push_back(std::move(r));
  }
  if (summary.images_failed > 0) spdlog::warn("{} of {} images failed and were skipped", summary.images_failed, n);
  if (summary.images_scored == 0) fail(ErrorCode::kRuntime, "no image could be evaluated");

  summary.report = aggregate(summary.records);
  summary.files = render_report(summary.report, summary.records, cfg.output_dir);
  return summary;
}

}  // namespace camb
