#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "error.hpp"

namespace camb {

namespace fs = std::filesystem;
using nlohmann::json;

Annotation parse_annotation_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("invalid JSON: {}", e.what()));
  }
  if (!j.is_object()) fail(ErrorCode::kParse, "annotation must be a JSON object");
  for (const auto& key : {"id", "class"}) {
    if (!j.contains(key)) fail(ErrorCode::kParse, fmt::format("annotation missing '{}'", key));
  }
  Annotation a;
  if (!j["id"].is_string() || j["id"].get<std::string>().empty()) fail(ErrorCode::kParse, "'id' must be a non-empty string");
  if (!j["class"].is_number_integer() || j["class"].get<int>() < 0) fail(ErrorCode::kParse, "'class' must be a non-negative integer");
  a.id = j["id"].get<std::string>();
  a.class_index = j["class"].get<int>();
  if (j.contains("boxes")) {
    if (!j["boxes"].is_array()) fail(ErrorCode::kParse, "'boxes' must be an array");
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 4) fail(ErrorCode::kParse, "each box must be [x_min, y_min, x_max, y_max]");
      for (const auto& v : b) {
        if (!v.is_number()) fail(ErrorCode::kParse, "box coordinates must be numbers");
      }
      BoundingBox box{static_cast<int>(std::lround(b[0].get<double>())), static_cast<int>(std::lround(b[1].get<double>())),
                      static_cast<int>(std::lround(b[2].get<double>())), static_cast<int>(std::lround(b[3].get<double>())),
                      a.class_index};
      if (box.x_min < 0 || box.y_min < 0 || box.x_min >= box.x_max || box.y_min >= box.y_max) {
        fail(ErrorCode::kParse, fmt::format("degenerate box [{},{},{},{}]", box.x_min, box.y_min, box.x_max, box.y_max));
      }
      a.boxes.push_back(box);
    }
  }
  return a;
}

std::string format_annotation_line(const Annotation& a) {
  json boxes = json::array();
  for (const auto& b : a.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  json j{{"id", a.id}, {"class", a.class_index}, {"boxes", boxes}};
  return j.dump();
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) fail(ErrorCode::kInvalidArgument, fmt::format("requested {} samples but only {} available", count, n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

std::string resolve_image(const fs::path& root, const std::string& id) {
  if (fs::path(id).has_extension() && fs::is_regular_file(root / id)) return (root / id).string();
  for (const char* ext : {".png", ".jpg", ".jpeg", ".JPEG", ".PNG", ".JPG"}) {
    fs::path p = root / (id + ext);
    if (fs::is_regular_file(p)) return p.string();
  }
  return {};
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, const fs::path& annotations, std::uint64_t seed, int count) {
  std::ifstream in(annotations);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open annotations '{}'", annotations.string()));
  if (!fs::is_directory(root)) fail(ErrorCode::kIo, fmt::format("image root '{}' is not a directory", root.string()));

  DatasetManifest m;
  m.source_name = annotations.filename().string();
  m.seed = seed;
  std::map<std::string, Sample> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Annotation a = parse_annotation_line(line);
      if (by_id.count(a.id)) fail(ErrorCode::kParse, fmt::format("duplicate id '{}'", a.id));
      std::string path = resolve_image(root, a.id);
      if (path.empty()) fail(ErrorCode::kIo, fmt::format("no image for id '{}' under {}", a.id, root.string()));
      by_id[a.id] = Sample{std::move(path), a.id, a.class_index, std::move(a.boxes)};
    } catch (const Error& e) {
      spdlog::warn("{}:{}: skipping annotation: {}", annotations.string(), line_no, e.what());
      ++m.skipped_entries;
    }
  }
  if (count < 0) fail(ErrorCode::kInvalidArgument, "sample count must be >= 0");
  std::vector<Sample> all;
  all.reserve(by_id.size());
  for (auto& [id, s] : by_id) all.push_back(std::move(s));
  for (std::size_t i : sample_indices(all.size(), static_cast<std::size_t>(count), seed)) m.samples.push_back(all[i]);
  m.size = static_cast<int>(m.samples.size());
  return m;
}

BoundingBox map_boxes_to_input(const BoundingBox& box, Size orig, Size target) {
  const double sx = static_cast<double>(target.width) / orig.width;
  const double sy = static_cast<double>(target.height) / orig.height;
  auto scale = [](int v, double f, int hi) {
    const int r = static_cast<int>(std::floor(v * f + 0.5));
    return std::clamp(r, 0, hi);
  };
  BoundingBox out = box;
  out.x_min = scale(box.x_min, sx, target.width);
  out.x_max = scale(box.x_max, sx, target.width);
  out.y_min = scale(box.y_min, sy, target.height);
  out.y_max = scale(box.y_max, sy, target.height);
  auto widen = [](int& lo, int& hi, int limit) {
    if (hi > lo) return;
    if (lo >= limit) lo = limit - 1;
    hi = lo + 1;
  };
  widen(out.x_min, out.x_max, target.width);
  widen(out.y_min, out.y_max, target.height);
  return out;
}

std::vector<std::string> read_synsets(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open synset list '{}'", file.string()));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    // "n01440764 tench, Tinca tinca" -> "n01440764"
    const auto end = line.find_first_of(" \t\r");
    std::string name = line.substr(0, end);
    if (!name.empty()) out.push_back(name);
  }
  return out;
}

Annotation parse_voc_xml(const fs::path& file, const std::vector<std::string>& synsets) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(file.string(), tree);
  } catch (const pt::xml_parser_error& e) {
    fail(ErrorCode::kParse, fmt::format("{}: {}", file.string(), e.what()));
  }
  const auto root = tree.get_child_optional("annotation");
  if (!root) fail(ErrorCode::kParse, fmt::format("{}: missing <annotation>", file.string()));
  Annotation a;
  a.id = root->get<std::string>("filename", file.stem().string());
  if (fs::path(a.id).has_extension()) a.id = fs::path(a.id).stem().string();
  std::string first;
  for (const auto& [tag, obj] : *root) {
    if (tag != "object") continue;
    const std::string name = obj.get<std::string>("name", "");
    if (first.empty()) {
      first = name;
      if (synsets.empty()) {
        try {
          a.class_index = std::stoi(name);
        } catch (const std::exception&) {
          fail(ErrorCode::kParse, fmt::format("{}: class '{}' is not an index and no synset list was given", file.string(), name));
        }
      } else {
        auto it = std::find(synsets.begin(), synsets.end(), name);
        if (it == synsets.end()) fail(ErrorCode::kParse, fmt::format("{}: unknown synset '{}'", file.string(), name));
        a.class_index = static_cast<int>(it - synsets.begin());
      }
    }
    if (name != first) continue;
    try {
      BoundingBox b;
      b.x_min = static_cast<int>(std::lround(obj.get<double>("bndbox.xmin"))) - 1;
      b.y_min = static_cast<int>(std::lround(obj.get<double>("bndbox.ymin"))) - 1;
      b.x_max = static_cast<int>(std::lround(obj.get<double>("bndbox.xmax")));
      b.y_max = static_cast<int>(std::lround(obj.get<double>("bndbox.ymax")));
      b.x_min = std::max(b.x_min, 0);
      b.y_min = std::max(b.y_min, 0);
      b.class_index = a.class_index;
      if (b.x_min >= b.x_max || b.y_min >= b.y_max) fail(ErrorCode::kParse, "degenerate box");
      a.boxes.push_back(b);
    } catch (const pt::ptree_error& e) {
      fail(ErrorCode::kParse, fmt::format("{}: bad bndbox: {}", file.string(), e.what()));
    }
  }
  if (first.empty()) fail(ErrorCode::kParse, fmt::format("{}: no <object> entries", file.string()));
  return a;
}

ConvertReport convert_voc_to_jsonl(const std::vector<fs::path>& inputs, const fs::path& synsets, const fs::path& out) {
  std::vector<fs::path> files;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".xml") files.push_back(e.path());
      }
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      fail(ErrorCode::kIo, fmt::format("input '{}' does not exist", p.string()));
    }
  }
  const auto names = synsets.empty() ? std::vector<std::string>{} : read_synsets(synsets);
  ConvertReport report;
  std::map<std::string, Annotation> by_id;
  for (const auto& f : files) {
    try {
      Annotation a = parse_voc_xml(f, names);
      by_id[a.id] = std::move(a);
      ++report.converted;
    } catch (const Error& e) {
      spdlog::warn("skipping {}: {}", f.string(), e.what());
      ++report.failed;
    }
  }
  std::ofstream os(out);
  if (!os) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", out.string()));
  for (const auto& [id, a] : by_id) os << format_annotation_line(a) << '\n';
  return report;
}

}  // namespace camb
