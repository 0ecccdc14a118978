#pragma once

// Dataset ingestion: JSON-lines annotations, deterministic subset sampling and
// bounding-box mapping into model input coordinates.
//
// Annotation schema, one object per line:
//   {"id": "ILSVRC2012_val_00000001", "class": 65, "boxes": [[x_min, y_min, x_max, y_max], ...]}
// Boxes are half-open pixel ranges in original image coordinates.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "tensorcore.hpp"

namespace camb {

struct Sample {
  std::string image_path;
  std::string image_id;
  int true_class = 0;
  std::vector<BoundingBox> boxes;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::string source_name;
  std::uint64_t seed = 0;
  int size = 0;
  int skipped_entries = 0;  // unreadable annotation lines
};

struct Annotation {
  std::string id;
  int class_index = 0;
  std::vector<BoundingBox> boxes;
};

// Parses one annotation line; throws kParse on malformed input.
Annotation parse_annotation_line(const std::string& line);
std::string format_annotation_line(const Annotation& a);

// Seeded uniform sample without replacement of `count` indices out of `n`:
// Fisher-Yates over 0..n-1 driven by mt19937_64(seed), swapping i with
// rng() % (i + 1) for i = n-1 down to 1; the first `count` entries are kept,
// then sorted ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

// Reads the annotations, resolves every id to an image under `root`
// (id itself, or id + .png/.jpg/.jpeg/.JPEG), and draws `count` samples in
// sorted-id order. Unreadable lines and ids without an image are skipped.
DatasetManifest load_manifest(const std::filesystem::path& root, const std::filesystem::path& annotations,
                              std::uint64_t seed, int count);

// Scales a box from an `orig` sized image into `target` coordinates: per-axis
// factor target/orig, round half up, clamp, widen empty results to 1 pixel.
BoundingBox map_boxes_to_input(const BoundingBox& box, Size orig, Size target);

// ILSVRC / PASCAL-VOC style XML annotation. Objects whose name matches the
// first object's name become the boxes; coordinates are converted from
// 1-based inclusive to 0-based half-open. `synsets` maps names to class
// indices by position; empty means names must be integers.
Annotation parse_voc_xml(const std::filesystem::path& file, const std::vector<std::string>& synsets);

std::vector<std::string> read_synsets(const std::filesystem::path& file);

struct ConvertReport {
  int converted = 0;
  int failed = 0;
};

// Converts every .xml file given (directories are scanned non-recursively) to
// JSON lines in sorted id order.
ConvertReport convert_voc_to_jsonl(const std::vector<std::filesystem::path>& inputs,
                                   const std::filesystem::path& synsets, const std::filesystem::path& out);

}  // namespace camb
