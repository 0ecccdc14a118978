#pragma once

// Evaluation protocols: faithfulness (average drop, average increase in
// confidence, win rate), insertion/deletion curves, energy-based pointing game.

#include <span>
#include <vector>

#include "backend.hpp"
#include "tensorcore.hpp"

namespace camb {

// Y^c: class score on the full image. O^c: class score on the explanation map.
struct ScorePair {
  double y = 0.0;
  double o = 0.0;
};

// max(0, Y - O) / Y * 100 for one image. Requires Y > 0.
double drop_percent(const ScorePair& p);

// Mean of drop_percent over images.
double average_drop(std::span<const ScorePair> pairs);

// 100 * fraction of images with O > Y (strict).
double average_increase(std::span<const ScorePair> pairs);

// 100 * fraction of images where drops_a[i] < drops_b[i]. Ties count in the
// denominator but are not wins.
double win_rate(std::span<const double> drops_a, std::span<const double> drops_b);

struct FaithfulnessEntry {
  double y = 0.0;
  double o = 0.0;
  double drop = 0.0;
  bool increased = false;
};

struct FaithfulnessResult {
  double avg_drop_pct = 0.0;
  double avg_increase_pct = 0.0;
  std::vector<FaithfulnessEntry> per_image;
};

FaithfulnessResult faithfulness(std::span<const ScorePair> pairs);

struct CurveResult {
  std::vector<double> insertion_scores;
  std::vector<double> deletion_scores;
  double insertion_auc = 0.0;
  double deletion_auc = 0.0;
  int step_pixels = 0;
};

inline constexpr int kDefaultStepPixels = 224;
inline constexpr double kInsertionBlurSigma = 5.0;
inline constexpr int kInsertionBlurKernel = 11;

// Number of curve points for `pixels` pixels removed/restored `step` at a time,
// including the unmodified stage 0.
int stage_count(int pixels, int step);

// Pixel indices (row-major) by descending saliency; ties by ascending index.
std::vector<int> saliency_order(const Map2D& s);

// Deletion: zero out the most salient pixels stage by stage starting from x.
// Insertion: restore them stage by stage starting from a blurred copy of x.
// Scores are the softmax probability of class c at every stage.
CurveResult insertion_deletion(const ModelBackend& backend, const Image& x, const SaliencyMap& s, int c,
                               int step_pixels = kDefaultStepPixels);

// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  int class_index = 0;

  int area() const { return (x_max - x_min) * (y_max - y_min); }
  bool operator==(const BoundingBox&) const = default;
};

// Share of total saliency mass inside the union of the boxes. 0 when the map
// is identically zero.
double pointing_game(const SaliencyMap& s, std::span<const BoundingBox> boxes);

}  // namespace camb
