#include "metrics.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "error.hpp"

namespace camb {

double drop_percent(const ScorePair& p) {
  if (!(p.y > 0.0)) fail(ErrorCode::kInvalidArgument, fmt::format("average drop needs Y > 0, got {}", p.y));
  return std::max(0.0, p.y - p.o) / p.y * 100.0;
}

double average_drop(std::span<const ScorePair> pairs) {
  if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "average_drop of an empty set");
  double total = 0.0;
  for (const auto& p : pairs) total += drop_percent(p);
  return total / static_cast<double>(pairs.size());
}

double average_increase(std::span<const ScorePair> pairs) {
  if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "average_increase of an empty set");
  std::size_t count = 0;
  for (const auto& p : pairs) count += p.o > p.y ? 1 : 0;
  return 100.0 * static_cast<double>(count) / static_cast<double>(pairs.size());
}

double win_rate(std::span<const double> drops_a, std::span<const double> drops_b) {
  if (drops_a.size() != drops_b.size()) {
    fail(ErrorCode::kInvalidArgument, fmt::format("win_rate: {} vs {} paired drops", drops_a.size(), drops_b.size()));
  }
  if (drops_a.empty()) fail(ErrorCode::kInvalidArgument, "win_rate of an empty set");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < drops_a.size(); ++i) wins += drops_a[i] < drops_b[i] ? 1 : 0;
  return 100.0 * static_cast<double>(wins) / static_cast<double>(drops_a.size());
}

FaithfulnessResult faithfulness(std::span<const ScorePair> pairs) {
  FaithfulnessResult r;
  r.avg_drop_pct = average_drop(pairs);
  r.avg_increase_pct = average_increase(pairs);
  for (const auto& p : pairs) r.per_image.push_back({p.y, p.o, drop_percent(p), p.o > p.y});
  return r;
}

int stage_count(int pixels, int step) {
  if (pixels < 1 || step < 1) fail(ErrorCode::kInvalidArgument, "stage_count needs positive pixels and step");
  return (pixels + step - 1) / step + 1;
}

std::vector<int> saliency_order(const Map2D& s) {
  std::vector<int> order(s.count());
  std::iota(order.begin(), order.end(), 0);
  auto v = s.values();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)]; });
  return order;
}

CurveResult insertion_deletion(const ModelBackend& backend, const Image& x, const SaliencyMap& s, int c,
                               int step_pixels) {
  if (step_pixels < 1) fail(ErrorCode::kInvalidArgument, "step_pixels must be >= 1");
  if (c < 0 || c >= backend.class_count()) {
    fail(ErrorCode::kOutOfRange, fmt::format("class {} out of range [0, {})", c, backend.class_count()));
  }
  if (s.data.size() != x.size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("saliency {}x{} does not match image {}x{}", s.data.rows(),
                                                s.data.cols(), x.height(), x.width()));
  }
  const auto order = saliency_order(s.data);
  const int pixels = static_cast<int>(order.size());
  const int stages = stage_count(pixels, step_pixels);
  auto score = [&](const Image& img) { return backend.forward(img, ScoreKind::kSoftmax).scores[static_cast<std::size_t>(c)]; };

  CurveResult r;
  r.step_pixels = step_pixels;
  Image deleted = x;
  Image inserted = gaussian_blur(x, kInsertionBlurSigma, kInsertionBlurKernel);
  r.deletion_scores.reserve(static_cast<std::size_t>(stages));
  r.insertion_scores.reserve(static_cast<std::size_t>(stages));
  r.deletion_scores.push_back(score(deleted));
  r.insertion_scores.push_back(score(inserted));
  const std::size_t plane = x.plane_size();
  for (int t = 1; t < stages; ++t) {
    const int begin = (t - 1) * step_pixels;
    const int end = std::min(t * step_pixels, pixels);
    for (int i = begin; i < end; ++i) {
      const auto p = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
      for (int ch = 0; ch < x.channels(); ++ch) {
        deleted.values()[ch * plane + p] = 0.0;
        inserted.values()[ch * plane + p] = x.values()[ch * plane + p];
      }
    }
    r.deletion_scores.push_back(score(deleted));
    r.insertion_scores.push_back(score(inserted));
  }
  r.deletion_auc = auc(r.deletion_scores);
  r.insertion_auc = auc(r.insertion_scores);
  return r;
}

double pointing_game(const SaliencyMap& s, std::span<const BoundingBox> boxes) {
  if (boxes.empty()) fail(ErrorCode::kInvalidArgument, "pointing_game needs at least one box");
  const int h = s.data.rows(), w = s.data.cols();
  Map2D inside(h, w, 0.0);
  for (const auto& b : boxes) {
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h || b.x_min >= b.x_max || b.y_min >= b.y_max) {
      fail(ErrorCode::kOutOfRange, fmt::format("box ({},{},{},{}) invalid for {}x{} map", b.x_min, b.y_min, b.x_max,
                                               b.y_max, h, w));
    }
    for (int y = b.y_min; y < b.y_max; ++y) {
      for (int x = b.x_min; x < b.x_max; ++x) inside(y, x) = 1.0;
    }
  }
  double in = 0.0, total = 0.0;
  auto v = s.data.values();
  auto m = inside.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0) fail(ErrorCode::kInvalidArgument, "pointing_game needs a non-negative saliency map");
    total += v[i];
    if (m[i] != 0.0) in += v[i];
  }
  return total > 0.0 ? in / total : 0.0;
}

}  // namespace camb
