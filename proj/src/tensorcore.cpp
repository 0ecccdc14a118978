#include "tensorcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "error.hpp"

namespace camb {

Map2D::Map2D(int rows, int cols, double fill) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) fail(ErrorCode::kInvalidArgument, fmt::format("negative map dims {}x{}", rows, cols));
  data_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Map2D::Map2D(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (rows < 0 || cols < 0 || data_.size() != static_cast<std::size_t>(rows) * cols) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("map {}x{} cannot hold {} values", rows, cols, data_.size()));
  }
}

double Map2D::min() const {
  if (data_.empty()) fail(ErrorCode::kInvalidArgument, "min of empty map");
  return *std::min_element(data_.begin(), data_.end());
}

double Map2D::max() const {
  if (data_.empty()) fail(ErrorCode::kInvalidArgument, "max of empty map");
  return *std::max_element(data_.begin(), data_.end());
}

double Map2D::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

const char* space_name(Space s) {
  switch (s) {
    case Space::kRaw: return "raw";
    case Space::kUnit: return "unit";
    case Space::kNormalized: return "normalized";
  }
  return "?";
}

Image::Image(int height, int width, int channels, Space space, double fill)
    : height_(height), width_(width), channels_(channels), space_(space) {
  if (height < 1 || width < 1) fail(ErrorCode::kInvalidArgument, fmt::format("image dims {}x{} must be >= 1", height, width));
  if (channels != 1 && channels != 3) fail(ErrorCode::kInvalidArgument, fmt::format("image must have 1 or 3 channels, got {}", channels));
  data_.assign(plane_size() * channels, fill);
}

Map2D normalize_map(const Map2D& m) {
  if (m.empty()) return m;
  for (double v : m.values()) {
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "normalize_map: non-finite entry");
  }
  const double lo = m.min();
  const double hi = m.max();
  Map2D out(m.rows(), m.cols(), 0.0);
  if (hi == lo) return out;
  const double range = hi - lo;
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - lo) / range;
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;  // weight of hi
};

// Half-pixel source coordinates, clamped at the borders.
std::vector<Tap> make_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
    if (lo == hi) taps[i].frac = 0.0;
  }
  return taps;
}

}  // namespace

Map2D resize_bilinear(const Map2D& m, Size target) {
  if (m.empty()) fail(ErrorCode::kInvalidArgument, "resize of empty map");
  if (target.height < 1 || target.width < 1) {
    fail(ErrorCode::kInvalidArgument, fmt::format("bad resize target {}x{}", target.height, target.width));
  }
  if (target == m.size()) return m;
  const auto ys = make_taps(m.rows(), target.height);
  const auto xs = make_taps(m.cols(), target.width);
  Map2D out(target.height, target.width);
  for (int y = 0; y < target.height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < target.width; ++x) {
      const Tap& tx = xs[x];
      const double top = m(ty.lo, tx.lo) * (1 - tx.frac) + m(ty.lo, tx.hi) * tx.frac;
      const double bottom = m(ty.hi, tx.lo) * (1 - tx.frac) + m(ty.hi, tx.hi) * tx.frac;
      out(y, x) = top * (1 - ty.frac) + bottom * ty.frac;
    }
  }
  return out;
}

Map2D upsample(const Map2D& m, Size target) {
  if (target.height < m.rows() || target.width < m.cols()) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("upsample: target {}x{} smaller than source {}x{}", target.height, target.width, m.rows(), m.cols()));
  }
  return resize_bilinear(m, target);
}

Image mask_input(const Image& x, const Map2D& s) {
  if (s.size() != x.size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("mask {}x{} does not match image {}x{}", s.rows(), s.cols(),
                                                x.height(), x.width()));
  }
  Image out = x;
  auto mask = s.values();
  for (int c = 0; c < x.channels(); ++c) {
    auto p = out.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= mask[i];
  }
  return out;
}

double auc(std::span<const double> scores) {
  if (scores.size() < 2) fail(ErrorCode::kInvalidArgument, fmt::format("auc needs >= 2 points, got {}", scores.size()));
  double area = 0.0;
  for (std::size_t t = 1; t < scores.size(); ++t) area += (scores[t] + scores[t - 1]) / 2.0;
  return area / static_cast<double>(scores.size() - 1);
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Image gaussian_blur(const Image& x, double sigma, int ksize) {
  if (ksize < 1 || ksize % 2 == 0) fail(ErrorCode::kInvalidArgument, fmt::format("blur kernel size {} must be odd", ksize));
  if (sigma <= 0) fail(ErrorCode::kInvalidArgument, "blur sigma must be positive");
  const int half = ksize / 2;
  std::vector<double> kernel(ksize);
  double total = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - half;
    kernel[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += kernel[i];
  }
  for (double& k : kernel) k /= total;

  const int h = x.height();
  const int w = x.width();
  Image tmp = x;
  Image out = x;
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < ksize; ++k) acc += kernel[k] * x.at(c, y, reflect101(xx + k - half, w));
        tmp.at(c, y, xx) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < ksize; ++k) acc += kernel[k] * tmp.at(c, reflect101(y + k - half, h), xx);
        out.at(c, y, xx) = acc;
      }
    }
  }
  return out;
}

Map2D relu(Map2D m) {
  for (double& v : m.values()) v = v > 0 ? v : 0.0;
  return m;
}

}  // namespace camb
