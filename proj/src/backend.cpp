#include "backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <fmt/format.h>

#include "error.hpp"
#include "onnx_backend.hpp"
#include "toy_backend.hpp"

namespace camb {

Image preprocess(const Image& raw, Size target) {
  if (raw.space() == Space::kNormalized) {
    fail(ErrorCode::kInvalidArgument, "preprocess: input is already normalized");
  }
  if (raw.channels() != 3) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("preprocess: expected 3 channels, got {} (expand grayscale first)", raw.channels()));
  }
  const double scale = raw.space() == Space::kRaw ? 1.0 / 255.0 : 1.0;
  Image out(target.height, target.width, 3, Space::kNormalized);
  for (int c = 0; c < 3; ++c) {
    Map2D plane(raw.height(), raw.width(), std::vector<double>(raw.plane(c).begin(), raw.plane(c).end()));
    Map2D resized = resize_bilinear(plane, target);
    auto src = resized.values();
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] * scale - kImageNetMean[c]) / kImageNetStd[c];
  }
  return out;
}

Image deprocess(const Image& normalized) {
  if (normalized.space() != Space::kNormalized || normalized.channels() != 3) {
    fail(ErrorCode::kInvalidArgument, "deprocess expects a normalized 3-channel image");
  }
  Image out(normalized.height(), normalized.width(), 3, Space::kRaw);
  for (int c = 0; c < 3; ++c) {
    auto src = normalized.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = std::clamp((src[i] * kImageNetStd[c] + kImageNetMean[c]) * 255.0, 0.0, 255.0);
    }
  }
  return out;
}

int ClassScores::argmax() const {
  if (scores.empty()) fail(ErrorCode::kInvalidArgument, "argmax of empty scores");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<GradientMap> ModelBackend::capture_gradients(const Image&, const std::string&, int) const {
  fail(ErrorCode::kUnsupported, fmt::format("backend '{}' does not support gradient capture", name()));
}

std::vector<double> ModelBackend::gap_class_weights(const std::string& layer, int) const {
  fail(ErrorCode::kUnsupported,
       fmt::format("CAM requires a global-average-pool + linear head after layer '{}'; backend '{}' has none",
                   layer, name()));
}

ClassScores ModelBackend::forward(const Image& x, ScoreKind kind) const {
  check_input(x);
  ClassScores out;
  out.kind = kind;
  out.scores = logits(x);
  if (kind == ScoreKind::kSoftmax) out.scores = softmax(out.scores);
  return out;
}

std::vector<ClassScores> ModelBackend::forward_batch(std::span<const Image> xs, ScoreKind kind) const {
  std::vector<ClassScores> out;
  out.reserve(xs.size());
  for (const Image& x : xs) out.push_back(forward(x, kind));
  return out;
}

void ModelBackend::check_input(const Image& x) const {
  const Size want = input_size();
  if (x.size() != want || x.channels() != 3) {
    fail(ErrorCode::kShapeMismatch, fmt::format("backend '{}' expects 3x{}x{} input, got {}x{}x{}", name(),
                                                want.height, want.width, x.channels(), x.height(), x.width()));
  }
  if (x.space() != Space::kNormalized) {
    fail(ErrorCode::kInvalidArgument, fmt::format("backend '{}' expects a preprocessed (normalized) input, got {}",
                                                  name(), space_name(x.space())));
  }
}

void ModelBackend::check_layer(const std::string& layer) const {
  const auto catalog = layers();
  if (std::find(catalog.begin(), catalog.end(), layer) != catalog.end()) return;
  fail(ErrorCode::kInvalidArgument,
       fmt::format("unknown layer '{}'; backend '{}' exposes: {}", layer, name(), fmt::join(catalog, ", ")));
}

void ModelBackend::check_class(int c) const {
  if (c < 0 || c >= class_count()) {
    fail(ErrorCode::kOutOfRange, fmt::format("class {} out of range [0, {})", c, class_count()));
  }
}

std::unique_ptr<ModelBackend> open_backend(const std::string& spec) {
  if (spec == "toy") return std::make_unique<ToyBackend>();
  namespace fs = std::filesystem;
  fs::path path(spec);
  if (!fs::exists(path) && path.is_relative()) {
    if (const char* cache = std::getenv("CAMB_CACHE"); cache != nullptr && *cache != '\0') {
      fs::path cached = fs::path(cache) / path;
      if (fs::exists(cached)) path = cached;
    }
  }
  if (!fs::exists(path)) fail(ErrorCode::kIo, fmt::format("model '{}' not found (expected 'toy' or an .onnx path)", spec));
  return std::make_unique<OnnxBackend>(OnnxBackend::load(path.string()));
}

}  // namespace camb
