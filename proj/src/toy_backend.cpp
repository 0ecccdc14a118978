#include "toy_backend.hpp"

#include <fmt/format.h>

#include "error.hpp"

namespace camb {

std::vector<ActivationMap> ToyBackend::activations(const Image& x) const {
  check_input(x);
  // 28x28 block means.
  std::array<Map2D, 3> pooled{Map2D(kGrid, kGrid), Map2D(kGrid, kGrid), Map2D(kGrid, kGrid)};
  for (int c = 0; c < 3; ++c) {
    for (int gy = 0; gy < kGrid; ++gy) {
      for (int gx = 0; gx < kGrid; ++gx) {
        double acc = 0.0;
        for (int y = gy * kPool; y < (gy + 1) * kPool; ++y) {
          for (int xx = gx * kPool; xx < (gx + 1) * kPool; ++xx) acc += x.at(c, y, xx);
        }
        pooled[c](gy, gx) = acc / (kPool * kPool);
      }
    }
  }

  std::vector<ActivationMap> out;
  for (int k = 0; k < kChannels; ++k) {
    Map2D a(kGrid, kGrid);
    for (int y = 0; y < kGrid; ++y) {
      for (int xx = 0; xx < kGrid; ++xx) {
        double acc = kConvBias[k];
        for (int c = 0; c < 3; ++c) {
          for (int dy = 0; dy < 3; ++dy) {
            for (int dx = 0; dx < 3; ++dx) {
              const int sy = y + dy - 1;
              const int sx = xx + dx - 1;
              if (sy < 0 || sy >= kGrid || sx < 0 || sx >= kGrid) continue;
              acc += conv_weight(k, c, dy, dx) * pooled[c](sy, sx);
            }
          }
        }
        a(y, xx) = acc > 0 ? acc : 0.0;
      }
    }
    out.push_back({std::move(a), k, kLayer});
  }
  return out;
}

std::vector<double> ToyBackend::head(std::span<const ActivationMap> acts) const {
  if (acts.size() != kChannels) {
    fail(ErrorCode::kShapeMismatch, fmt::format("toy head expects {} channels, got {}", kChannels, acts.size()));
  }
  std::array<double, kChannels> pooled{};
  for (int k = 0; k < kChannels; ++k) {
    if (acts[k].data.size() != Size{kGrid, kGrid}) fail(ErrorCode::kShapeMismatch, "toy head expects 8x8 maps");
    pooled[k] = acts[k].data.sum() / (kGrid * kGrid);
  }
  std::vector<double> logits(kClasses);
  for (int c = 0; c < kClasses; ++c) {
    logits[c] = kHeadBias[c];
    for (int k = 0; k < kChannels; ++k) logits[c] += kHead[c][k] * pooled[k];
  }
  return logits;
}

std::vector<double> ToyBackend::logits(const Image& x) const {
  const auto acts = activations(x);
  return head(acts);
}

std::vector<ActivationMap> ToyBackend::capture_activations(const Image& x, const std::string& layer) const {
  check_layer(layer);
  return activations(x);
}

std::vector<double> ToyBackend::logits_with_layer(const Image& x, const std::string& layer,
                                                  std::span<const ActivationMap> acts) const {
  check_input(x);
  check_layer(layer);
  return head(acts);
}

std::vector<GradientMap> ToyBackend::capture_gradients(const Image& x, const std::string& layer, int c) const {
  check_input(x);
  check_layer(layer);
  check_class(c);
  // The head is linear in the pooled activations.
  std::vector<GradientMap> out;
  for (int k = 0; k < kChannels; ++k) {
    out.push_back({Map2D(kGrid, kGrid, kHead[c][k] / (kGrid * kGrid)), k, c, kLayer});
  }
  return out;
}

std::vector<double> ToyBackend::gap_class_weights(const std::string& layer, int c) const {
  check_layer(layer);
  check_class(c);
  return {kHead[c].begin(), kHead[c].end()};
}

}  // namespace camb
