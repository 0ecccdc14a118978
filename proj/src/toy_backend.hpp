#pragma once

#include <array>

#include "backend.hpp"

namespace camb {

// Miniature deterministic CNN used as a hand-checkable oracle:
//
//   3x224x224 --(28x28 block mean)--> 3x8x8 --(3x3 conv, pad 1, 2 ch)--> ReLU
//     = layer "conv" (2x8x8) --(global average pool)--> 2 --(linear)--> 3 logits
//
// Channel 0 responds to red-dominant regions, channel 1 to green-dominant
// ones. Classes: 0 = red object, 1 = green object, 2 = background.
class ToyBackend final : public ModelBackend {
 public:
  static constexpr int kPool = 28;
  static constexpr int kGrid = 8;
  static constexpr int kChannels = 2;
  static constexpr int kClasses = 3;
  static constexpr const char* kLayer = "conv";

  // Spatial profile shared by both kernels, times a per-channel colour vector.
  static constexpr std::array<std::array<double, 3>, 3> kProfile{{
      {0.05, 0.10, 0.05},
      {0.10, 1.00, 0.10},
      {0.05, 0.10, 0.05},
  }};
  static constexpr std::array<std::array<double, 3>, kChannels> kColour{{
      {1.0, -0.5, -0.5},
      {-0.5, 1.0, -0.5},
  }};
  static constexpr std::array<double, kChannels> kConvBias{-0.3, -0.3};
  static constexpr std::array<std::array<double, kChannels>, kClasses> kHead{{
      {2.0, -1.0},
      {-1.0, 2.0},
      {-0.75, -0.75},
  }};
  static constexpr std::array<double, kClasses> kHeadBias{0.0, 0.0, 0.4};

  static double conv_weight(int out, int in, int dy, int dx) { return kProfile[dy][dx] * kColour[out][in]; }

  std::string name() const override { return "toy"; }
  Size input_size() const override { return kDefaultInputSize; }
  int class_count() const override { return kClasses; }
  Capabilities capabilities() const override { return {true, true, true}; }
  std::vector<std::string> layers() const override { return {kLayer}; }
  std::string default_layer() const override { return kLayer; }
  std::unique_ptr<ModelBackend> clone() const override { return std::make_unique<ToyBackend>(); }

  std::vector<double> logits(const Image& x) const override;
  std::vector<ActivationMap> capture_activations(const Image& x, const std::string& layer) const override;
  std::vector<double> logits_with_layer(const Image& x, const std::string& layer,
                                        std::span<const ActivationMap> acts) const override;
  std::vector<GradientMap> capture_gradients(const Image& x, const std::string& layer, int c) const override;
  std::vector<double> gap_class_weights(const std::string& layer, int c) const override;

 private:
  std::vector<ActivationMap> activations(const Image& x) const;
  std::vector<double> head(std::span<const ActivationMap> acts) const;
};

}  // namespace camb
