#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensorcore.hpp"

namespace camb {

inline constexpr Size kDefaultInputSize{224, 224};
inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

// Resize a raw [0,255] RGB image to `target`, scale to [0,1] and standardize
// each channel with the ImageNet mean/std. Rejects anything not in raw space.
Image preprocess(const Image& raw, Size target = kDefaultInputSize);

// Undo the standardization (for rendering). Output is in [0,255] raw space,
// clamped.
Image deprocess(const Image& normalized);

enum class ScoreKind { kLogit, kSoftmax };

struct ClassScores {
  std::vector<double> scores;
  ScoreKind kind = ScoreKind::kSoftmax;
  int class_count() const { return static_cast<int>(scores.size()); }
  int argmax() const;
};

std::vector<double> softmax(std::span<const double> logits);

struct GradientMap {
  Map2D data;
  int channel_index = 0;
  int target_class = 0;
  std::string layer_name;
};

struct Capabilities {
  bool forward = true;
  bool activations = true;
  bool gradients = false;
};

// Contract every CNN adapter satisfies. All scoring entry points are const and
// deterministic; an instance is not required to be safe for concurrent use,
// callers clone() one per worker.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string name() const = 0;
  virtual Size input_size() const = 0;
  virtual int class_count() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual std::vector<std::string> layers() const = 0;
  virtual std::string default_layer() const = 0;
  virtual std::unique_ptr<ModelBackend> clone() const = 0;

  // Pre-softmax class scores.
  virtual std::vector<double> logits(const Image& x) const = 0;

  virtual std::vector<ActivationMap> capture_activations(const Image& x, const std::string& layer) const = 0;

  // Logits obtained when the named layer's output is replaced by `acts` while
  // every other value is computed from x.
  virtual std::vector<double> logits_with_layer(const Image& x, const std::string& layer,
                                                std::span<const ActivationMap> acts) const = 0;

  // d logit_c / d A^k for every channel of `layer`.
  virtual std::vector<GradientMap> capture_gradients(const Image& x, const std::string& layer, int c) const;

  // Linear classifier weights w^c_k when `layer` feeds a global-average-pool
  // plus linear head. Throws kUnsupported otherwise.
  virtual std::vector<double> gap_class_weights(const std::string& layer, int c) const;

  ClassScores forward(const Image& x, ScoreKind kind = ScoreKind::kSoftmax) const;
  std::vector<ClassScores> forward_batch(std::span<const Image> xs, ScoreKind kind = ScoreKind::kSoftmax) const;

 protected:
  void check_input(const Image& x) const;
  void check_layer(const std::string& layer) const;
  void check_class(int c) const;
};

// Open a backend from a model spec: "toy" for the built-in fixture, otherwise
// a path to an ONNX file. Relative paths that do not exist are retried under
// $CAMB_CACHE.
std::unique_ptr<ModelBackend> open_backend(const std::string& spec);

}  // namespace camb
