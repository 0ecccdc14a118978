#pragma once

#include <map>
#include <memory>

#include "backend.hpp"
#include "onnx/graph.hpp"

namespace camb {

// ModelBackend over an ONNX CNN graph (VGG, ResNet, SqueezeNet style). Layer
// names are the graph's tensor names for every rank-4 intermediate value.
class OnnxBackend final : public ModelBackend {
 public:
  static OnnxBackend load(const std::string& path);
  OnnxBackend(std::shared_ptr<const nn::Graph> graph, std::string name);

  std::string name() const override { return name_; }
  Size input_size() const override;
  int class_count() const override { return classes_; }
  Capabilities capabilities() const override { return {true, true, true}; }
  std::vector<std::string> layers() const override { return layers_; }
  std::string default_layer() const override { return default_layer_; }
  std::unique_ptr<ModelBackend> clone() const override { return std::make_unique<OnnxBackend>(*this); }

  // Activation shape (C, h, w) of a catalog layer.
  nn::Shape layer_shape(const std::string& layer) const;

  std::vector<double> logits(const Image& x) const override;
  std::vector<ActivationMap> capture_activations(const Image& x, const std::string& layer) const override;
  std::vector<double> logits_with_layer(const Image& x, const std::string& layer,
                                        std::span<const ActivationMap> acts) const override;
  std::vector<GradientMap> capture_gradients(const Image& x, const std::string& layer, int c) const override;
  std::vector<double> gap_class_weights(const std::string& layer, int c) const override;

 private:
  nn::Tensor to_input(const Image& x) const;
  std::vector<double> read_logits(const nn::Values& v) const;

  std::shared_ptr<const nn::Graph> graph_;
  std::string name_;
  std::vector<std::string> layers_;
  std::map<std::string, nn::Shape> shapes_;
  std::string default_layer_;
  int classes_ = 0;
};

}  // namespace camb
