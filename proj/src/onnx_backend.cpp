#include "onnx_backend.hpp"

#include <algorithm>
#include <filesystem>

#include <fmt/format.h>

#include "error.hpp"

namespace camb {

namespace {

bool is_feature_op(const std::string& op) {
  return op == "Conv" || op == "Relu" || op == "Clip" || op == "BatchNormalization" || op == "Add" || op == "Concat";
}

bool is_passthrough(const std::string& op) { return op == "Identity" || op == "Dropout"; }

}  // namespace

OnnxBackend OnnxBackend::load(const std::string& path) {
  auto graph = std::make_shared<const nn::Graph>(nn::Graph::load(path));
  return OnnxBackend(std::move(graph), std::filesystem::path(path).stem().string());
}

OnnxBackend::OnnxBackend(std::shared_ptr<const nn::Graph> graph, std::string name)
    : graph_(std::move(graph)), name_(std::move(name)) {
  if (graph_->input_shape().at(1) != 3) fail(ErrorCode::kUnsupported, "model input must have 3 channels");
  // One probe pass on a zero input to learn every intermediate shape.
  const nn::Values values = graph_->run(nn::Tensor(graph_->input_shape()));
  const nn::Tensor& out = values.at(graph_->logits_name());
  if (out.rank() != 2 || out.dim(0) != 1) {
    fail(ErrorCode::kUnsupported, fmt::format("model output must be [1, classes], got {}", nn::shape_string(out.shape)));
  }
  classes_ = static_cast<int>(out.dim(1));
  for (const nn::Node& n : graph_->nodes()) {
    const nn::Tensor& t = values.at(n.outputs.at(0));
    if (t.rank() != 4) continue;
    layers_.push_back(n.outputs.at(0));
    shapes_[n.outputs.at(0)] = {t.dim(1), t.dim(2), t.dim(3)};
    if (is_feature_op(n.op) && t.dim(2) > 1 && t.dim(3) > 1) default_layer_ = n.outputs.at(0);
  }
  if (layers_.empty()) fail(ErrorCode::kUnsupported, "model has no convolutional feature maps");
  if (default_layer_.empty()) default_layer_ = layers_.back();
}

Size OnnxBackend::input_size() const {
  return {static_cast<int>(graph_->input_shape().at(2)), static_cast<int>(graph_->input_shape().at(3))};
}

nn::Shape OnnxBackend::layer_shape(const std::string& layer) const {
  check_layer(layer);
  return shapes_.at(layer);
}

nn::Tensor OnnxBackend::to_input(const Image& x) const {
  check_input(x);
  nn::Tensor t(graph_->input_shape());
  auto src = x.values();
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(src[i]);
  return t;
}

std::vector<double> OnnxBackend::read_logits(const nn::Values& v) const {
  const nn::Tensor& out = v.at(graph_->logits_name());
  return {out.data.begin(), out.data.end()};
}

std::vector<double> OnnxBackend::logits(const Image& x) const { return read_logits(graph_->run(to_input(x))); }

std::vector<ActivationMap> OnnxBackend::capture_activations(const Image& x, const std::string& layer) const {
  check_layer(layer);
  const nn::Values values = graph_->run(to_input(x));
  const nn::Tensor& t = values.at(layer);
  const int channels = static_cast<int>(t.dim(1)), h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  std::vector<ActivationMap> out;
  out.reserve(static_cast<std::size_t>(channels));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int k = 0; k < channels; ++k) {
    auto begin = t.data.begin() + static_cast<std::ptrdiff_t>(k * plane);
    out.push_back({Map2D(h, w, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(plane))), k, layer});
  }
  return out;
}

std::vector<double> OnnxBackend::logits_with_layer(const Image& x, const std::string& layer,
                                                   std::span<const ActivationMap> acts) const {
  check_layer(layer);
  const nn::Shape& s = shapes_.at(layer);
  if (static_cast<std::int64_t>(acts.size()) != s[0]) {
    fail(ErrorCode::kShapeMismatch, fmt::format("layer '{}' has {} channels, got {}", layer, s[0], acts.size()));
  }
  nn::Tensor t({1, s[0], s[1], s[2]});
  const std::size_t plane = static_cast<std::size_t>(s[1] * s[2]);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    if (acts[k].data.rows() != s[1] || acts[k].data.cols() != s[2]) {
      fail(ErrorCode::kShapeMismatch, fmt::format("activation {} has wrong spatial size", k));
    }
    auto src = acts[k].data.values();
    for (std::size_t i = 0; i < plane; ++i) t.data[k * plane + i] = static_cast<float>(src[i]);
  }
  return read_logits(graph_->run(to_input(x), layer, &t));
}

std::vector<GradientMap> OnnxBackend::capture_gradients(const Image& x, const std::string& layer, int c) const {
  check_layer(layer);
  check_class(c);
  const nn::Values values = graph_->run(to_input(x));
  nn::Tensor seed({1, classes_});
  seed.data[static_cast<std::size_t>(c)] = 1.0f;
  const nn::Tensor g = graph_->gradient(values, layer, seed);
  const int channels = static_cast<int>(g.dim(1)), h = static_cast<int>(g.dim(2)), w = static_cast<int>(g.dim(3));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<GradientMap> out;
  out.reserve(static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) {
    auto begin = g.data.begin() + static_cast<std::ptrdiff_t>(k * plane);
    out.push_back({Map2D(h, w, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(plane))), k, c, layer});
  }
  return out;
}

std::vector<double> OnnxBackend::gap_class_weights(const std::string& layer, int c) const {
  check_layer(layer);
  check_class(c);
  auto unsupported = [&]() { return ModelBackend::gap_class_weights(layer, c); };

  // Follow the single-consumer chain layer -> GAP -> flatten -> Gemm -> logits.
  auto next = [&](const std::string& tensor) -> const nn::Node* {
    auto cons = graph_->consumers(tensor);
    if (cons.size() != 1) return nullptr;
    const nn::Node* n = cons[0];
    while (n != nullptr && is_passthrough(n->op)) {
      cons = graph_->consumers(n->outputs.at(0));
      n = cons.size() == 1 ? cons[0] : nullptr;
    }
    return n;
  };

  const nn::Node* pool = next(layer);
  if (pool == nullptr) return unsupported();
  const nn::Shape& s = shapes_.at(layer);
  bool global = pool->op == "GlobalAveragePool";
  if (pool->op == "AveragePool") {
    const auto k = pool->get_ints("kernel_shape", {});
    const auto pads = pool->get_ints("pads", {0, 0, 0, 0});
    global = k.size() == 2 && k[0] == s[1] && k[1] == s[2] &&
             std::all_of(pads.begin(), pads.end(), [](std::int64_t p) { return p == 0; });
  }
  if (!global) return unsupported();
  const nn::Node* flat = next(pool->outputs.at(0));
  if (flat == nullptr || (flat->op != "Flatten" && flat->op != "Reshape")) return unsupported();
  const nn::Node* fc = next(flat->outputs.at(0));
  if (fc == nullptr || fc->op != "Gemm" || fc->get_int("transA", 0) != 0) return unsupported();
  std::string tail = fc->outputs.at(0);
  while (tail != graph_->logits_name()) {
    auto cons = graph_->consumers(tail);
    if (cons.size() != 1 || !is_passthrough(cons[0]->op)) return unsupported();
    tail = cons[0]->outputs.at(0);
  }
  const nn::Tensor* weights = graph_->initializer(fc->inputs.at(1));
  if (weights == nullptr || weights->rank() != 2) return unsupported();
  const bool trans_b = fc->get_int("transB", 0) != 0;
  const float alpha = fc->get_float("alpha", 1.0f);
  const std::int64_t features = trans_b ? weights->dim(1) : weights->dim(0);
  if (features != s[0]) return unsupported();
  std::vector<double> out(static_cast<std::size_t>(features));
  for (std::int64_t k = 0; k < features; ++k) {
    const std::int64_t idx = trans_b ? c * weights->dim(1) + k : k * weights->dim(1) + c;
    out[static_cast<std::size_t>(k)] = static_cast<double>(alpha) * weights->data[static_cast<std::size_t>(idx)];
  }
  return out;
}

}  // namespace camb
