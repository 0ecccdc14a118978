#pragma once

// Minimal float32 inference runtime for ONNX CNN graphs, with reverse-mode
// differentiation from the logits back to any intermediate tensor.
//
// Supported operators: Conv, Relu, Clip, MaxPool, AveragePool,
// GlobalAveragePool, GlobalMaxPool, Flatten, Reshape, Gemm, MatMul, Add, Sub,
// Mul, Div (constant divisor), Concat, BatchNormalization, Dropout, Identity,
// Constant, Softmax (terminal only).

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace camb_onnx {
class ModelProto;
}

namespace camb::nn {

using Shape = std::vector<std::int64_t>;

struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  std::int64_t numel() const;
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }
};

std::int64_t numel(const Shape& s);
std::string shape_string(const Shape& s);

struct Attribute {
  std::int64_t i = 0;
  float f = 0.0f;
  std::string s;
  std::vector<std::int64_t> ints;
  std::vector<float> floats;
  Tensor t;
};

struct Node {
  std::string op;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, Attribute> attrs;

  bool has(const std::string& key) const { return attrs.count(key) != 0; }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  float get_float(const std::string& key, float fallback) const;
  std::vector<std::int64_t> get_ints(const std::string& key, std::vector<std::int64_t> fallback) const;
};

using Values = std::unordered_map<std::string, Tensor>;

class Graph {
 public:
  static Graph from_proto(const camb_onnx::ModelProto& model);
  static Graph load(const std::string& path);

  const std::string& input_name() const { return input_name_; }
  // Pre-softmax output. When the graph ends in Softmax this is its input.
  const std::string& logits_name() const { return logits_name_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Tensor* initializer(const std::string& name) const;
  // Node producing `tensor`, or nullptr for graph inputs and initializers.
  const Node* producer(const std::string& tensor) const;
  std::vector<const Node*> consumers(const std::string& tensor) const;

  // Evaluates every node up to the logits. When `override_name` is non-empty
  // the tensor of that name takes `override_value` instead of being computed.
  Values run(const Tensor& input, const std::string& override_name = {}, const Tensor* override_value = nullptr) const;

  // d(sum(seed * logits)) / d(wrt), using the forward values from run().
  Tensor gradient(const Values& values, const std::string& wrt, const Tensor& seed) const;

 private:
  void finalize();
  const Tensor& value(const Values& values, const std::string& name) const;

  std::string input_name_;
  std::string logits_name_;
  Shape input_shape_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Tensor> initializers_;
  std::unordered_map<std::string, std::size_t> producer_;
};

}  // namespace camb::nn
