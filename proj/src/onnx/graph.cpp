#include "graph.hpp"

#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "../error.hpp"
#include "onnx_subset.pb.h"
#include "ops.hpp"

namespace camb::nn {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(static_cast<std::size_t>(camb::nn::numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != camb::nn::numel(shape)) {
    fail(ErrorCode::kShapeMismatch, fmt::format("tensor {} cannot hold {} values", shape_string(shape), data.size()));
  }
}

std::int64_t Tensor::numel() const { return camb::nn::numel(shape); }

std::int64_t Node::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = attrs.find(key);
  return it == attrs.end() ? fallback : it->second.i;
}

float Node::get_float(const std::string& key, float fallback) const {
  auto it = attrs.find(key);
  return it == attrs.end() ? fallback : it->second.f;
}

std::vector<std::int64_t> Node::get_ints(const std::string& key, std::vector<std::int64_t> fallback) const {
  auto it = attrs.find(key);
  return it == attrs.end() ? fallback : it->second.ints;
}

namespace {

Tensor to_tensor(const camb_onnx::TensorProto& t) {
  Shape shape(t.dims().begin(), t.dims().end());
  const auto count = static_cast<std::size_t>(numel(shape));
  std::vector<float> values(count);
  const std::string& raw = t.raw_data();
  switch (t.data_type()) {
    case camb_onnx::TensorProto::FLOAT:
      if (!raw.empty()) {
        if (raw.size() != count * sizeof(float)) fail(ErrorCode::kParse, "tensor '" + t.name() + "': raw size mismatch");
        std::memcpy(values.data(), raw.data(), raw.size());
      } else {
        if (static_cast<std::size_t>(t.float_data_size()) != count) fail(ErrorCode::kParse, "tensor '" + t.name() + "': float_data size mismatch");
        std::copy(t.float_data().begin(), t.float_data().end(), values.begin());
      }
      break;
    case camb_onnx::TensorProto::DOUBLE:
      if (!raw.empty()) {
        std::vector<double> tmp(count);
        if (raw.size() != count * sizeof(double)) fail(ErrorCode::kParse, "tensor '" + t.name() + "': raw size mismatch");
        std::memcpy(tmp.data(), raw.data(), raw.size());
        std::copy(tmp.begin(), tmp.end(), values.begin());
      } else {
        std::copy(t.double_data().begin(), t.double_data().end(), values.begin());
      }
      break;
    case camb_onnx::TensorProto::INT64:
      if (!raw.empty()) {
        std::vector<std::int64_t> tmp(count);
        if (raw.size() != count * sizeof(std::int64_t)) fail(ErrorCode::kParse, "tensor '" + t.name() + "': raw size mismatch");
        std::memcpy(tmp.data(), raw.data(), raw.size());
        std::copy(tmp.begin(), tmp.end(), values.begin());
      } else {
        std::copy(t.int64_data().begin(), t.int64_data().end(), values.begin());
      }
      break;
    case camb_onnx::TensorProto::INT32:
      if (!raw.empty()) {
        std::vector<std::int32_t> tmp(count);
        if (raw.size() != count * sizeof(std::int32_t)) fail(ErrorCode::kParse, "tensor '" + t.name() + "': raw size mismatch");
        std::memcpy(tmp.data(), raw.data(), raw.size());
        std::copy(tmp.begin(), tmp.end(), values.begin());
      } else {
        std::copy(t.int32_data().begin(), t.int32_data().end(), values.begin());
      }
      break;
    default:
      fail(ErrorCode::kUnsupported, fmt::format("tensor '{}': data type {} unsupported", t.name(), t.data_type()));
  }
  return Tensor(std::move(shape), std::move(values));
}

const std::unordered_set<std::string>& supported_ops() {
  static const std::unordered_set<std::string> ops{
      "Conv",    "Relu",     "Clip", "MaxPool", "AveragePool",        "GlobalAveragePool", "GlobalMaxPool",
      "Flatten", "Reshape",  "Gemm", "MatMul",  "Add",                "Sub",               "Mul",
      "Div",     "Concat",   "Dropout", "Identity", "BatchNormalization", "Softmax",      "Constant"};
  return ops;
}

}  // namespace

Graph Graph::from_proto(const camb_onnx::ModelProto& model) {
  if (!model.has_graph()) fail(ErrorCode::kParse, "model has no graph");
  const auto& g = model.graph();
  Graph out;
  for (const auto& init : g.initializer()) out.initializers_[init.name()] = to_tensor(init);

  for (const auto& in : g.input()) {
    if (out.initializers_.count(in.name())) continue;
    if (!out.input_name_.empty()) fail(ErrorCode::kUnsupported, "graphs with more than one data input are unsupported");
    out.input_name_ = in.name();
    if (in.has_type() && in.type().has_tensor_type() && in.type().tensor_type().has_shape()) {
      for (const auto& d : in.type().tensor_type().shape().dim()) {
        out.input_shape_.push_back(d.has_dim_value() && d.dim_value() > 0 ? d.dim_value() : -1);
      }
    }
  }
  if (out.input_name_.empty()) fail(ErrorCode::kParse, "graph has no data input");
  if (out.input_shape_.size() != 4) out.input_shape_ = {1, 3, -1, -1};
  out.input_shape_[0] = 1;
  if (out.input_shape_[1] <= 0) out.input_shape_[1] = 3;
  if (out.input_shape_[2] <= 0) out.input_shape_[2] = 224;
  if (out.input_shape_[3] <= 0) out.input_shape_[3] = 224;
  if (g.output_size() != 1) fail(ErrorCode::kUnsupported, fmt::format("graph has {} outputs, expected 1", g.output_size()));
  out.logits_name_ = g.output(0).name();

  for (const auto& np : g.node()) {
    if (!np.domain().empty() && np.domain() != "ai.onnx") {
      fail(ErrorCode::kUnsupported, fmt::format("operator domain '{}' unsupported", np.domain()));
    }
    if (!supported_ops().count(np.op_type())) {
      fail(ErrorCode::kUnsupported, fmt::format("operator '{}' (node '{}') unsupported", np.op_type(), np.name()));
    }
    Node n;
    n.op = np.op_type();
    n.name = np.name().empty() ? (np.output_size() ? np.output(0) : n.op) : np.name();
    n.inputs.assign(np.input().begin(), np.input().end());
    n.outputs.assign(np.output().begin(), np.output().end());
    for (const auto& a : np.attribute()) {
      Attribute attr;
      attr.i = a.i();
      attr.f = a.f();
      attr.s = a.s();
      attr.ints.assign(a.ints().begin(), a.ints().end());
      attr.floats.assign(a.floats().begin(), a.floats().end());
      if (a.has_t()) attr.t = to_tensor(a.t());
      n.attrs[a.name()] = std::move(attr);
    }
    if (n.op == "Constant") {
      if (!n.has("value")) fail(ErrorCode::kUnsupported, "Constant node '" + n.name + "' without a tensor value");
      out.initializers_[n.outputs.at(0)] = n.attrs.at("value").t;
      continue;
    }
    out.nodes_.push_back(std::move(n));
  }
  out.finalize();
  return out;
}

Graph Graph::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open model file '" + path + "'");
  camb_onnx::ModelProto model;
  if (!model.ParseFromIstream(&in)) fail(ErrorCode::kParse, "'" + path + "' is not a valid ONNX model");
  return from_proto(model);
}

void Graph::finalize() {
  // A terminal Softmax is peeled off so the graph yields logits.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == "Softmax" && nodes_[i].outputs.at(0) == logits_name_) {
      logits_name_ = nodes_[i].inputs.at(0);
      nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  for (const Node& n : nodes_) {
    if (n.op == "Softmax") fail(ErrorCode::kUnsupported, "Softmax is only supported as the final operator");
  }

  // Topological order (Kahn), keeping only ancestors of the logits.
  std::unordered_map<std::string, std::size_t> produced_by;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& o : nodes_[i].outputs) produced_by[o] = i;
  }
  std::vector<char> needed(nodes_.size(), 0);
  std::deque<std::string> work{logits_name_};
  while (!work.empty()) {
    auto it = produced_by.find(work.front());
    work.pop_front();
    if (it == produced_by.end() || needed[it->second]) continue;
    needed[it->second] = 1;
    for (const auto& in : nodes_[it->second].inputs) work.push_back(in);
  }
  if (!produced_by.count(logits_name_) && logits_name_ != input_name_) {
    fail(ErrorCode::kParse, "graph output '" + logits_name_ + "' is never produced");
  }

  std::unordered_set<std::string> ready{input_name_};
  for (const auto& [name, _] : initializers_) ready.insert(name);
  std::vector<Node> ordered;
  std::vector<char> done(nodes_.size(), 0);
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (done[i] || !needed[i]) continue;
      bool ok = true;
      for (const auto& in : nodes_[i].inputs) ok = ok && (in.empty() || ready.count(in));
      if (!ok) continue;
      done[i] = 1;
      progress = true;
      for (const auto& o : nodes_[i].outputs) ready.insert(o);
      ordered.push_back(nodes_[i]);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (needed[i] && !done[i]) fail(ErrorCode::kParse, "graph has a cycle or a dangling input at node '" + nodes_[i].name + "'");
  }
  nodes_ = std::move(ordered);
  producer_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& o : nodes_[i].outputs) producer_[o] = i;
  }
}

const Tensor* Graph::initializer(const std::string& name) const {
  auto it = initializers_.find(name);
  return it == initializers_.end() ? nullptr : &it->second;
}

const Node* Graph::producer(const std::string& tensor) const {
  auto it = producer_.find(tensor);
  return it == producer_.end() ? nullptr : &nodes_[it->second];
}

std::vector<const Node*> Graph::consumers(const std::string& tensor) const {
  std::vector<const Node*> out;
  for (const Node& n : nodes_) {
    for (const auto& in : n.inputs) {
      if (in == tensor) {
        out.push_back(&n);
        break;
      }
    }
  }
  return out;
}

const Tensor& Graph::value(const Values& values, const std::string& name) const {
  if (auto it = values.find(name); it != values.end()) return it->second;
  if (const Tensor* t = initializer(name)) return *t;
  fail(ErrorCode::kRuntime, "tensor '" + name + "' has not been computed");
}

namespace {

std::pair<float, float> clip_bounds(const Node& n, const std::vector<const Tensor*>& in) {
  float lo = n.get_float("min", -std::numeric_limits<float>::infinity());
  float hi = n.get_float("max", std::numeric_limits<float>::infinity());
  if (in.size() > 1 && in[1] != nullptr) lo = in[1]->data.at(0);
  if (in.size() > 2 && in[2] != nullptr) hi = in[2]->data.at(0);
  return {lo, hi};
}

ops::Binary binary_kind(const std::string& op) {
  if (op == "Add") return ops::Binary::kAdd;
  if (op == "Sub") return ops::Binary::kSub;
  if (op == "Mul") return ops::Binary::kMul;
  return ops::Binary::kDiv;
}

}  // namespace

Values Graph::run(const Tensor& input, const std::string& override_name, const Tensor* override_value) const {
  Values values;
  if (input.shape != input_shape_) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("model input must be {}, got {}", shape_string(input_shape_), shape_string(input.shape)));
  }
  values[input_name_] = input;
  if (!override_name.empty() && override_name == input_name_) values[input_name_] = *override_value;

  for (const Node& n : nodes_) {
    if (!override_name.empty() && n.outputs.at(0) == override_name) {
      values[override_name] = *override_value;
      continue;
    }
    std::vector<const Tensor*> in;
    for (const auto& name : n.inputs) in.push_back(name.empty() ? nullptr : &value(values, name));
    auto arg = [&](std::size_t i) -> const Tensor& {
      if (i >= in.size() || in[i] == nullptr) fail(ErrorCode::kParse, fmt::format("{} node '{}' missing input {}", n.op, n.name, i));
      return *in[i];
    };
    Tensor y;
    const std::string& op = n.op;
    if (op == "Conv") {
      y = ops::conv(n, arg(0), arg(1), in.size() > 2 ? in[2] : nullptr);
    } else if (op == "Relu") {
      y = ops::relu(arg(0));
    } else if (op == "Clip") {
      auto [lo, hi] = clip_bounds(n, in);
      y = ops::clip(arg(0), lo, hi);
    } else if (op == "MaxPool") {
      y = ops::max_pool(n, arg(0));
    } else if (op == "AveragePool") {
      y = ops::avg_pool(n, arg(0));
    } else if (op == "GlobalAveragePool") {
      y = ops::global_avg_pool(arg(0));
    } else if (op == "GlobalMaxPool") {
      y = ops::global_max_pool(arg(0));
    } else if (op == "Flatten") {
      y = ops::reshape(arg(0), ops::flatten_shape(n, arg(0).shape));
    } else if (op == "Reshape") {
      y = ops::reshape(arg(0), ops::reshape_target(arg(0).shape, arg(1)));
    } else if (op == "Gemm") {
      y = ops::gemm(n, arg(0), arg(1), in.size() > 2 ? in[2] : nullptr);
    } else if (op == "MatMul") {
      y = ops::gemm(n, arg(0), arg(1), nullptr);
    } else if (op == "Add" || op == "Sub" || op == "Mul" || op == "Div") {
      y = ops::binary(binary_kind(op), arg(0), arg(1));
    } else if (op == "Concat") {
      y = ops::concat(n, in);
    } else if (op == "BatchNormalization") {
      y = ops::batch_norm(n, arg(0), arg(1), arg(2), arg(3), arg(4));
    } else if (op == "Dropout" || op == "Identity") {
      y = arg(0);
    } else {
      fail(ErrorCode::kUnsupported, "operator " + op + " unsupported");
    }
    values[n.outputs.at(0)] = std::move(y);
  }
  return values;
}

Tensor Graph::gradient(const Values& values, const std::string& wrt, const Tensor& seed) const {
  // Tensors downstream of `wrt`; only those carry gradient.
  std::unordered_set<std::string> live{wrt};
  for (const Node& n : nodes_) {
    for (const auto& in : n.inputs) {
      if (live.count(in)) {
        live.insert(n.outputs.at(0));
        break;
      }
    }
  }
  if (!live.count(logits_name_)) fail(ErrorCode::kInvalidArgument, "logits do not depend on tensor '" + wrt + "'");

  std::unordered_map<std::string, Tensor> grads;
  grads[logits_name_] = seed;
  auto accumulate = [&](const std::string& name, Tensor g) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, std::move(g));
    } else {
      for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
  };

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = *it;
    const std::string& out = n.outputs.at(0);
    if (out == wrt) break;
    auto gi = grads.find(out);
    if (gi == grads.end() || !live.count(out)) continue;
    const Tensor dy = std::move(gi->second);
    grads.erase(gi);

    std::vector<const Tensor*> in;
    for (const auto& name : n.inputs) in.push_back(name.empty() ? nullptr : &value(values, name));
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::string& name = n.inputs[k];
      if (name.empty() || !live.count(name)) continue;
      const int which = static_cast<int>(k);
      const std::string& op = n.op;
      Tensor dx;
      if (op == "Conv") {
        if (which != 0) fail(ErrorCode::kUnsupported, "gradient through conv weights is unsupported");
        dx = ops::conv_backward_input(n, in[0]->shape, *in[1], dy);
      } else if (op == "Relu") {
        dx = ops::relu_backward(value(values, out), dy);
      } else if (op == "Clip") {
        if (which != 0) continue;
        auto [lo, hi] = clip_bounds(n, in);
        dx = ops::clip_backward(*in[0], lo, hi, dy);
      } else if (op == "MaxPool") {
        dx = ops::max_pool_backward(n, *in[0], dy);
      } else if (op == "AveragePool") {
        dx = ops::avg_pool_backward(n, in[0]->shape, dy);
      } else if (op == "GlobalAveragePool") {
        dx = ops::global_avg_pool_backward(in[0]->shape, dy);
      } else if (op == "GlobalMaxPool") {
        dx = ops::global_max_pool_backward(*in[0], dy);
      } else if (op == "Flatten" || op == "Reshape") {
        if (which != 0) continue;
        dx = ops::reshape(dy, in[0]->shape);
      } else if (op == "Gemm" || op == "MatMul") {
        if (which == 2) {
          fail(ErrorCode::kUnsupported, "gradient through Gemm bias is unsupported");
        }
        dx = ops::gemm_backward(n, *in[0], *in[1], dy, which);
      } else if (op == "Add" || op == "Sub" || op == "Mul" || op == "Div") {
        dx = ops::binary_backward(binary_kind(op), *in[0], *in[1], dy, which);
      } else if (op == "Concat") {
        dx = ops::concat_backward(n, in, dy, which);
      } else if (op == "BatchNormalization") {
        if (which != 0) fail(ErrorCode::kUnsupported, "gradient through batch-norm statistics is unsupported");
        dx = ops::batch_norm_backward(n, *in[1], *in[4], dy);
      } else if (op == "Dropout" || op == "Identity") {
        dx = dy;
      } else {
        fail(ErrorCode::kUnsupported, "no gradient for operator " + op);
      }
      accumulate(name, std::move(dx));
    }
  }
  auto it = grads.find(wrt);
  if (it == grads.end()) return Tensor(value(values, wrt).shape);
  return std::move(it->second);
}

}  // namespace camb::nn
