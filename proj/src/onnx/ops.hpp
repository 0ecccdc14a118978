#pragma once

#include "graph.hpp"

namespace camb::nn::ops {

// Each forward kernel takes the node (for attributes) and its resolved inputs.
// Backward kernels return the gradient for one input given the output
// gradient `dy`; `which` selects the input.

Tensor conv(const Node& n, const Tensor& x, const Tensor& w, const Tensor* bias);
Tensor conv_backward_input(const Node& n, const Shape& x_shape, const Tensor& w, const Tensor& dy);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

Tensor clip(const Tensor& x, float lo, float hi);
Tensor clip_backward(const Tensor& x, float lo, float hi, const Tensor& dy);

Tensor max_pool(const Node& n, const Tensor& x);
Tensor max_pool_backward(const Node& n, const Tensor& x, const Tensor& dy);

Tensor avg_pool(const Node& n, const Tensor& x);
Tensor avg_pool_backward(const Node& n, const Shape& x_shape, const Tensor& dy);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy);
Tensor global_max_pool(const Tensor& x);
Tensor global_max_pool_backward(const Tensor& x, const Tensor& dy);

Tensor reshape(const Tensor& x, Shape shape);
Shape flatten_shape(const Node& n, const Shape& in);
Shape reshape_target(const Shape& in, const Tensor& spec);

Tensor gemm(const Node& n, const Tensor& a, const Tensor& b, const Tensor* c);
Tensor gemm_backward(const Node& n, const Tensor& a, const Tensor& b, const Tensor& dy, int which);

enum class Binary { kAdd, kSub, kMul, kDiv };
Tensor binary(Binary op, const Tensor& a, const Tensor& b);
Tensor binary_backward(Binary op, const Tensor& a, const Tensor& b, const Tensor& dy, int which);

Tensor concat(const Node& n, const std::vector<const Tensor*>& xs);
Tensor concat_backward(const Node& n, const std::vector<const Tensor*>& xs, const Tensor& dy, int which);

Tensor batch_norm(const Node& n, const Tensor& x, const Tensor& scale, const Tensor& bias, const Tensor& mean,
                  const Tensor& var);
Tensor batch_norm_backward(const Node& n, const Tensor& scale, const Tensor& var, const Tensor& dy);

}  // namespace camb::nn::ops
