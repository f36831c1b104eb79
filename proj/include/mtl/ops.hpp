#pragma once

#include <cstddef>
#include <span>

#include "mtl/tensor.hpp"

namespace mtl::ops {

enum class Padding { same, valid };

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

// input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout] -> [N,Cout,H',W'].
// Same padding requires an odd k and pads (k-1)/2 on every side.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions options = {});

// Spatial output extent for one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding);

Tensor relu(const Tensor& x);

// 2x2 window, stride 2. The gradient goes to the first maximum in row-major
// window order.
Tensor maxpool2d(const Tensor& x);

// Replicates every value into a factor x factor block.
Tensor upsample_nearest(const Tensor& x, std::size_t factor = 2);

// Joins [N,Ci,H,W] tensors along the channel axis, left to right.
Tensor concat_channels(std::span<const Tensor> xs);

// Channels [begin, begin + count) of an [N,C,H,W] tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

// Elementwise sum, folded left to right.
Tensor add(std::span<const Tensor> xs);
Tensor add(const Tensor& a, const Tensor& b);

// Per-pixel softmax over the channel axis of [N,C,H,W].
Tensor softmax_channels(const Tensor& x);

// Reductions to a scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Elementwise.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor softplus(const Tensor& x);
// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

}  // namespace mtl::ops
