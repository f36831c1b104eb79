#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

// Per-pixel labels in [N,H,W] order: integer class ids for segmentation
// and motion, real depth values for depth regression.
template <typename T>
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> data;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::vector<T> values)
      : n(n_), h(h_), w(w_), data(std::move(values)) {}
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, T fill = T{})
      : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  T& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
  const T& at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }
  bool operator==(const LabelMap&) const = default;
};

using ClassMap = LabelMap<std::int32_t>;
using DepthMap = LabelMap<double>;

struct HuberParams {
  double delta = 250.0;
};

namespace losses {

// Mean over batch and pixels of -log softmax(logits)[true class]. The
// softmax is fused and max-shifted.
Tensor cross_entropy(const Tensor& logits, const ClassMap& labels);

// Mean over pixels of 0.5 r^2 for |r| <= delta, else delta (|r| - delta/2),
// with r = target - pred. pred is [N,1,H,W].
Tensor huber(const Tensor& pred, const DepthMap& target, HuberParams params = {});

// Pointwise Huber value, exposed for property tests.
double huber_value(double residual, double delta);

// Argmax over channels of [N,C,H,W]; ties resolve to the lowest class id.
ClassMap argmax_channels(const Tensor& scores);

double pixel_accuracy(const ClassMap& pred, const ClassMap& truth);

// Fraction of pixels with |pred - target| <= max(rel_tol |target|, abs_floor).
double regression_accuracy(const Tensor& pred, const DepthMap& target, double rel_tol = 0.1,
                           double abs_floor = 1e-3);

}  // namespace losses
}  // namespace mtl
