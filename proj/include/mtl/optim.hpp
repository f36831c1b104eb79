#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::optim {

// p <- p - lr g
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam update; moments are sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, const AdamHyper& hyper);

// Steps a fixed list of leaf tensors using their accumulated gradients,
// then clears those gradients. A tensor without a gradient counts as g = 0.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Tensor> params) = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::span<Tensor> params) override;

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(AdamHyper hyper) : hyper_(hyper) {}
  void step(std::span<Tensor> params) override;

 private:
  AdamHyper hyper_;
  std::vector<AdamMoments> moments_;
};

}  // namespace mtl::optim
