#include "mtl/optim.hpp"

#include <cmath>

#include "mtl/error.hpp"

namespace mtl::optim {

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) +
                     " grads");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, const AdamHyper& hyper) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) +
                     " grads");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match parameter size");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

void Sgd::step(std::span<Tensor> params) {
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    sgd_step(p.mutable_values(), p.grad(), lr_);
    p.zero_grad();
  }
}

void Adam::step(std::span<Tensor> params) {
  if (moments_.empty()) moments_.resize(params.size());
  if (moments_.size() != params.size()) throw ShapeError("Adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.has_grad()) {
      adam_step(p.mutable_values(), p.grad(), moments_[i], hyper_);
      p.zero_grad();
    } else {
      const std::vector<double> zeros(p.numel(), 0.0);
      adam_step(p.mutable_values(), zeros, moments_[i], hyper_);
    }
  }
}

}  // namespace mtl::optim
