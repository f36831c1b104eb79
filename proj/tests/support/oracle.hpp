#pragma once

// Independent reference values for the tests: central finite differences
// over leaf tensors, and seeded random fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(eng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Central differences of f with respect to every value of every input.
// f must rebuild its graph from the inputs' current values on each call.
inline std::vector<std::vector<double>> numeric_grads(const std::function<double()>& f, std::vector<Tensor> inputs,
                                                      double h = 1e-6) {
  std::vector<std::vector<double>> out;
  NoGradGuard guard;
  for (auto& t : inputs) {
    auto v = t.mutable_values();
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f();
      v[i] = keep - h;
      const double down = f();
      v[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Runs backward once through f's graph, then compares every leaf gradient
// with central differences.
inline GradCheck check_grads(const std::function<Tensor()>& build, std::vector<Tensor> inputs, double h = 1e-6,
                             double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = build();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  const auto numeric = numeric_grads([&] { return build().item(); }, inputs, h);
  GradCheck r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      r.max_rel = std::max(r.max_rel, rel_error(analytic[k][i], numeric[k][i], floor));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace mtl::testing
