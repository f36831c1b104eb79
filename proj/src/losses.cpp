#include "mtl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtl/error.hpp"

namespace mtl::losses {

namespace {

template <typename T>
void require_label_shape(const Tensor& t, const LabelMap<T>& labels, std::size_t channels, const char* op) {
  if (t.rank() != 4 || t.dim(0) != labels.n || t.dim(2) != labels.h || t.dim(3) != labels.w ||
      (channels != 0 && t.dim(1) != channels)) {
    throw ShapeError(std::string(op) + ": prediction " + shape_str(t.shape()) + " vs labels [" +
                     std::to_string(labels.n) + "," + std::to_string(labels.h) + "," + std::to_string(labels.w) +
                     "]");
  }
  if (labels.data.size() != labels.n * labels.h * labels.w) {
    throw ShapeError(std::string(op) + ": label map storage does not match its extents");
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const ClassMap& labels) {
  require_label_shape(logits, labels, 0, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  for (std::int32_t id : labels.data) {
    if (id < 0 || static_cast<std::size_t>(id) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(id) + " outside [0," + std::to_string(c) + ")");
    }
  }
  const auto v = logits.values();
  std::vector<double> prob(v.size());
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = v[base + p];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, v[base + k * plane + p]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(v[base + k * plane + p] - mx);
        prob[base + k * plane + p] = e;
        z += e;
      }
      const std::size_t truth = static_cast<std::size_t>(labels.data[b * plane + p]);
      total += std::log(z) - (v[base + truth * plane + p] - mx);
      for (std::size_t k = 0; k < c; ++k) prob[base + k * plane + p] /= z;
    }
  }
  const double count = static_cast<double>(n * plane);
  std::vector<std::int32_t> ids = labels.data;
  return detail::make_result(
      "cross_entropy", {}, {total / count}, {logits},
      [n, c, plane, count, prob = std::move(prob), ids = std::move(ids)](detail::Node& self) {
        auto& gp = self.parents[0]->grad_buffer();
        const double g = self.grad[0] / count;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = b * c * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t truth = static_cast<std::size_t>(ids[b * plane + p]);
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t i = base + k * plane + p;
              gp[i] += g * (prob[i] - (k == truth ? 1.0 : 0.0));
            }
          }
        }
      });
}

double huber_value(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

Tensor huber(const Tensor& pred, const DepthMap& target, HuberParams params) {
  if (!(params.delta > 0.0)) throw ConfigError("huber: delta must be positive");
  require_label_shape(pred, target, 1, "huber");
  const auto v = pred.values();
  const double delta = params.delta;
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += huber_value(target.data[i] - v[i], delta);
  const double count = static_cast<double>(v.size());
  std::vector<double> y = target.data;
  return detail::make_result("huber", {}, {total / count}, {pred},
                             [delta, count, y = std::move(y)](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               auto& gp = p.grad_buffer();
                               const double g = self.grad[0] / count;
                               for (std::size_t i = 0; i < gp.size(); ++i) {
                                 const double r = y[i] - p.value[i];
                                 // d/dpred of the pointwise loss
                                 const double d = std::abs(r) <= delta ? -r : (r > 0.0 ? -delta : delta);
                                 gp[i] += g * d;
                               }
                             });
}

ClassMap argmax_channels(const Tensor& scores) {
  if (scores.rank() != 4) throw ShapeError("argmax_channels: expected [N,C,H,W], got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), c = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  const std::size_t plane = h * w;
  const auto v = scores.values();
  ClassMap out(n, h, w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (v[(b * c + k) * plane + p] > v[(b * c + best) * plane + p]) best = k;
      }
      out.data[b * plane + p] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

double pixel_accuracy(const ClassMap& pred, const ClassMap& truth) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w || pred.data.size() != truth.data.size()) {
    throw ShapeError("pixel_accuracy: label maps differ in shape");
  }
  if (truth.data.empty()) throw ShapeError("pixel_accuracy: empty label map");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.data.size(); ++i) hits += pred.data[i] == truth.data[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.data.size());
}

double regression_accuracy(const Tensor& pred, const DepthMap& target, double rel_tol, double abs_floor) {
  require_label_shape(pred, target, 1, "regression_accuracy");
  if (target.data.empty()) throw ShapeError("regression_accuracy: empty target");
  const auto v = pred.values();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double tol = std::max(rel_tol * std::abs(target.data[i]), abs_floor);
    hits += std::abs(v[i] - target.data[i]) <= tol ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(v.size());
}

}  // namespace mtl::losses
