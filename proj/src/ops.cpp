#include "mtl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtl/error.hpp"
#include "mtl/kernels.hpp"

namespace mtl::ops {

namespace {

using detail::Node;

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;

  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
  // A 1x1 stride-1 convolution reads the input plane as its column matrix.
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

// Unfolds one image [Cin,H,W] into the [Cin*k*k, Ho*Wo] patch matrix.
void im2col(const ConvGeometry& g, const double* in, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t y = 0; y < g.ho; ++y) {
          double* out = row + y * g.wo;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            // valid x satisfy 0 <= x + kx - pad < w
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, static_cast<std::ptrdiff_t>(g.wo));
            const std::ptrdiff_t hi =
                std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w) - off, lo, static_cast<std::ptrdiff_t>(g.wo));
            std::fill(out, out + lo, 0.0);
            std::copy(src + lo + off, src + hi + off, out + lo);
            std::fill(out + hi, out + g.wo, 0.0);
            continue;
          }
          for (std::size_t x = 0; x < g.wo; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - pad;
            out[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
void col2im_accumulate(const ConvGeometry& g, const double* col, double* in) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t y = 0; y < g.ho; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + y * g.wo;
          for (std::size_t x = 0; x < g.wo; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t pad = padding == Padding::same ? (k - 1) / 2 : 0;
  if (in + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + std::to_string(in));
  }
  return (in + 2 * pad - k) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions options) {
  require_rank4(input, "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                     std::to_string(input.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(kernel.dim(0)) + "], got " + shape_str(bias.shape()));
  }
  if (options.padding == Padding::same && kernel.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: same padding needs an odd kernel, got " + std::to_string(kernel.dim(2)));
  }
  input.check_finite("conv2d input");
  kernel.check_finite("conv2d kernel");
  bias.check_finite("conv2d bias");

  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = options.stride;
  g.pad = options.padding == Padding::same ? (g.k - 1) / 2 : 0;
  g.ho = conv_output_extent(g.h, g.k, g.stride, options.padding);
  g.wo = conv_output_extent(g.w, g.k, g.stride, options.padding);

  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.cols();
  const auto& kt = kernels::active();
  const auto in = input.values();
  const auto wt = kernel.values();
  const auto b = bias.values();

  std::vector<double> out(g.n * g.cout * out_plane);
  std::vector<double> col(g.direct() ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < g.n; ++n) {
    double* op = out.data() + n * g.cout * out_plane;
    for (std::size_t co = 0; co < g.cout; ++co) std::fill(op + co * out_plane, op + (co + 1) * out_plane, b[co]);
    const double* patches = in.data() + n * g.cin * in_plane;
    if (!g.direct()) {
      im2col(g, patches, col.data());
      patches = col.data();
    }
    kt.gemm(g.cout, out_plane, g.rows(), wt.data(), patches, op);
  }

  Shape out_shape{g.n, g.cout, g.ho, g.wo};
  return detail::make_result("conv2d", std::move(out_shape), std::move(out), {input, kernel, bias}, [g](Node& self) {
    const auto& kt = kernels::active();
    Node& x = *self.parents[0];
    Node& wk = *self.parents[1];
    Node& bs = *self.parents[2];
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.cols();
    const std::size_t rows = g.rows();
    double* gin = x.requires_grad ? x.grad_buffer().data() : nullptr;
    double* gw = wk.requires_grad ? wk.grad_buffer().data() : nullptr;
    double* gb = bs.requires_grad ? bs.grad_buffer().data() : nullptr;

    // W^T, so the input gradient is one more row-major gemm.
    std::vector<double> wt_t;
    if (gin != nullptr) {
      wt_t.resize(rows * g.cout);
      for (std::size_t co = 0; co < g.cout; ++co) {
        for (std::size_t r = 0; r < rows; ++r) wt_t[r * g.cout + co] = wk.value[co * rows + r];
      }
    }
    std::vector<double> col(g.direct() || gw == nullptr ? 0 : rows * out_plane);
    std::vector<double> gcol(g.direct() || gin == nullptr ? 0 : rows * out_plane);
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* go = self.grad.data() + n * g.cout * out_plane;
      if (gb != nullptr) {
        for (std::size_t co = 0; co < g.cout; ++co) gb[co] += kt.sum(go + co * out_plane, out_plane);
      }
      if (gw != nullptr) {
        const double* patches = x.value.data() + n * g.cin * in_plane;
        if (!g.direct()) {
          im2col(g, patches, col.data());
          patches = col.data();
        }
        kt.gemm_nt(g.cout, rows, out_plane, go, patches, gw);
      }
      if (gin != nullptr) {
        double* gi = gin + n * g.cin * in_plane;
        if (g.direct()) {
          kt.gemm(rows, out_plane, g.cout, wt_t.data(), go, gi);
        } else {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          kt.gemm(rows, out_plane, g.cout, wt_t.data(), go, gcol.data());
          col2im_accumulate(g, gcol.data(), gi);
        }
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return detail::make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (p.value[i] > 0.0) gp[i] += self.grad[i];
    }
  });
}

Tensor maxpool2d(const Tensor& x) {
  require_rank4(x, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  const auto v = x.values();
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t ib = plane * h * w;
    const std::size_t ob = plane * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        std::size_t best = ib + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ib + (2 * y + dy) * w + 2 * xx + dx;
            if (v[idx] > v[best]) best = idx;  // strict: first maximum wins
          }
        }
        out[ob + y * wo + xx] = v[best];
        argmax[ob + y * wo + xx] = best;
      }
    }
  }
  return detail::make_result("maxpool2d", {n, c, ho, wo}, std::move(out), {x},
                             [argmax = std::move(argmax)](Node& self) {
                               auto& gp = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < argmax.size(); ++i) gp[argmax[i]] += self.grad[i];
                             });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank4(x, "upsample_nearest");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto v = x.values();
  std::vector<double> out(n * c * ho * wo);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* ip = v.data() + plane * h * w;
    double* op = out.data() + plane * ho * wo;
    for (std::size_t y = 0; y < h; ++y) {
      double* first = op + y * factor * wo;
      for (std::size_t xx = 0; xx < w; ++xx) std::fill_n(first + xx * factor, factor, ip[y * w + xx]);
      for (std::size_t r = 1; r < factor; ++r) std::copy_n(first, wo, first + r * wo);
    }
  }
  return detail::make_result("upsample_nearest", {n, c, ho, wo}, std::move(out), {x},
                             [n, c, h, w, factor](Node& self) {
                               auto& gp = self.parents[0]->grad_buffer();
                               const std::size_t wo = w * factor;
                               for (std::size_t plane = 0; plane < n * c; ++plane) {
                                 const double* go = self.grad.data() + plane * h * factor * wo;
                                 double* gi = gp.data() + plane * h * w;
                                 for (std::size_t y = 0; y < h; ++y) {
                                   double* row = gi + y * w;
                                   for (std::size_t r = 0; r < factor; ++r) {
                                     const double* src = go + (y * factor + r) * wo;
                                     for (std::size_t xx = 0; xx < w; ++xx) {
                                       double acc = 0.0;
                                       for (std::size_t f = 0; f < factor; ++f) acc += src[xx * factor + f];
                                       row[xx] += acc;
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: need at least one tensor");
  for (const auto& t : xs) require_rank4(t, "concat_channels");
  const std::size_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::size_t c_total = 0;
  std::vector<std::size_t> channels;
  for (const auto& t : xs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw ShapeError("concat_channels: non-channel dims differ: " + shape_str(xs[0].shape()) + " vs " +
                       shape_str(t.shape()));
    }
    channels.push_back(t.dim(1));
    c_total += t.dim(1);
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * c_total * plane);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t c_off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto v = xs[i].values();
      const std::size_t len = channels[i] * plane;
      std::copy_n(v.data() + b * len, len, out.data() + (b * c_total + c_off) * plane);
      c_off += channels[i];
    }
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return detail::make_result("concat_channels", {n, c_total, h, w}, std::move(out), std::move(parents),
                             [n, c_total, plane, channels](Node& self) {
                               std::size_t c_off = 0;
                               for (std::size_t i = 0; i < channels.size(); ++i) {
                                 Node& p = *self.parents[i];
                                 const std::size_t len = channels[i] * plane;
                                 if (p.requires_grad) {
                                   auto& gp = p.grad_buffer();
                                   for (std::size_t b = 0; b < n; ++b) {
                                     kernels::active().accumulate(
                                         self.grad.data() + (b * c_total + c_off) * plane, gp.data() + b * len, len);
                                   }
                                 }
                                 c_off += channels[i];
                               }
                             });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank4(x, "slice_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (begin + count > c || count == 0) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + std::to_string(c) + " channels");
  }
  const std::size_t plane = h * w;
  const auto v = x.values();
  std::vector<double> out(n * count * plane);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(v.data() + (b * c + begin) * plane, count * plane, out.data() + b * count * plane);
  }
  return detail::make_result("slice_channels", {n, count, h, w}, std::move(out), {x},
                             [n, c, begin, count, plane](Node& self) {
                               auto& gp = self.parents[0]->grad_buffer();
                               for (std::size_t b = 0; b < n; ++b) {
                                 kernels::active().accumulate(self.grad.data() + b * count * plane,
                                                              gp.data() + (b * c + begin) * plane, count * plane);
                               }
                             });
}

Tensor add(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("add: need at least one tensor");
  for (const auto& t : xs) require_same_shape(xs[0], t, "add");
  std::vector<double> out(xs[0].values().begin(), xs[0].values().end());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const auto v = xs[i].values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[j];
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return detail::make_result("add", xs[0].shape(), std::move(out), std::move(parents), [](Node& self) {
    for (const auto& p : self.parents) {
      if (!p->requires_grad) continue;
      kernels::active().accumulate(self.grad.data(), p->grad_buffer().data(), self.grad.size());
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Tensor pair[] = {a, b};
  return add(std::span<const Tensor>(pair));
}

Tensor softmax_channels(const Tensor& x) {
  require_rank4(x, "softmax_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = v[base + p];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, v[base + k * plane + p]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(v[base + k * plane + p] - mx);
        out[base + k * plane + p] = e;
        z += e;
      }
      for (std::size_t k = 0; k < c; ++k) out[base + k * plane + p] /= z;
    }
  }
  return detail::make_result("softmax_channels", x.shape(), out, {x}, [n, c, plane, out](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = b * c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += self.grad[base + k * plane + p] * out[base + k * plane + p];
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = base + k * plane + p;
          gp[i] += out[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double s = kernels::active().sum(v.data(), v.size());
  return detail::make_result("sum", {}, {s}, {x}, [](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& e : gp) e += g;
  });
}

Tensor mean(const Tensor& x) {
  const auto v = x.values();
  const double count = static_cast<double>(v.size());
  const double s = kernels::active().sum(v.data(), v.size()) / count;
  return detail::make_result("mean", {}, {s}, {x}, [count](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    const double g = self.grad[0] / count;
    for (double& e : gp) e += g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * v[i];
  return detail::make_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    kernels::active().axpy(factor, self.grad.data(), gp.data(), gp.size());
  });
}

Tensor add_scalar(const Tensor& x, double offset) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] + offset;
  return detail::make_result("add_scalar", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    kernels::active().accumulate(self.grad.data(), gp.data(), gp.size());
  });
}

Tensor log(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(v[i] > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v[i]));
    out[i] = std::log(v[i]);
  }
  return detail::make_result("log", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] / p.value[i];
  });
}

Tensor exp(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(v[i]);
  return detail::make_result("exp", x.shape(), out, {x}, [out](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * out[i];
  });
}

Tensor softplus(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(v[i], 0.0) + std::log1p(std::exp(-std::abs(v[i])));
  return detail::make_result("softplus", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double z = p.value[i];
      const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      gp[i] += self.grad[i] * sig;
    }
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > floor ? v[i] : floor;
  return detail::make_result("clamp_min", x.shape(), std::move(out), {x}, [floor](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (p.value[i] > floor) gp[i] += self.grad[i];
    }
  });
}

}  // namespace mtl::ops
