#include "crossdepth/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace crossdepth {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
}

Shape strides_of(const Shape& shape) {
  Shape st(shape.size());
  std::int64_t s = 1;
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = s;
    s *= shape[static_cast<std::size_t>(i)];
  }
  return st;
}

// out[i...] = in[perm-mapped i...]; used by both forward and backward.
Tensor permute_tensor(const Tensor& x, const std::vector<std::int64_t>& dims) {
  const auto rank = x.rank();
  if (static_cast<std::int64_t>(dims.size()) != rank)
    throw std::invalid_argument("permute: dims size mismatch");
  Shape out_shape(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i)
    out_shape[static_cast<std::size_t>(i)] = x.dim(dims[static_cast<std::size_t>(i)]);
  Tensor out(out_shape);
  if (x.numel() == 0) return out;

  const Shape in_strides = strides_of(x.shape());
  Shape step(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i)
    step[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];

  std::vector<std::int64_t> counter(static_cast<std::size_t>(rank), 0);
  const double* src = x.data();
  double* dst = out.data();
  std::int64_t in_off = 0;
  const std::int64_t n = x.numel();
  for (std::int64_t lin = 0; lin < n; ++lin) {
    dst[lin] = src[in_off];
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      auto di = static_cast<std::size_t>(d);
      if (++counter[di] < out_shape[di]) {
        in_off += step[di];
        break;
      }
      counter[di] = 0;
      in_off -= step[di] * (out_shape[di] - 1);
    }
  }
  return out;
}

std::int64_t positive_mod(std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; }

void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t OH,
            std::int64_t OW, double* cols) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx, ++row) {
        double* out = cols + row * OH * OW;
        for (std::int64_t oy = 0; oy < OH; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          double* orow = out + oy * OW;
          if (iy < 0 || iy >= H) {
            std::fill(orow, orow + OW, 0.0);
            continue;
          }
          const double* srow = x + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            orow[ox] = (ix >= 0 && ix < W) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accum(const double* cols, std::int64_t C, std::int64_t H, std::int64_t W,
                  std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                  std::int64_t OH, std::int64_t OW, double* dx) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx, ++row) {
        const double* in = cols + row * OH * OW;
        for (std::int64_t oy = 0; oy < OH; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          double* drow = dx + (c * H + iy) * W;
          const double* irow = in + oy * OW;
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) drow[ix] += irow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb](Node& node) {
    const double* g = node.grad.data();
    const std::int64_t m = node.grad.numel();
    if (na->requires_grad) {
      double* d = na->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i];
    }
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb](Node& node) {
    const double* g = node.grad.data();
    const std::int64_t m = node.grad.numel();
    if (na->requires_grad) {
      double* d = na->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i];
    }
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb](Node& node) {
    const double* g = node.grad.data();
    const std::int64_t m = node.grad.numel();
    if (na->requires_grad) {
      double* d = na->grad_buffer().data();
      const double* vb = nb->value.data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i] * vb[i];
    }
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      const double* va = na->value.data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i] * va[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb](Node& node) {
    const double* g = node.grad.data();
    const std::int64_t m = node.grad.numel();
    const double* va = na->value.data();
    const double* vb = nb->value.data();
    if (na->requires_grad) {
      double* d = na->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] += g[i] / vb[i];
    }
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      for (std::int64_t i = 0; i < m; ++i) d[i] -= g[i] * va[i] / (vb[i] * vb[i]);
    }
  });
}

Var affine(const Var& x, double k, double m) {
  Tensor out(x.value().shape());
  const std::int64_t n = out.numel();
  const double* px = x.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = k * px[i] + m;
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, k](Node& node) {
    if (!nx->requires_grad) return;
    const double* g = node.grad.data();
    double* d = nx->grad_buffer().data();
    const std::int64_t n2 = node.grad.numel();
    for (std::int64_t i = 0; i < n2; ++i) d[i] += k * g[i];
  });
}

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(const Var& x, Fwd fwd, Bwd bwd_factor) {
  Tensor out(x.value().shape());
  const std::int64_t n = out.numel();
  const double* px = x.value().data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  auto nx = x.node();
  Tensor saved = out;  // shallow share; y often reused in backward
  return make_op_node(out, {x}, [nx, saved, bwd_factor](Node& node) {
    if (!nx->requires_grad) return;
    const double* g = node.grad.data();
    const double* vx = nx->value.data();
    const double* vy = saved.data();
    double* d = nx->grad_buffer().data();
    const std::int64_t n2 = node.grad.numel();
    for (std::int64_t i = 0; i < n2; ++i) d[i] += g[i] * bwd_factor(vx[i], vy[i]);
  });
}

}  // namespace

Var vabs(const Var& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var vexp(const Var& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var vlog(const Var& x) {
  return unary_op(x, [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Var vsqrt(const Var& x) {
  return unary_op(x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / std::max(y, 1e-12); });
}

Var sigmoid(const Var& x) {
  return unary_op(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx](Node& node) {
    if (!nx->requires_grad) return;
    const double g = node.grad[0];
    double* d = nx->grad_buffer().data();
    const std::int64_t n = nx->value.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += g;
  });
}

Var mean_all(const Var& x) {
  const std::int64_t n = x.value().numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  Tensor out = Tensor::scalar(x.value().sum() / static_cast<double>(n));
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, n](Node& node) {
    if (!nx->requires_grad) return;
    const double g = node.grad[0] / static_cast<double>(n);
    double* d = nx->grad_buffer().data();
    for (std::int64_t i = 0; i < n; ++i) d[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Shape ops

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx](Node& node) {
    if (!nx->requires_grad) return;
    const double* g = node.grad.data();
    double* d = nx->grad_buffer().data();
    const std::int64_t n = node.grad.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
  });
}

Var permute(const Var& x, const std::vector<std::int64_t>& dims) {
  Tensor out = permute_tensor(x.value(), dims);
  std::vector<std::int64_t> inverse(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i)
    inverse[static_cast<std::size_t>(dims[i])] = static_cast<std::int64_t>(i);
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, inverse](Node& node) {
    if (!nx->requires_grad) return;
    Tensor gx = permute_tensor(node.grad, inverse);
    double* d = nx->grad_buffer().data();
    const double* g = gx.data();
    const std::int64_t n = gx.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
  });
}

Var narrow0(const Var& x, std::int64_t i) {
  const Tensor& v = x.value();
  if (v.rank() < 1 || i < 0 || i >= v.dim(0))
    throw std::invalid_argument("narrow0: index out of range");
  Shape out_shape(v.shape().begin() + 1, v.shape().end());
  if (out_shape.empty()) out_shape = {1};
  const std::int64_t stride = shape_numel(out_shape);
  Tensor out(out_shape);
  std::memcpy(out.data(), v.data() + i * stride, static_cast<std::size_t>(stride) * sizeof(double));
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, i, stride](Node& node) {
    if (!nx->requires_grad) return;
    double* d = nx->grad_buffer().data() + i * stride;
    const double* g = node.grad.data();
    for (std::int64_t k = 0; k < stride; ++k) d[k] += g[k];
  });
}

Var slice_channels(const Var& x, std::int64_t c0, std::int64_t c1) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("slice_channels: expected NCHW");
  const std::int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
  const std::int64_t hw = H * W;
  Tensor out({N, c1 - c0, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    std::memcpy(out.data() + n * (c1 - c0) * hw, v.data() + (n * C + c0) * hw,
                static_cast<std::size_t>((c1 - c0) * hw) * sizeof(double));
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, c0, c1, C, hw](Node& node) {
    if (!nx->requires_grad) return;
    const std::int64_t N2 = node.grad.dim(0);
    double* d = nx->grad_buffer().data();
    const double* g = node.grad.data();
    for (std::int64_t n = 0; n < N2; ++n) {
      double* drow = d + (n * C + c0) * hw;
      const double* grow = g + n * (c1 - c0) * hw;
      for (std::int64_t k = 0; k < (c1 - c0) * hw; ++k) drow[k] += grow[k];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
      va.dim(3) != vb.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + va.shape_str() + " vs " +
                                vb.shape_str());
  const std::int64_t N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
  const std::int64_t hw = H * W;
  Tensor out({N, Ca + Cb, H, W});
  for (std::int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * (Ca + Cb) * hw, va.data() + n * Ca * hw,
                static_cast<std::size_t>(Ca * hw) * sizeof(double));
    std::memcpy(out.data() + (n * (Ca + Cb) + Ca) * hw, vb.data() + n * Cb * hw,
                static_cast<std::size_t>(Cb * hw) * sizeof(double));
  }
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb, Ca, Cb, hw](Node& node) {
    const std::int64_t N2 = node.grad.dim(0);
    const double* g = node.grad.data();
    if (na->requires_grad) {
      double* d = na->grad_buffer().data();
      for (std::int64_t n = 0; n < N2; ++n) {
        const double* grow = g + n * (Ca + Cb) * hw;
        double* drow = d + n * Ca * hw;
        for (std::int64_t k = 0; k < Ca * hw; ++k) drow[k] += grow[k];
      }
    }
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      for (std::int64_t n = 0; n < N2; ++n) {
        const double* grow = g + (n * (Ca + Cb) + Ca) * hw;
        double* drow = d + n * Cb * hw;
        for (std::int64_t k = 0; k < Cb * hw; ++k) drow[k] += grow[k];
      }
    }
  });
}

Var pad_hw(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
           std::int64_t right) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("pad_hw: expected NCHW");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) {
    // Still emit a node so graph structure stays uniform.
    return affine(x, 1.0, 0.0);
  }
  const std::int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  const std::int64_t OH = H + top + bottom, OW = W + left + right;
  Tensor out({N, C, OH, OW});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = v.data() + nc * H * W;
    double* dst = out.data() + nc * OH * OW;
    for (std::int64_t y = 0; y < H; ++y)
      std::memcpy(dst + (y + top) * OW + left, src + y * W,
                  static_cast<std::size_t>(W) * sizeof(double));
  }
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, top, left, H, W, OH, OW](Node& node) {
    if (!nx->requires_grad) return;
    const std::int64_t NC = node.grad.dim(0) * node.grad.dim(1);
    double* d = nx->grad_buffer().data();
    const double* g = node.grad.data();
    for (std::int64_t nc = 0; nc < NC; ++nc) {
      const double* grow = g + nc * OH * OW;
      double* drow = d + nc * H * W;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx)
          drow[y * W + xx] += grow[(y + top) * OW + left + xx];
    }
  });
}

Var crop_hw(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
            std::int64_t right) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("crop_hw: expected NCHW");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return affine(x, 1.0, 0.0);
  const std::int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  const std::int64_t OH = H - top - bottom, OW = W - left - right;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("crop_hw: crop exceeds extent");
  Tensor out({N, C, OH, OW});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = v.data() + nc * H * W;
    double* dst = out.data() + nc * OH * OW;
    for (std::int64_t y = 0; y < OH; ++y)
      std::memcpy(dst + y * OW, src + (y + top) * W + left,
                  static_cast<std::size_t>(OW) * sizeof(double));
  }
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, top, left, H, W, OH, OW](Node& node) {
    if (!nx->requires_grad) return;
    const std::int64_t NC = node.grad.dim(0) * node.grad.dim(1);
    double* d = nx->grad_buffer().data();
    const double* g = node.grad.data();
    for (std::int64_t nc = 0; nc < NC; ++nc) {
      const double* grow = g + nc * OH * OW;
      double* drow = d + nc * H * W;
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t xx = 0; xx < OW; ++xx)
          drow[(y + top) * W + left + xx] += grow[y * OW + xx];
    }
  });
}

Var roll_hw(const Var& x, std::int64_t sy, std::int64_t sx) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("roll_hw: expected NCHW");
  const std::int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor out(v.shape());
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = v.data() + nc * H * W;
    double* dst = out.data() + nc * H * W;
    for (std::int64_t y = 0; y < H; ++y) {
      const std::int64_t iy = positive_mod(y - sy, H);
      for (std::int64_t xx = 0; xx < W; ++xx)
        dst[y * W + xx] = src[iy * W + positive_mod(xx - sx, W)];
    }
  }
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, sy, sx, H, W](Node& node) {
    if (!nx->requires_grad) return;
    const std::int64_t NC = node.grad.dim(0) * node.grad.dim(1);
    double* d = nx->grad_buffer().data();
    const double* g = node.grad.data();
    for (std::int64_t nc = 0; nc < NC; ++nc) {
      const double* grow = g + nc * H * W;
      double* drow = d + nc * H * W;
      for (std::int64_t y = 0; y < H; ++y) {
        const std::int64_t iy = positive_mod(y - sy, H);
        for (std::int64_t xx = 0; xx < W; ++xx)
          drow[iy * W + positive_mod(xx - sx, W)] += grow[y * W + xx];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
    throw std::invalid_argument("matmul: bad shapes " + va.shape_str() + " x " + vb.shape_str());
  const std::int64_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
  Tensor out({M, N});
  MapRM(out.data(), M, N).noalias() = CMapRM(va.data(), M, K) * CMapRM(vb.data(), K, N);
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b}, [na, nb, M, K, N](Node& node) {
    CMapRM g(node.grad.data(), M, N);
    if (na->requires_grad)
      MapRM(na->grad_buffer().data(), M, K).noalias() += g * CMapRM(nb->value.data(), K, N).transpose();
    if (nb->requires_grad)
      MapRM(nb->grad_buffer().data(), K, N).noalias() += CMapRM(na->value.data(), M, K).transpose() * g;
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& vx = x.value();
  const Tensor& vw = weight.value();
  const Tensor& vb = bias.value();
  if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(1) || vb.rank() != 1 ||
      vb.dim(0) != vw.dim(0))
    throw std::invalid_argument("linear: bad shapes x" + vx.shape_str() + " w" + vw.shape_str());
  const std::int64_t M = vx.dim(0), K = vx.dim(1), N = vw.dim(0);
  Tensor out({M, N});
  MapRM y(out.data(), M, N);
  y.noalias() = CMapRM(vx.data(), M, K) * CMapRM(vw.data(), N, K).transpose();
  for (std::int64_t i = 0; i < M; ++i) {
    double* row = out.data() + i * N;
    const double* bptr = vb.data();
    for (std::int64_t j = 0; j < N; ++j) row[j] += bptr[j];
  }
  auto nx = x.node();
  auto nw = weight.node();
  auto nb = bias.node();
  return make_op_node(std::move(out), {x, weight, bias}, [nx, nw, nb, M, K, N](Node& node) {
    CMapRM g(node.grad.data(), M, N);
    if (nx->requires_grad)
      MapRM(nx->grad_buffer().data(), M, K).noalias() += g * CMapRM(nw->value.data(), N, K);
    if (nw->requires_grad)
      MapRM(nw->grad_buffer().data(), N, K).noalias() +=
          g.transpose() * CMapRM(nx->value.data(), M, K);
    if (nb->requires_grad) {
      double* d = nb->grad_buffer().data();
      const double* gp = node.grad.data();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) d[j] += gp[i * N + j];
    }
  });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 3 || vb.rank() != 3 || va.dim(0) != vb.dim(0))
    throw std::invalid_argument("bmm: expected matching rank-3 batches");
  const std::int64_t B = va.dim(0);
  const std::int64_t M = trans_a ? va.dim(2) : va.dim(1);
  const std::int64_t K = trans_a ? va.dim(1) : va.dim(2);
  const std::int64_t Kb = trans_b ? vb.dim(2) : vb.dim(1);
  const std::int64_t N = trans_b ? vb.dim(1) : vb.dim(2);
  if (K != Kb) throw std::invalid_argument("bmm: inner dims mismatch");
  Tensor out({B, M, N});
  const std::int64_t sa = va.dim(1) * va.dim(2), sb = vb.dim(1) * vb.dim(2), so = M * N;
  for (std::int64_t i = 0; i < B; ++i) {
    CMapRM ma(va.data() + i * sa, va.dim(1), va.dim(2));
    CMapRM mb(vb.data() + i * sb, vb.dim(1), vb.dim(2));
    MapRM mo(out.data() + i * so, M, N);
    if (!trans_a && !trans_b) mo.noalias() = ma * mb;
    else if (trans_a && !trans_b) mo.noalias() = ma.transpose() * mb;
    else if (!trans_a && trans_b) mo.noalias() = ma * mb.transpose();
    else mo.noalias() = ma.transpose() * mb.transpose();
  }
  auto na = a.node();
  auto nb = b.node();
  return make_op_node(std::move(out), {a, b},
                      [na, nb, B, M, N, sa, sb, so, trans_a, trans_b](Node& node) {
    for (std::int64_t i = 0; i < B; ++i) {
      CMapRM g(node.grad.data() + i * so, M, N);
      CMapRM ma(na->value.data() + i * sa, na->value.dim(1), na->value.dim(2));
      CMapRM mb(nb->value.data() + i * sb, nb->value.dim(1), nb->value.dim(2));
      if (na->requires_grad) {
        MapRM da(na->grad_buffer().data() + i * sa, na->value.dim(1), na->value.dim(2));
        if (!trans_a) {
          if (!trans_b) da.noalias() += g * mb.transpose();
          else da.noalias() += g * mb;
        } else {
          if (!trans_b) da.noalias() += mb * g.transpose();
          else da.noalias() += mb.transpose() * g.transpose();
        }
      }
      if (nb->requires_grad) {
        MapRM db(nb->grad_buffer().data() + i * sb, nb->value.dim(1), nb->value.dim(2));
        if (!trans_b) {
          if (!trans_a) db.noalias() += ma.transpose() * g;
          else db.noalias() += ma * g;
        } else {
          if (!trans_a) db.noalias() += g.transpose() * ma;
          else db.noalias() += g.transpose() * ma.transpose();
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization & softmax

Var softmax_lastdim(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() < 1) throw std::invalid_argument("softmax: rank 0");
  const std::int64_t C = v.dim(v.rank() - 1);
  const std::int64_t rows = v.numel() / C;
  Tensor out(v.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = v.data() + r * C;
    double* dst = out.data() + r * C;
    double mx = src[0];
    for (std::int64_t j = 1; j < C; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < C; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < C; ++j) dst[j] *= inv;
  }
  auto nx = x.node();
  Tensor y = out;  // shallow
  return make_op_node(out, {x}, [nx, y, C, rows](Node& node) {
    if (!nx->requires_grad) return;
    double* d = nx->grad_buffer().data();
    const double* g = node.grad.data();
    const double* py = y.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * C;
      const double* yr = py + r * C;
      double dot = 0.0;
      for (std::int64_t j = 0; j < C; ++j) dot += gr[j] * yr[j];
      double* dr = d + r * C;
      for (std::int64_t j = 0; j < C; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layernorm_lastdim(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& v = x.value();
  const std::int64_t C = v.dim(v.rank() - 1);
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw std::invalid_argument("layernorm: affine params must have size of last dim");
  const std::int64_t rows = v.numel() / C;
  Tensor out(v.shape());
  std::vector<double> mean(static_cast<std::size_t>(rows));
  std::vector<double> invstd(static_cast<std::size_t>(rows));
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = v.data() + r * C;
    double m = 0.0;
    for (std::int64_t j = 0; j < C; ++j) m += src[j];
    m /= static_cast<double>(C);
    double var = 0.0;
    for (std::int64_t j = 0; j < C; ++j) var += (src[j] - m) * (src[j] - m);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(r)] = m;
    invstd[static_cast<std::size_t>(r)] = is;
    double* dst = out.data() + r * C;
    for (std::int64_t j = 0; j < C; ++j) dst[j] = pg[j] * (src[j] - m) * is + pb[j];
  }
  auto nx = x.node();
  auto ng = gamma.node();
  auto nb = beta.node();
  return make_op_node(std::move(out), {x, gamma, beta},
                      [nx, ng, nb, C, rows, mean, invstd](Node& node) {
    const double* g = node.grad.data();
    const double* pgm = ng->value.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * C;
      const double* src = nx->value.data() + r * C;
      const double m = mean[static_cast<std::size_t>(r)];
      const double is = invstd[static_cast<std::size_t>(r)];
      if (ng->requires_grad || nb->requires_grad) {
        double* dg = ng->requires_grad ? ng->grad_buffer().data() : nullptr;
        double* db = nb->requires_grad ? nb->grad_buffer().data() : nullptr;
        for (std::int64_t j = 0; j < C; ++j) {
          const double xhat = (src[j] - m) * is;
          if (dg) dg[j] += gr[j] * xhat;
          if (db) db[j] += gr[j];
        }
      }
      if (nx->requires_grad) {
        double sum_dyh = 0.0, sum_dyh_xhat = 0.0;
        for (std::int64_t j = 0; j < C; ++j) {
          const double dyh = gr[j] * pgm[j];
          const double xhat = (src[j] - m) * is;
          sum_dyh += dyh;
          sum_dyh_xhat += dyh * xhat;
        }
        sum_dyh /= static_cast<double>(C);
        sum_dyh_xhat /= static_cast<double>(C);
        double* d = nx->grad_buffer().data() + r * C;
        for (std::int64_t j = 0; j < C; ++j) {
          const double dyh = gr[j] * pgm[j];
          const double xhat = (src[j] - m) * is;
          d[j] += is * (dyh - sum_dyh - xhat * sum_dyh_xhat);
        }
      }
    }
  });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double momentum, double eps) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("batchnorm2d: expected NCHW");
  const std::int64_t N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw std::invalid_argument("batchnorm2d: channel-size mismatch");
  const std::int64_t hw = H * W;
  const std::int64_t m = N * hw;

  std::vector<double> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* p = v.data() + (n * C + c) * hw;
        for (std::int64_t k = 0; k < hw; ++k) s += p[k];
      }
      const double mu = s / static_cast<double>(m);
      double var = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* p = v.data() + (n * C + c) * hw;
        for (std::int64_t k = 0; k < hw; ++k) var += (p[k] - mu) * (p[k] - mu);
      }
      var /= static_cast<double>(m);
      mean[static_cast<std::size_t>(c)] = mu;
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean[c];
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor out(v.shape());
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double* src = v.data() + (n * C + c) * hw;
      double* dst = out.data() + (n * C + c) * hw;
      const double mu = mean[static_cast<std::size_t>(c)];
      const double is = invstd[static_cast<std::size_t>(c)];
      const double k = pg[c] * is;
      const double b0 = pb[c] - k * mu;
      for (std::int64_t j = 0; j < hw; ++j) dst[j] = k * src[j] + b0;
    }
  }

  auto nx = x.node();
  auto ng = gamma.node();
  auto nb = beta.node();
  return make_op_node(std::move(out), {x, gamma, beta},
                      [nx, ng, nb, N, C, hw, m, mean, invstd, training](Node& node) {
    const double* g = node.grad.data();
    const double* pgm = ng->value.data();
    for (std::int64_t c = 0; c < C; ++c) {
      const double mu = mean[static_cast<std::size_t>(c)];
      const double is = invstd[static_cast<std::size_t>(c)];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* gr = g + (n * C + c) * hw;
        const double* src = nx->value.data() + (n * C + c) * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
          sum_dy += gr[j];
          sum_dy_xhat += gr[j] * (src[j] - mu) * is;
        }
      }
      if (ng->requires_grad) ng->grad_buffer()[c] += sum_dy_xhat;
      if (nb->requires_grad) nb->grad_buffer()[c] += sum_dy;
      if (nx->requires_grad) {
        const double k = pgm[c] * is;
        const double mean_dy = sum_dy / static_cast<double>(m);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
        for (std::int64_t n = 0; n < N; ++n) {
          const double* gr = g + (n * C + c) * hw;
          const double* src = nx->value.data() + (n * C + c) * hw;
          double* d = nx->grad_buffer().data() + (n * C + c) * hw;
          if (training) {
            for (std::int64_t j = 0; j < hw; ++j) {
              const double xhat = (src[j] - mu) * is;
              d[j] += k * (gr[j] - mean_dy - xhat * mean_dy_xhat);
            }
          } else {
            for (std::int64_t j = 0; j < hw; ++j) d[j] += k * gr[j];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::int64_t stride,
           std::int64_t padding) {
  const Tensor& vx = x.value();
  const Tensor& vw = weight.value();
  const Tensor& vb = bias.value();
  if (vx.rank() != 4 || vw.rank() != 4 || vx.dim(1) != vw.dim(1))
    throw std::invalid_argument("conv2d: bad shapes x" + vx.shape_str() + " w" + vw.shape_str());
  const std::int64_t N = vx.dim(0), Cin = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const std::int64_t Cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  if (vb.numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");
  const std::int64_t OH = (H + 2 * padding - kh) / stride + 1;
  const std::int64_t OW = (W + 2 * padding - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: empty output");
  const std::int64_t K = Cin * kh * kw, L = OH * OW;

  Tensor out({N, Cout, OH, OW});
  std::vector<double> cols(static_cast<std::size_t>(K * L));
  CMapRM w2d(vw.data(), Cout, K);
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(vx.data() + n * Cin * H * W, Cin, H, W, kh, kw, stride, padding, OH, OW, cols.data());
    MapRM y(out.data() + n * Cout * L, Cout, L);
    y.noalias() = w2d * CMapRM(cols.data(), K, L);
    for (std::int64_t c = 0; c < Cout; ++c) {
      double* row = out.data() + (n * Cout + c) * L;
      const double b0 = vb[c];
      for (std::int64_t j = 0; j < L; ++j) row[j] += b0;
    }
  }

  auto nx = x.node();
  auto nw = weight.node();
  auto nb = bias.node();
  // im2col is recomputed in backward rather than saved; activations dominate
  // memory otherwise.
  return make_op_node(std::move(out), {x, weight, bias},
                      [nx, nw, nb, N, Cin, H, W, Cout, kh, kw, stride, padding, OH, OW, K,
                       L](Node& node) {
    std::vector<double> cols(static_cast<std::size_t>(K * L));
    std::vector<double> dcols(static_cast<std::size_t>(K * L));
    CMapRM w2d(nw->value.data(), Cout, K);
    for (std::int64_t n = 0; n < N; ++n) {
      CMapRM g(node.grad.data() + n * Cout * L, Cout, L);
      const bool need_cols = nw->requires_grad;
      if (need_cols)
        im2col(nx->value.data() + n * Cin * H * W, Cin, H, W, kh, kw, stride, padding, OH, OW,
               cols.data());
      if (nw->requires_grad) {
        MapRM dw(nw->grad_buffer().data(), Cout, K);
        dw.noalias() += g * CMapRM(cols.data(), K, L).transpose();
      }
      if (nb->requires_grad) {
        double* db = nb->grad_buffer().data();
        for (std::int64_t c = 0; c < Cout; ++c) {
          const double* grow = node.grad.data() + (n * Cout + c) * L;
          double s = 0.0;
          for (std::int64_t j = 0; j < L; ++j) s += grow[j];
          db[c] += s;
        }
      }
      if (nx->requires_grad) {
        MapRM dc(dcols.data(), K, L);
        dc.noalias() = w2d.transpose() * g;
        col2im_accum(dcols.data(), Cin, H, W, kh, kw, stride, padding, OH, OW,
                     nx->grad_buffer().data() + n * Cin * H * W);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear interpolation

namespace {

struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis make_axis(std::int64_t in, std::int64_t out) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(out));
  ax.i1.resize(static_cast<std::size_t>(out));
  ax.w1.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    const auto f = static_cast<std::int64_t>(s);
    const std::int64_t lo = std::min(f, in - 1);
    const std::int64_t hi = std::min(lo + 1, in - 1);
    ax.i0[static_cast<std::size_t>(o)] = lo;
    ax.i1[static_cast<std::size_t>(o)] = hi;
    ax.w1[static_cast<std::size_t>(o)] = s - static_cast<double>(f) > 1.0 ? 1.0 : s - static_cast<double>(f);
  }
  return ax;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() != 4) throw std::invalid_argument("bilinear_resize: expected NCHW");
  const std::int64_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const LerpAxis ay = make_axis(H, out_h);
  const LerpAxis axx = make_axis(W, out_w);
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const double* src = x.data() + nc * H * W;
    double* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const double wy = ay.w1[static_cast<std::size_t>(oy)];
      const double* r0 = src + ay.i0[static_cast<std::size_t>(oy)] * W;
      const double* r1 = src + ay.i1[static_cast<std::size_t>(oy)] * W;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const double wx = axx.w1[static_cast<std::size_t>(ox)];
        const std::int64_t x0 = axx.i0[static_cast<std::size_t>(ox)];
        const std::int64_t x1 = axx.i1[static_cast<std::size_t>(ox)];
        const double top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
        const double bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
        dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  const Tensor& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("upsample_bilinear: expected NCHW");
  const std::int64_t H = v.dim(2), W = v.dim(3);
  Tensor out = bilinear_resize(v, out_h, out_w);
  auto nx = x.node();
  return make_op_node(std::move(out), {x}, [nx, H, W, out_h, out_w](Node& node) {
    if (!nx->requires_grad) return;
    const LerpAxis ay = make_axis(H, out_h);
    const LerpAxis axx = make_axis(W, out_w);
    const std::int64_t NC = node.grad.dim(0) * node.grad.dim(1);
    for (std::int64_t nc = 0; nc < NC; ++nc) {
      const double* g = node.grad.data() + nc * out_h * out_w;
      double* d = nx->grad_buffer().data() + nc * H * W;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const double wy = ay.w1[static_cast<std::size_t>(oy)];
        const std::int64_t y0 = ay.i0[static_cast<std::size_t>(oy)];
        const std::int64_t y1 = ay.i1[static_cast<std::size_t>(oy)];
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const double wx = axx.w1[static_cast<std::size_t>(ox)];
          const std::int64_t x0 = axx.i0[static_cast<std::size_t>(ox)];
          const std::int64_t x1 = axx.i1[static_cast<std::size_t>(ox)];
          const double gv = g[oy * out_w + ox];
          d[y0 * W + x0] += gv * (1.0 - wy) * (1.0 - wx);
          d[y0 * W + x1] += gv * (1.0 - wy) * wx;
          d[y1 * W + x0] += gv * wy * (1.0 - wx);
          d[y1 * W + x1] += gv * wy * wx;
        }
      }
    }
  });
}

}  // namespace crossdepth
