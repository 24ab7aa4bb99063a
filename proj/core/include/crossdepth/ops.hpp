#pragma once

#include <array>
#include <cstdint>

#include "crossdepth/autograd.hpp"

namespace crossdepth {

// Elementwise (shapes must match exactly; no implicit broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

// k * x + m
Var affine(const Var& x, double k, double m);
inline Var add_scalar(const Var& x, double s) { return affine(x, 1.0, s); }
inline Var mul_scalar(const Var& x, double k) { return affine(x, k, 0.0); }
inline Var neg(const Var& x) { return affine(x, -1.0, 0.0); }

Var vabs(const Var& x);
Var vexp(const Var& x);
Var vlog(const Var& x);
Var vsqrt(const Var& x);  // backward guarded near 0
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var gelu(const Var& x);

// Reductions to shape {1}.
Var sum_all(const Var& x);
Var mean_all(const Var& x);

// Shape ops.
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::int64_t>& dims);
// Selects index i of dim 0, dropping the dim: (N,...) -> (...).
Var narrow0(const Var& x, std::int64_t i);
// NCHW channel slice [c0, c1).
Var slice_channels(const Var& x, std::int64_t c0, std::int64_t c1);
Var concat_channels(const Var& a, const Var& b);
// NCHW zero padding / cropping on H and W.
Var pad_hw(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
           std::int64_t right);
Var crop_hw(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
            std::int64_t right);
// Cyclic shift along H and W: out[y][x] = in[y - sy mod H][x - sx mod W].
Var roll_hw(const Var& x, std::int64_t sy, std::int64_t sx);

// Linear algebra. linear computes x @ W^T + b with x:(M,K), W:(N,K), b:(N).
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var& bias);
// Batched matmul on rank-3 tensors with optional transposes of the last two dims.
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

Var softmax_lastdim(const Var& x);
Var layernorm_lastdim(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// 2-d convolution over NCHW, weight (Cout,Cin,kh,kw), square stride/padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::int64_t stride = 1,
           std::int64_t padding = 0);

// BatchNorm over NCHW. In training mode batch statistics are used and the
// running buffers (owned by the calling module) are updated in place.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double momentum = 0.1,
                double eps = 1e-5);

// Bilinear interpolation (half-pixel centers) to (out_h, out_w).
Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);

// Value-only helpers shared with non-autograd code paths.
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace crossdepth
