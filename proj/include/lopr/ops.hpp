#pragma once

#include "lopr/tensor.hpp"

namespace lopr {

// Elementwise binary ops accept equal shapes or a scalar (size-1) operand
// against a tensor; anything else is a DimensionError naming both shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError on non-positive entries
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
// tanh approximation: 0.5*x*(1 + tanh(c1*(x + c2*x^3))),
// c1 = 0.7978845608028654 (= sqrt(2/pi)), c2 = 0.044715.
Tensor gelu(const Tensor& a);

// Shape plumbing. All results are fresh storage; reshape copies.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
// axis 0 on any rank, axis 1 on rank 2.
Tensor narrow(const Tensor& a, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor repeat_rows(const Tensor& a, int n);  // [1,D] -> [n,D]
Tensor sum_rows(const Tensor& a);            // [N,D] -> [1,D]
Tensor repeat_last(const Tensor& a, int n);  // [...,1] -> [...,n]
Tensor sum_last(const Tensor& a);            // [...,n] -> [...,1]
// Row maxima along the last axis as a constant (no gradient); used for
// numerically stable softmax, which is invariant to the shift.
Tensor max_last_detached(const Tensor& a);
Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

// Patch extraction for convolution: [C,H,W] -> [C*kh*kw, OH*OW] with zero
// padding; col2im is its exact adjoint.
Tensor im2col(const Tensor& x, int kh, int kw, int sh, int sw, int ph, int pw);
Tensor col2im(const Tensor& cols, int channels, int height, int width, int kh,
              int kw, int sh, int sw, int ph, int pw);

// Cross-correlation, x: [C_in,H,W], w: [C_out,C_in,kh,kw].
// OH = floor((H + 2*ph - kh)/sh) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor conv2d(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw);

// Adjoint of conv2d. x: [C_in,H,W], w: [C_in,C_out,kh,kw],
// H_out = (H-1)*sh - 2*ph + kh.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int sh, int sw, int ph,
                        int pw);

Tensor avg_pool2d(const Tensor& x, int k);           // [C,H,W], k | H, k | W
Tensor nearest_upsample2d(const Tensor& x, int k);

// Stable softmax along `axis`; rank 1, rank 2 (axis 0 or 1), or rank N with
// the last axis. Negative axis counts from the end.
Tensor softmax(const Tensor& x, int axis = -1);

// Per-row normalization along the last axis (population variance), then
// gain/bias of length dim(last).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor mse(const Tensor& a, const Tensor& b);  // mean((a-b)^2), scalar

}  // namespace lopr
