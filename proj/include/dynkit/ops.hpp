#pragma once

#include <cstdint>
#include <vector>

#include "dynkit/tensor.hpp"

namespace dynkit::diff {

// Elementwise binary ops broadcast numpy-style on trailing axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// a*x + b with scalar constants.
Tensor affine(const Tensor& x, double a, double b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor pow(const Tensor& x, double p);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
// max(x, c), implemented with the relu kernel's subgradient convention.
Tensor clamp_min(const Tensor& x, double c);

// Batched matrix product over the last two axes; leading axes broadcast.
// ta/tb transpose the stored last-two axes of the respective operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false,
              bool tb = false);

Tensor sum(const Tensor& x);                    // full reduction to scalar
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, int ax1, int ax2);
// Materializes x broadcast to `target` (trailing-axis alignment).
Tensor broadcast_to(const Tensor& x, const Shape& target);

Tensor softmax_last(const Tensor& x);
Tensor layernorm_last(const Tensor& x, const Tensor& gamma,
                      const Tensor& beta, double eps = 1e-5);
Tensor cumsum_last(const Tensor& x, bool exclusive = false);

// Samples img [H,W,C] at continuous pixel coords uv [B,2] (u=x, v=y, in
// pixel units where (0,0) is the first pixel center). Rows with valid[b]==0
// or coords outside the image produce zeros and receive no gradient.
// Gradients flow to both img and uv. `valid_out`, when non-null, is set to
// the effective per-row validity.
Tensor bilinear_sample(const Tensor& img, const Tensor& uv,
                       const std::vector<uint8_t>& valid,
                       std::vector<uint8_t>* valid_out = nullptr);

// 3x3 convolution over x [H,W,Cin] with reflect-101 border handling.
// w is [3,3,Cin,Cout], b is [Cout]; output [H,W,Cout].
Tensor conv3x3_reflect(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor avgpool2(const Tensor& x);            // [H,W,C] -> [H/2,W/2,C]
Tensor upsample_bilinear2x(const Tensor& x); // [H,W,C] -> [2H,2W,C]

// Internal helpers shared by kernels (exposed for tests).
Shape broadcast_shape(const Shape& a, const Shape& b);
std::vector<double> reduce_to_shape(const std::vector<double>& data,
                                    const Shape& from, const Shape& to);
void check_finite(const char* op, const std::vector<double>& v);
// Row-major C = alpha*op(A)*op(B) + beta*C, shared by matmul and conv.
void gemm_rm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
             const double* a, int64_t lda, const double* b, int64_t ldb,
             double beta, double* c, int64_t ldc);

}  // namespace dynkit::diff
