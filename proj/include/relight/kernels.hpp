#pragma once

// Compute kernels behind the UNet layers. `relight::kernels` holds the
// OpenMP-parallel implementations used in training and sampling;
// `relight::reference` holds straightforward serial loops kept for tests and
// benchmarks. Both produce the same results up to float reassociation.

#include <span>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

/// Weights are (cout, cin, k, k) row-major; stride 1, zero padding k/2.
struct ConvShape {
  int cin = 0;
  int cout = 0;
  int kernel = 3;
};

namespace kernels {

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, const ConvShape& shape,
                    Tensor& y);
/// Accumulates into dweight/dbias; writes dx when non-null.
void conv2d_backward(const Tensor& x, std::span<const float> weight, const ConvShape& shape, const Tensor& dy,
                     Tensor* dx, std::span<float> dweight, std::span<float> dbias);

/// Saves per-(sample, group) mean and reciprocal std for the backward pass.
void group_norm_forward(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, int groups,
                        float eps, Tensor& y, std::vector<float>& mean, std::vector<float>& rstd);
void group_norm_backward(const Tensor& x, std::span<const float> gamma, int groups, const std::vector<float>& mean,
                         const std::vector<float>& rstd, const Tensor& dy, Tensor& dx, std::span<float> dgamma,
                         std::span<float> dbeta);

/// Single-head self-attention over spatial positions. `qkv` is (n, 3c, h, w)
/// holding queries, keys and values; output is (n, c, h, w). `probs` keeps
/// the (n, hw, hw) attention matrix.
void attention_forward(const Tensor& qkv, Tensor& out, std::vector<float>& probs);
void attention_backward(const Tensor& qkv, const std::vector<float>& probs, const Tensor& dout, Tensor& dqkv);

/// y = x W^T + b with x (n, in), W (out, in).
void linear_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, int out_features,
                    Tensor& y);
void linear_backward(const Tensor& x, std::span<const float> weight, int out_features, const Tensor& dy, Tensor* dx,
                     std::span<float> dweight, std::span<float> dbias);

void silu_forward(const Tensor& x, Tensor& y);
void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void avg_pool2_forward(const Tensor& x, Tensor& y);
void avg_pool2_backward(const Tensor& dy, Tensor& dx);
void upsample2_forward(const Tensor& x, Tensor& y);
void upsample2_backward(const Tensor& dy, Tensor& dx);

}  // namespace kernels

namespace reference {

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, const ConvShape& shape,
                    Tensor& y);
void conv2d_backward(const Tensor& x, std::span<const float> weight, const ConvShape& shape, const Tensor& dy,
                     Tensor* dx, std::span<float> dweight, std::span<float> dbias);
void group_norm_forward(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, int groups,
                        float eps, Tensor& y);
void attention_forward(const Tensor& qkv, Tensor& out);

}  // namespace reference

}  // namespace relight
