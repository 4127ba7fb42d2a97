#pragma once

#include <cstdint>

#include "nasbnn/nn_ops.hpp"
#include "nasbnn/tensor.hpp"

namespace nasbnn {

// sign(x): +1 for x >= 0, -1 otherwise. Backward is the clipped
// straight-through estimator: gradient passes where |x| <= 1.
void sign_forward(const float* x, float* y, int64_t n);
void sign_backward(const float* x, const float* dy, float* dx, int64_t n);

// Channel-wise standardization (w - mean)/sqrt(var + 1e-5) with population
// variance; `channels` rows of `per_channel` elements each. Accumulation in
// double. Templated so gradient checks can run in double end to end.
template <typename T>
void weight_normalize(const T* w, int channels, int64_t per_channel, T* out);

// dx given the forward inputs; dw is overwritten.
template <typename T>
void weight_normalize_backward(const T* w, int channels, int64_t per_channel, const T* dy, T* dw);

inline constexpr double kWeightNormEps = 1e-5;

// Per-filter spatial transform: out[f,:] = w[f,:] · theta[0:k2,0:k2], where
// rows are flattened k×k patches and theta is stored dense with row stride
// theta_dim (the layer's k_max²). filters = out_channels * in_channels/groups.
template <typename T>
void bi_transform(const T* w, int64_t filters, int k2, const T* theta, int theta_dim, T* out);

// dw overwritten; dtheta accumulated (may be null).
template <typename T>
void bi_transform_backward(const T* w, int64_t filters, int k2, const T* theta, int theta_dim,
                           const T* dy, T* dw, T* dtheta);

// RSign: y = sign(x - shift[c]) per channel, STE backward. dshift may be
// null (gradient still flows to x).
void rsign_forward(const Tensor& x, const float* shift, Tensor& y);
void rsign_backward(const Tensor& x, const float* shift, const Tensor& dy, Tensor& dx,
                    float* dshift);

// RPReLU: y = x - gamma + zeta where x > gamma, beta*(x - gamma) + zeta
// otherwise; per-channel parameters.
void rprelu_forward(const Tensor& x, const float* gamma, const float* beta, const float* zeta,
                    Tensor& y);
void rprelu_backward(const Tensor& x, const float* gamma, const float* beta, const Tensor& dy,
                     Tensor& dx, float* dgamma, float* dbeta, float* dzeta);

// Binary convolution of a ±1 input with sign-binarized weights. The
// pre-scale output is the exact ±1 dot-product sum; with alpha scaling each
// output channel is multiplied by mean(|w_pre|) over that filter.
Tensor binary_conv(const Tensor& x_b, const Tensor& w_pre, const nn::ConvSpec& spec,
                   bool alpha_scaling, Tensor* prescale_out = nullptr);

// Per-output-channel mean absolute value, double accumulation.
void channel_abs_mean(const float* w, int channels, int64_t per_channel, float* alpha);

}  // namespace nasbnn
