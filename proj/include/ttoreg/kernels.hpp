#pragma once

// Differentiable primitives over planar tensors. Every *_backward
// function accumulates (+=) into the gradient buffers it is given, so a
// caller can sum contributions from several paths. Instantiated for
// float (production) and double (gradient checking).

#include <span>

#include "ttoreg/tensor.hpp"

namespace ttoreg::kernels {

// -- trilinear warping -------------------------------------------------------

/// out_c(p) = trilinear sample of src_c at p + disp(p), coordinates clamped
/// to [0, n-1] per axis. disp has 3 channels (x, y, z) in voxel units.
template <typename T>
void warp_forward(const Tensor<T>& src, const Tensor<T>& disp, Tensor<T>& out);

/// Adjoint of warp_forward. Either gradient pointer may be null. The
/// derivative with respect to a clamped coordinate is zero.
template <typename T>
void warp_backward(const Tensor<T>& src, const Tensor<T>& disp, const Tensor<T>& grad_out, Tensor<T>* grad_src,
                   Tensor<T>* grad_disp);

/// u(x) = u2(x) + sample(u1, x + u2(x)).
template <typename T>
void compose_forward(const Tensor<T>& u1, const Tensor<T>& u2, Tensor<T>& out);

template <typename T>
void compose_backward(const Tensor<T>& u1, const Tensor<T>& u2, const Tensor<T>& grad_out, Tensor<T>* grad_u1,
                      Tensor<T>* grad_u2);

// -- regularizer and similarity ---------------------------------------------

/// Mean over components of the squared forward-difference gradient norm;
/// each axis term is averaged over its valid (non-border) positions.
template <typename T>
double smoothness_forward(const Tensor<T>& u);

template <typename T>
void smoothness_backward(const Tensor<T>& u, double scale, Tensor<T>& grad_u);

template <typename T>
double mse_forward(std::span<const T> a, std::span<const T> b);

/// grad_b += scale * d mse / d b.
template <typename T>
void mse_backward(std::span<const T> a, std::span<const T> b, double scale, std::span<T> grad_b);

/// Negative mean local Pearson correlation over a clamp-padded cubic window.
/// Windows whose variance (either image) falls below 1e-6 contribute 0.
template <typename T>
double ncc_forward(const Tensor<T>& a, const Tensor<T>& b, int window);

/// grad_b += scale * d ncc / d b.
template <typename T>
void ncc_backward(const Tensor<T>& a, const Tensor<T>& b, int window, double scale, Tensor<T>& grad_b);

// -- network layers ----------------------------------------------------------

/// 3x3x3 convolution, zero padding 1, stride 1 or 2. weights are laid out
/// [out][in][kz][ky][kx]. Output dims are ceil(n / stride).
template <typename T>
void conv3d_forward(const Tensor<T>& in, std::span<const T> weights, std::span<const T> bias, int out_channels,
                    int stride, Tensor<T>& out);

/// grad_in may be null (first layer).
template <typename T>
void conv3d_backward(const Tensor<T>& in, std::span<const T> weights, int stride, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weights, std::span<T> grad_bias);

template <typename T>
void leaky_relu_forward(Tensor<T>& x, T slope);

/// Uses the activation output y: y > 0 iff the input was > 0.
template <typename T>
void leaky_relu_backward(const Tensor<T>& y, T slope, Tensor<T>& grad);

/// Trilinear x2 upsampling with half-voxel alignment and edge clamping.
template <typename T>
void upsample2_forward(const Tensor<T>& in, Tensor<T>& out);

template <typename T>
void upsample2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_in);

}  // namespace ttoreg::kernels
