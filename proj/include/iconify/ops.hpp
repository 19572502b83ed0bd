#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "iconify/tape.hpp"
#include "iconify/tensor.hpp"

namespace iconify {

enum class PadMode { zero, reflect };

struct Padding {
  PadMode mode = PadMode::zero;
  std::size_t width = 0;

  static Padding zeros(std::size_t w) { return {PadMode::zero, w}; }
  static Padding reflect(std::size_t w) { return {PadMode::reflect, w}; }
};

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = 0.0;  // leaky_relu only

  static Activation relu() { return {ActivationKind::relu, 0.0}; }
  static Activation leaky_relu(double slope) { return {ActivationKind::leaky_relu, slope}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.0}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
};

std::string to_string(const Activation& act);

enum class LossKind { mean, l1, mse };

/// Dimensions of one direct convolution x (N x C x H x W) * w (K x C x kh x kw)
/// with symmetric zero padding.
struct ConvGeometry {
  std::size_t batch, in_channels, in_h, in_w;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

/// Output extent of a strided, padded window; throws when the window does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad, const char* axis);
std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

namespace kernels {

// Raw conv primitives shared by conv2d and conv_transpose2d; the *_accumulate
// variants add into their destination.
template <typename T>
void conv_forward(const T* x, const T* w, T* y, const ConvGeometry& g);
template <typename T>
void conv_backward_data_accumulate(const T* dy, const T* w, T* dx, const ConvGeometry& g);
template <typename T>
void conv_backward_filter_accumulate(const T* x, const T* dy, T* dw, const ConvGeometry& g);

}  // namespace kernels

// Elementwise and reductions.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, double factor);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> l1_loss(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mse_loss(const Var<T>& a, const Var<T>& b);

/// Dispatch over {mean | l1 | mse}; `b` is ignored for mean.
template <typename T> Var<T> reduce_loss(const Var<T>& a, const Var<T>& b, LossKind kind);

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias, std::size_t stride,
              Padding padding);

/// Kernels are laid out in_channels x out_channels x kh x kw. Exact adjoint of
/// conv2d with the same kernel, stride and zero padding.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias,
                        std::size_t stride, std::size_t padding);

template <typename T>
Var<T> instance_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& bias, double eps = 1e-5);

template <typename T> Var<T> activation(const Var<T>& input, Activation act);

template <typename T> Var<T> pad_reflect(const Var<T>& input, std::size_t width);

/// Integer-factor or fractional area average when shrinking, nearest neighbour
/// when growing, identity at equal size. Applied per axis.
template <typename T> Var<T> resize_area(const Var<T>& input, std::size_t out_h, std::size_t out_w);
template <typename T> Tensor<T> resize_area(const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

}  // namespace iconify
