#pragma once

#include <cstddef>

#include "iconify/tensor.hpp"

namespace iconify::oracle {

// Direct loop implementations used only to cross-check the fast kernels.

/// y[n,k,i,j] = b[k] + sum_{c,u,v} x[n,c,i*s+u-p,j*s+v-p] w[k,c,u,v], zero outside x.
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias, std::size_t stride,
                      std::size_t pad);

/// Scatter form: every x[n,c,i,j] adds x * w[c,k,u,v] at (i*s+u-p, j*s+v-p).
Tensor<double> conv_transpose2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                                std::size_t stride, std::size_t pad);

double dot(const Tensor<double>& a, const Tensor<double>& b);

}  // namespace iconify::oracle
