#include "iconify/oracles.hpp"

#include <stdexcept>

namespace iconify::oracle {

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias, std::size_t stride,
                      std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw ShapeError("oracle conv2d: channel mismatch");
  const std::size_t OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({N, K, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = bias ? (*bias)[k] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const auto q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                acc += x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) * w.at(k, c, u, v);
              }
          y.at(n, k, i, j) = acc;
        }
  return y;
}

Tensor<double> conv_transpose2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                                std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != C) throw ShapeError("oracle conv_transpose2d: channel mismatch");
  const std::size_t OH = (H - 1) * stride + kh - 2 * pad, OW = (W - 1) * stride + kw - 2 * pad;
  Tensor<double> y({N, K, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const auto q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(OH) || q >= static_cast<long>(OW)) continue;
                y.at(n, k, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) += x.at(n, c, i, j) * w.at(c, k, u, v);
              }
  if (bias) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < OH; ++i)
          for (std::size_t j = 0; j < OW; ++j) y.at(n, k, i, j) += (*bias)[k];
  }
  return y;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw ShapeError("oracle dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace iconify::oracle
