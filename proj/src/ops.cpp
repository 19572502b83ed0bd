#include "iconify/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace iconify {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename T>
void im2col(const T* x, T* cols, const ConvGeometry& g) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* cols, T* x, const ConvGeometry& g) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = xc + static_cast<std::size_t>(ih) * g.in_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

ConvGeometry make_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  ConvGeometry g{};
  g.batch = x[0];
  g.in_channels = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_channels = w[0];
  g.kernel_h = w[2];
  g.kernel_w = w[3];
  g.stride = stride;
  g.pad = pad;
  g.out_h = conv_output_extent(g.in_h, g.kernel_h, stride, pad, "height");
  g.out_w = conv_output_extent(g.in_w, g.kernel_w, stride, pad, "width");
  return g;
}

template <typename T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t n = y.dim(0), c = y.dim(1), plane = y.dim(2) * y.dim(3);
  auto d = y.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      T* p = d.data() + (b * c + k) * plane;
      const T v = bias[k];
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& g) {
  const std::size_t n = g.dim(0), c = g.dim(1), plane = g.dim(2) * g.dim(3);
  Tensor<T> out(Shape{c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const T* p = g.data().data() + (b * c + k) * plane;
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[k] += s;
    }
  return out;
}

template <typename T>
void check_bias(const std::optional<Var<T>>& bias, std::size_t channels, const char* op) {
  if (!bias) return;
  if (bias->shape() != Shape{channels}) {
    throw ShapeError(std::string(op) + ": bias " + to_string(bias->shape()) + " must have " +
                     std::to_string(channels) + " entries");
  }
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<std::ptrdiff_t>(n)) return static_cast<std::size_t>(2 * static_cast<std::ptrdiff_t>(n - 1) - i);
  return static_cast<std::size_t>(i);
}

// Row-stochastic (for shrink) or selection (for grow) matrix mapping `in` samples to `out`.
template <typename T>
RowMatrix<T> resize_matrix(std::size_t in, std::size_t out) {
  RowMatrix<T> m = RowMatrix<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  if (out == in) {
    m.setIdentity();
  } else if (out < in) {
    if (in % out == 0) {
      const std::size_t f = in / out;
      const T w = T(1) / static_cast<T>(f);
      for (std::size_t i = 0; i < out; ++i)
        for (std::size_t k = 0; k < f; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i * f + k)) = w;
    } else {
      const double ratio = static_cast<double>(in) / static_cast<double>(out);
      for (std::size_t i = 0; i < out; ++i) {
        const double lo = i * ratio, hi = (i + 1) * ratio;
        for (std::size_t k = static_cast<std::size_t>(lo); k < in && static_cast<double>(k) < hi; ++k) {
          const double overlap = std::min(hi, k + 1.0) - std::max(lo, static_cast<double>(k));
          if (overlap > 0) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<T>(overlap / ratio);
        }
      }
    }
  } else {
    for (std::size_t i = 0; i < out; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i * in / out)) = T(1);
  }
  return m;
}

}  // namespace

std::string to_string(const Activation& act) {
  switch (act.kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: {
      std::ostringstream os;
      os << "leaky_relu(" << act.slope << ")";
      return os.str();
    }
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::sigmoid: return "sigmoid";
  }
  return "?";
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad, const char* axis) {
  if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string("conv: padded ") + axis + " " + std::to_string(in + 2 * pad) + " is smaller than kernel " +
                     std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw std::invalid_argument("conv_transpose: stride must be positive");
  const std::size_t full = (in - 1) * stride + kernel;
  if (full <= 2 * pad) throw ShapeError("conv_transpose: padding " + std::to_string(pad) + " consumes the whole output");
  return full - 2 * pad;
}

namespace kernels {

template <typename T>
void conv_forward(const T* x, const T* w, T* y, const ConvGeometry& g) {
  const auto ckk = static_cast<Eigen::Index>(g.in_channels * g.kernel_h * g.kernel_w);
  const auto plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
  const auto k = static_cast<Eigen::Index>(g.out_channels);
  std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
  ConstMatrixMap<T> wm(w, k, ckk);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x + n * g.in_channels * g.in_h * g.in_w, cols.data(), g);
    ConstMatrixMap<T> cm(cols.data(), ckk, plane);
    MatrixMap<T> ym(y + n * g.out_channels * g.out_h * g.out_w, k, plane);
    ym.noalias() = wm * cm;
  }
}

template <typename T>
void conv_backward_data_accumulate(const T* dy, const T* w, T* dx, const ConvGeometry& g) {
  const auto ckk = static_cast<Eigen::Index>(g.in_channels * g.kernel_h * g.kernel_w);
  const auto plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
  const auto k = static_cast<Eigen::Index>(g.out_channels);
  std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
  ConstMatrixMap<T> wm(w, k, ckk);
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatrixMap<T> dym(dy + n * g.out_channels * g.out_h * g.out_w, k, plane);
    MatrixMap<T> cm(cols.data(), ckk, plane);
    cm.noalias() = wm.transpose() * dym;
    col2im_accumulate(cols.data(), dx + n * g.in_channels * g.in_h * g.in_w, g);
  }
}

template <typename T>
void conv_backward_filter_accumulate(const T* x, const T* dy, T* dw, const ConvGeometry& g) {
  const auto ckk = static_cast<Eigen::Index>(g.in_channels * g.kernel_h * g.kernel_w);
  const auto plane = static_cast<Eigen::Index>(g.out_h * g.out_w);
  const auto k = static_cast<Eigen::Index>(g.out_channels);
  std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
  MatrixMap<T> dwm(dw, k, ckk);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x + n * g.in_channels * g.in_h * g.in_w, cols.data(), g);
    ConstMatrixMap<T> cm(cols.data(), ckk, plane);
    ConstMatrixMap<T> dym(dy + n * g.out_channels * g.out_h * g.out_w, k, plane);
    dwm.noalias() += dym * cm.transpose();
  }
}

}  // namespace kernels

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape().record(std::move(out), {a.id(), b.id()},
                         [](const Tensor<T>& g, GradSink<T>& sink) {
                           sink.add(0, g);
                           sink.add(1, g);
                         },
                         "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape().record(std::move(out), {a.id(), b.id()},
                         [](const Tensor<T>& g, GradSink<T>& sink) {
                           sink.add(0, g);
                           if (sink.wants(1)) {
                             Tensor<T> neg = g;
                             for (auto& v : neg.data()) v = -v;
                             sink.add(1, neg);
                           }
                         },
                         "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  Tape<T>* tape = &a.tape();
  const NodeId ia = a.id(), ib = b.id();
  return tape->record(std::move(out), {ia, ib},
                      [tape, ia, ib](const Tensor<T>& g, GradSink<T>& sink) {
                        for (std::size_t p = 0; p < 2; ++p) {
                          if (!sink.wants(p)) continue;
                          Tensor<T> d = g;
                          auto other = tape->value(p == 0 ? ib : ia).data();
                          auto dd = d.data();
                          for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= other[i];
                          sink.add(p, d);
                        }
                      },
                      "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out = a.value();
  const T f = static_cast<T>(factor);
  for (auto& v : out.data()) v *= f;
  return a.tape().record(std::move(out), {a.id()},
                         [f](const Tensor<T>& g, GradSink<T>& sink) {
                           Tensor<T> d = g;
                           for (auto& v : d.data()) v *= f;
                           sink.add(0, d);
                         },
                         "scale");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  const Shape shape = a.shape();
  return a.tape().record(Tensor<T>::scalar(s), {a.id()},
                         [shape](const Tensor<T>& g, GradSink<T>& sink) { sink.add(0, Tensor<T>(shape, g[0])); }, "sum");
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  T s = 0;
  for (T v : a.value().data()) s += v;
  const Shape shape = a.shape();
  return a.tape().record(Tensor<T>::scalar(s / static_cast<T>(n)), {a.id()},
                         [shape, n](const Tensor<T>& g, GradSink<T>& sink) {
                           sink.add(0, Tensor<T>(shape, g[0] / static_cast<T>(n)));
                         },
                         "mean");
}

template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "l1_loss");
  const auto av = a.value().data(), bv = b.value().data();
  const std::size_t n = av.size();
  if (n == 0) throw ShapeError("l1_loss: empty tensor");
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(av[i] - bv[i]);
  Tape<T>* tape = &a.tape();
  const NodeId ia = a.id(), ib = b.id();
  return tape->record(Tensor<T>::scalar(s / static_cast<T>(n)), {ia, ib},
                      [tape, ia, ib, n](const Tensor<T>& g, GradSink<T>& sink) {
                        const auto& x = tape->value(ia);
                        const auto& y = tape->value(ib);
                        Tensor<T> d(x.shape());
                        const T c = g[0] / static_cast<T>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                          const T diff = x[i] - y[i];
                          d[i] = diff > 0 ? c : (diff < 0 ? -c : T(0));
                        }
                        sink.add(0, d);
                        if (sink.wants(1)) {
                          for (auto& v : d.data()) v = -v;
                          sink.add(1, d);
                        }
                      },
                      "l1_loss");
}

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mse_loss");
  const auto av = a.value().data(), bv = b.value().data();
  const std::size_t n = av.size();
  if (n == 0) throw ShapeError("mse_loss: empty tensor");
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = av[i] - bv[i];
    s += d * d;
  }
  Tape<T>* tape = &a.tape();
  const NodeId ia = a.id(), ib = b.id();
  return tape->record(Tensor<T>::scalar(s / static_cast<T>(n)), {ia, ib},
                      [tape, ia, ib, n](const Tensor<T>& g, GradSink<T>& sink) {
                        const auto& x = tape->value(ia);
                        const auto& y = tape->value(ib);
                        Tensor<T> d(x.shape());
                        const T c = T(2) * g[0] / static_cast<T>(n);
                        for (std::size_t i = 0; i < n; ++i) d[i] = c * (x[i] - y[i]);
                        sink.add(0, d);
                        if (sink.wants(1)) {
                          for (auto& v : d.data()) v = -v;
                          sink.add(1, d);
                        }
                      },
                      "mse_loss");
}

template <typename T>
Var<T> reduce_loss(const Var<T>& a, const Var<T>& b, LossKind kind) {
  switch (kind) {
    case LossKind::mean: return mean(a);
    case LossKind::l1: return l1_loss(a, b);
    case LossKind::mse: return mse_loss(a, b);
  }
  throw std::invalid_argument("reduce_loss: unknown kind");
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias, std::size_t stride,
              Padding padding) {
  require_same_tape(input, kernels, "conv2d");
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernels.shape(), 4, "conv2d kernels");
  if (input.shape()[1] != kernels.shape()[1]) {
    throw ShapeError("conv2d: input channels C=" + std::to_string(input.shape()[1]) + " but kernels expect C=" +
                     std::to_string(kernels.shape()[1]) + " (input " + to_string(input.shape()) + ", kernels " +
                     to_string(kernels.shape()) + ")");
  }
  check_bias(bias, kernels.shape()[0], "conv2d");
  if (padding.mode == PadMode::reflect && padding.width > 0) {
    return conv2d(pad_reflect(input, padding.width), kernels, bias, stride, Padding::zeros(0));
  }

  const ConvGeometry g = make_geometry(input.shape(), kernels.shape(), stride, padding.width);
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  kernels::conv_forward(input.value().data().data(), kernels.value().data().data(), out.data().data(), g);
  if (bias) add_channel_bias(out, bias->value());

  Tape<T>* tape = &input.tape();
  const NodeId ix = input.id(), iw = kernels.id();
  std::vector<NodeId> parents{ix, iw};
  if (bias) parents.push_back(bias->id());
  const bool has_bias = bias.has_value();
  return tape->record(std::move(out), std::move(parents),
                      [tape, ix, iw, g, has_bias](const Tensor<T>& gy, GradSink<T>& sink) {
                        const auto& x = tape->value(ix);
                        const auto& w = tape->value(iw);
                        if (sink.wants(0)) {
                          Tensor<T> dx(x.shape());
                          kernels::conv_backward_data_accumulate(gy.data().data(), w.data().data(), dx.data().data(), g);
                          sink.add(0, dx);
                        }
                        if (sink.wants(1)) {
                          Tensor<T> dw(w.shape());
                          kernels::conv_backward_filter_accumulate(x.data().data(), gy.data().data(), dw.data().data(), g);
                          sink.add(1, dw);
                        }
                        if (has_bias && sink.wants(2)) sink.add(2, channel_sums(gy));
                      },
                      "conv2d");
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernels, const std::optional<Var<T>>& bias,
                        std::size_t stride, std::size_t padding) {
  require_same_tape(input, kernels, "conv_transpose2d");
  require_rank(input.shape(), 4, "conv_transpose2d input");
  require_rank(kernels.shape(), 4, "conv_transpose2d kernels");
  const Shape& xs = input.shape();
  const Shape& ws = kernels.shape();
  if (xs[1] != ws[0]) {
    throw ShapeError("conv_transpose2d: input channels C=" + std::to_string(xs[1]) + " but kernels expect C=" +
                     std::to_string(ws[0]) + " (input " + to_string(xs) + ", kernels " + to_string(ws) + ")");
  }
  check_bias(bias, ws[1], "conv_transpose2d");
  const std::size_t oh = conv_transpose_output_extent(xs[2], ws[2], stride, padding);
  const std::size_t ow = conv_transpose_output_extent(xs[3], ws[3], stride, padding);
  // The direct convolution whose adjoint this is: it maps the output back onto the input grid.
  ConvGeometry g{};
  g.batch = xs[0];
  g.in_channels = ws[1];
  g.in_h = oh;
  g.in_w = ow;
  g.out_channels = ws[0];
  g.kernel_h = ws[2];
  g.kernel_w = ws[3];
  g.stride = stride;
  g.pad = padding;
  g.out_h = xs[2];
  g.out_w = xs[3];
  if (conv_output_extent(oh, g.kernel_h, stride, padding, "height") != xs[2] ||
      conv_output_extent(ow, g.kernel_w, stride, padding, "width") != xs[3]) {
    throw ShapeError("conv_transpose2d: geometry is not invertible for input " + to_string(xs));
  }

  Tensor<T> out(Shape{g.batch, g.in_channels, oh, ow});
  kernels::conv_backward_data_accumulate(input.value().data().data(), kernels.value().data().data(),
                                         out.data().data(), g);
  if (bias) add_channel_bias(out, bias->value());

  Tape<T>* tape = &input.tape();
  const NodeId ix = input.id(), iw = kernels.id();
  std::vector<NodeId> parents{ix, iw};
  if (bias) parents.push_back(bias->id());
  const bool has_bias = bias.has_value();
  return tape->record(std::move(out), std::move(parents),
                      [tape, ix, iw, g, has_bias](const Tensor<T>& gy, GradSink<T>& sink) {
                        const auto& x = tape->value(ix);
                        const auto& w = tape->value(iw);
                        if (sink.wants(0)) {
                          Tensor<T> dx(x.shape());
                          kernels::conv_forward(gy.data().data(), w.data().data(), dx.data().data(), g);
                          sink.add(0, dx);
                        }
                        if (sink.wants(1)) {
                          Tensor<T> dw(w.shape());
                          kernels::conv_backward_filter_accumulate(gy.data().data(), x.data().data(), dw.data().data(), g);
                          sink.add(1, dw);
                        }
                        if (has_bias && sink.wants(2)) sink.add(2, channel_sums(gy));
                      },
                      "conv_transpose2d");
}

template <typename T>
Var<T> instance_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& bias, double eps) {
  require_same_tape(input, gain, "instance_norm");
  require_same_tape(input, bias, "instance_norm");
  require_rank(input.shape(), 4, "instance_norm input");
  const Shape& s = input.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw ShapeError("instance_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                     " must have C=" + std::to_string(c) + " entries");
  }
  const auto& x = input.value();
  Tensor<T> xhat(s);
  std::vector<T> inv_std(n * c);
  Tensor<T> out(s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (b * c + k) * plane;
      T m = 0;
      for (std::size_t i = 0; i < plane; ++i) m += x[off + i];
      m /= static_cast<T>(plane);
      T v = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = x[off + i] - m;
        v += d * d;
      }
      v /= static_cast<T>(plane);
      const T is = T(1) / std::sqrt(v + static_cast<T>(eps));
      inv_std[b * c + k] = is;
      const T gk = gain.value()[k], bk = bias.value()[k];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - m) * is;
        xhat[off + i] = h;
        out[off + i] = gk * h + bk;
      }
    }

  Tape<T>* tape = &input.tape();
  const NodeId ig = gain.id();
  return tape->record(
      std::move(out), {input.id(), gain.id(), bias.id()},
      [tape, ig, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane](const Tensor<T>& gy,
                                                                                     GradSink<T>& sink) {
        const auto& gv = tape->value(ig);
        if (sink.wants(0)) {
          Tensor<T> dx(gy.shape());
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t off = (b * c + k) * plane;
              T mean_d = 0, mean_dh = 0;
              for (std::size_t i = 0; i < plane; ++i) {
                const T d = gy[off + i] * gv[k];
                mean_d += d;
                mean_dh += d * xhat[off + i];
              }
              mean_d /= static_cast<T>(plane);
              mean_dh /= static_cast<T>(plane);
              const T is = inv_std[b * c + k];
              for (std::size_t i = 0; i < plane; ++i) {
                dx[off + i] = is * (gy[off + i] * gv[k] - mean_d - xhat[off + i] * mean_dh);
              }
            }
          sink.add(0, dx);
        }
        if (sink.wants(1) || sink.wants(2)) {
          Tensor<T> dg(Shape{c}), db(Shape{c});
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t off = (b * c + k) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                dg[k] += gy[off + i] * xhat[off + i];
                db[k] += gy[off + i];
              }
            }
          sink.add(1, dg);
          sink.add(2, db);
        }
      },
      "instance_norm");
}

template <typename T>
Var<T> activation(const Var<T>& input, Activation act) {
  Tensor<T> out = input.value();
  const T slope = static_cast<T>(act.slope);
  for (auto& v : out.data()) {
    switch (act.kind) {
      case ActivationKind::relu: v = v > 0 ? v : T(0); break;
      case ActivationKind::leaky_relu: v = v > 0 ? v : slope * v; break;
      case ActivationKind::tanh: v = std::tanh(v); break;
      case ActivationKind::sigmoid: v = T(1) / (T(1) + std::exp(-v)); break;
    }
  }
  Tape<T>* tape = &input.tape();
  const NodeId ix = input.id();
  auto rule = [tape, ix, act, slope](const Tensor<T>& gy, GradSink<T>& sink) {
    const auto& x = tape->value(ix);
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      T d = 0;
      switch (act.kind) {
        case ActivationKind::relu: d = x[i] > 0 ? T(1) : T(0); break;
        case ActivationKind::leaky_relu: d = x[i] > 0 ? T(1) : (x[i] < 0 ? slope : T(0)); break;
        case ActivationKind::tanh: {
          const T y = std::tanh(x[i]);
          d = T(1) - y * y;
          break;
        }
        case ActivationKind::sigmoid: {
          const T y = T(1) / (T(1) + std::exp(-x[i]));
          d = y * (T(1) - y);
          break;
        }
      }
      dx[i] = gy[i] * d;
    }
    sink.add(0, dx);
  };
  static constexpr const char* kOpNames[] = {"relu", "leaky_relu", "tanh", "sigmoid"};
  return tape->record(std::move(out), {ix}, std::move(rule), kOpNames[static_cast<int>(act.kind)]);
}

template <typename T>
Var<T> pad_reflect(const Var<T>& input, std::size_t width) {
  require_rank(input.shape(), 4, "pad_reflect");
  const Shape s = input.shape();
  if (width == 0) {
    return input.tape().record(input.value(), {input.id()},
                               [](const Tensor<T>& g, GradSink<T>& sink) { sink.add(0, g); }, "pad_reflect");
  }
  if (width >= s[2] || width >= s[3]) {
    throw ShapeError("pad_reflect: width " + std::to_string(width) + " must be smaller than H=" + std::to_string(s[2]) +
                     " and W=" + std::to_string(s[3]));
  }
  const std::size_t oh = s[2] + 2 * width, ow = s[3] + 2 * width;
  const auto p = static_cast<std::ptrdiff_t>(width);
  // Source flat offset (within a plane) for every padded pixel.
  std::vector<std::size_t> src(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      src[i * ow + j] = reflect_index(static_cast<std::ptrdiff_t>(i) - p, s[2]) * s[3] +
                        reflect_index(static_cast<std::ptrdiff_t>(j) - p, s[3]);
  const std::size_t planes = s[0] * s[1], in_plane = s[2] * s[3], out_plane = oh * ow;
  Tensor<T> out(Shape{s[0], s[1], oh, ow});
  const auto& x = input.value();
  for (std::size_t q = 0; q < planes; ++q)
    for (std::size_t k = 0; k < out_plane; ++k) out[q * out_plane + k] = x[q * in_plane + src[k]];

  return input.tape().record(std::move(out), {input.id()},
                             [s, src = std::move(src), planes, in_plane, out_plane](const Tensor<T>& g,
                                                                                    GradSink<T>& sink) {
                               Tensor<T> dx(s);
                               for (std::size_t q = 0; q < planes; ++q)
                                 for (std::size_t k = 0; k < out_plane; ++k)
                                   dx[q * in_plane + src[k]] += g[q * out_plane + k];
                               sink.add(0, dx);
                             },
                             "pad_reflect");
}

namespace {

template <typename T>
Tensor<T> apply_separable(const Tensor<T>& x, const RowMatrix<T>& rh, const RowMatrix<T>& rw) {
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1];
  const auto in_h = static_cast<Eigen::Index>(s[2]), in_w = static_cast<Eigen::Index>(s[3]);
  const auto out_h = rh.rows(), out_w = rw.rows();
  Tensor<T> out(Shape{s[0], s[1], static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});
  for (std::size_t q = 0; q < planes; ++q) {
    ConstMatrixMap<T> xm(x.data().data() + q * s[2] * s[3], in_h, in_w);
    MatrixMap<T> ym(out.data().data() + q * static_cast<std::size_t>(out_h * out_w), out_h, out_w);
    ym.noalias() = rh * xm * rw.transpose();
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> resize_area(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input.shape(), 4, "resize_area");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_area: target must be at least 1x1");
  if (input.dim(2) == out_h && input.dim(3) == out_w) return input;
  return apply_separable(input, resize_matrix<T>(input.dim(2), out_h), resize_matrix<T>(input.dim(3), out_w));
}

template <typename T>
Var<T> resize_area(const Var<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input.shape(), 4, "resize_area");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_area: target must be at least 1x1");
  const Shape s = input.shape();
  RowMatrix<T> rh = resize_matrix<T>(s[2], out_h);
  RowMatrix<T> rw = resize_matrix<T>(s[3], out_w);
  Tensor<T> out = (s[2] == out_h && s[3] == out_w) ? input.value() : apply_separable(input.value(), rh, rw);
  return input.tape().record(std::move(out), {input.id()},
                             [rh = std::move(rh), rw = std::move(rw)](const Tensor<T>& g, GradSink<T>& sink) {
                               RowMatrix<T> rht = rh.transpose(), rwt = rw.transpose();
                               sink.add(0, apply_separable(g, rht, rwt));
                             },
                             "resize_area");
}

#define ICONIFY_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> scale(const Var<T>&, double);                                                                \
  template Var<T> sum(const Var<T>&);                                                                          \
  template Var<T> mean(const Var<T>&);                                                                         \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> mse_loss(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> reduce_loss(const Var<T>&, const Var<T>&, LossKind);                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, std::size_t, Padding);   \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, std::size_t,   \
                                   std::size_t);                                                               \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);                          \
  template Var<T> activation(const Var<T>&, Activation);                                                       \
  template Var<T> pad_reflect(const Var<T>&, std::size_t);                                                     \
  template Var<T> resize_area(const Var<T>&, std::size_t, std::size_t);                                        \
  template Tensor<T> resize_area(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template void kernels::conv_forward(const T*, const T*, T*, const ConvGeometry&);                            \
  template void kernels::conv_backward_data_accumulate(const T*, const T*, T*, const ConvGeometry&);           \
  template void kernels::conv_backward_filter_accumulate(const T*, const T*, T*, const ConvGeometry&);

ICONIFY_INSTANTIATE_OPS(float)
ICONIFY_INSTANTIATE_OPS(double)

#undef ICONIFY_INSTANTIATE_OPS

}  // namespace iconify
