#include "iconify/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace iconify {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(shape));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " holds " + std::to_string(element_count(shape_)) +
                     " elements but " + std::to_string(data_.size()) + " values were given");
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  }
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::sample(std::size_t n) const {
  require_rank(shape_, 4, "sample");
  if (n >= shape_[0]) throw ShapeError("sample: index " + std::to_string(n) + " out of batch " + to_string(shape_));
  const std::size_t stride = shape_[1] * shape_[2] * shape_[3];
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                     data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
  return Tensor(Shape{1, shape_[1], shape_[2], shape_[3]}, std::move(out));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape& first = items.front().shape();
  require_rank(first, 4, "stack_batch");
  std::size_t batch = 0;
  std::vector<T> out;
  for (const auto& item : items) {
    const Shape& s = item.shape();
    require_rank(s, 4, "stack_batch");
    if (s[1] != first[1] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("stack_batch: item " + to_string(s) + " does not match " + to_string(first));
    }
    batch += s[0];
    out.insert(out.end(), item.data().begin(), item.data().end());
  }
  return Tensor<T>(Shape{batch, first[1], first[2], first[3]}, std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);

}  // namespace iconify
