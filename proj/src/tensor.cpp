#include "hamm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hamm {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_))
    throw std::invalid_argument("value count does not match shape " + to_string(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size())
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::batch_item(int n) const {
  if (rank() != 4) throw std::invalid_argument("batch_item expects NCHW");
  const std::size_t per = data_.size() / static_cast<std::size_t>(shape_[0]);
  Tensor out({1, shape_[1], shape_[2], shape_[3]});
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(per * n), per, out.data_.begin());
  return out;
}

void Tensor::set_batch_item(int n, const Tensor& item) {
  const std::size_t per = data_.size() / static_cast<std::size_t>(shape_[0]);
  if (item.size() != per) throw std::invalid_argument("set_batch_item: size mismatch");
  std::copy(item.data_.begin(), item.data_.end(), data_.begin() + static_cast<std::ptrdiff_t>(per * n));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no parts");
  Shape shape = parts[0].shape();
  int total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != 4 || t.dim(1) != shape[1] || t.dim(2) != shape[2] || t.dim(3) != shape[3])
      throw std::invalid_argument("concat_batch: incompatible parts");
    total += t.dim(0);
  }
  shape[0] = total;
  Tensor out(shape);
  double* dst = out.data();
  for (const Tensor& t : parts) dst = std::copy(t.data(), t.data() + t.size(), dst);
  return out;
}

}  // namespace hamm
