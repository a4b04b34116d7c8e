#pragma once

#include <Eigen/Core>

#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cramnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index volume(const Shape& shape) {
  Index v = 1;
  for (Index e : shape) v *= e;
  return v;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense tensor of rank 1..4 with contiguous row-major storage.
/// Images are laid out height x width x channels; batches prepend a
/// leading batch extent. A default-constructed tensor is empty and acts
/// as a "no value" sentinel.
template <typename Scalar>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = ArrayX<Scalar>::Zero(volume(shape_));
  }

  TensorT(Shape shape, ArrayX<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (volume(shape_) != data_.size())
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT constant(Shape shape, Scalar value) {
    check_shape(shape);
    ArrayX<Scalar> d = ArrayX<Scalar>::Constant(volume(shape), value);
    return TensorT(std::move(shape), std::move(d));
  }

  static TensorT of(Shape shape, std::initializer_list<Scalar> values) {
    ArrayX<Scalar> d(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) d[i++] = v;
    return TensorT(std::move(shape), std::move(d));
  }

  bool empty() const { return shape_.empty(); }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  const Shape& shape() const { return shape_; }
  Index extent(Index dim) const { return shape_.at(static_cast<std::size_t>(dim)); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  ArrayX<Scalar>& flat() { return data_; }
  const ArrayX<Scalar>& flat() const { return data_; }

  Scalar& operator()(Index i) { return data_[i]; }
  Scalar operator()(Index i) const { return data_[i]; }
  Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& operator()(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar& operator()(Index i, Index j, Index k, Index l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  Scalar operator()(Index i, Index j, Index k, Index l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape; volumes must agree.
  TensorT reshaped(Shape new_shape) const {
    check_shape(new_shape);
    if (volume(new_shape) != data_.size())
      throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(new_shape));
    return TensorT(std::move(new_shape), data_);
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4)
      throw std::invalid_argument("tensor rank must be 1..4, got shape " + to_string(shape));
    for (Index e : shape)
      if (e < 1) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
  }

  Shape shape_;
  ArrayX<Scalar> data_;
};

using Tensor = TensorT<double>;

/// Exact (bitwise) equality of shape and contents.
template <typename Scalar>
bool bit_equal(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace cramnet
