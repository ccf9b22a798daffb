#pragma once

#include <array>
#include <cassert>
#include <string>

#include <Eigen/Core>

namespace spdnn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense (batch, channels, height, width) array, row-major.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  Tensor(Index batch, Index channels, Index height, Index width)
      : shape_{batch, channels, height, width},
        data_(Storage::Zero(batch * channels * height * width)) {}

  static Tensor constant(Index batch, Index channels, Index height, Index width,
                         Scalar value) {
    Tensor t(batch, channels, height, width);
    t.data_.setConstant(value);
    return t;
  }

  Index batch() const { return shape_[0]; }
  Index channels() const { return shape_[1]; }
  Index height() const { return shape_[2]; }
  Index width() const { return shape_[3]; }
  Index plane_size() const { return shape_[2] * shape_[3]; }
  Index sample_size() const { return shape_[1] * shape_[2] * shape_[3]; }
  Index size() const { return data_.size(); }
  const std::array<Index, 4>& shape() const { return shape_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Storage& values() { return data_; }
  const Storage& values() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  /// Sample n viewed as a (channels x height*width) matrix.
  RowMap sample(Index n) {
    return RowMap(data_.data() + n * sample_size(), shape_[1], plane_size());
  }
  ConstRowMap sample(Index n) const {
    return ConstRowMap(data_.data() + n * sample_size(), shape_[1], plane_size());
  }

  /// Whole batch viewed as a (batch x channels*height*width) matrix.
  RowMap rows() { return RowMap(data_.data(), shape_[0], sample_size()); }
  ConstRowMap rows() const { return ConstRowMap(data_.data(), shape_[0], sample_size()); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_[0], shape_[1], shape_[2], shape_[3]);
    out.values() = data_.template cast<Other>();
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," +
           std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + ")";
  }

 private:
  std::array<Index, 4> shape_{0, 0, 0, 0};
  Storage data_;
};

}  // namespace spdnn
