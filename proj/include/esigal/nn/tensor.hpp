#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace esigal::nn {

using Index = Eigen::Index;

/// Per-sample shape (maps x height x width).
struct Shape {
  Index maps = 0;
  Index height = 0;
  Index width = 0;

  Index size() const { return maps * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const {
    return std::to_string(maps) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

/// Dense NCHW batch. Each sample is contiguous, each map plane is row-major.
template <typename Scalar>
struct Tensor4 {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMajorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstRowMajorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Index batch = 0;
  Shape shape;
  Array data;

  Tensor4() = default;
  Tensor4(Index n, Shape s) : batch(n), shape(s), data(Array::Zero(n * s.size())) {}

  void resize(Index n, Shape s) {
    batch = n;
    shape = s;
    if (data.size() != n * s.size()) data.resize(n * s.size());
  }
  void set_zero() { data.setZero(); }

  Index sample_size() const { return shape.size(); }
  Scalar* sample(Index n) { return data.data() + n * shape.size(); }
  const Scalar* sample(Index n) const { return data.data() + n * shape.size(); }
  Scalar* plane(Index n, Index c) { return sample(n) + c * shape.height * shape.width; }
  const Scalar* plane(Index n, Index c) const { return sample(n) + c * shape.height * shape.width; }

  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data[((n * shape.maps + c) * shape.height + h) * shape.width + w];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data[((n * shape.maps + c) * shape.height + h) * shape.width + w];
  }

  /// Sample n viewed as maps x (height*width).
  RowMajorMap sample_matrix(Index n) { return {sample(n), shape.maps, shape.height * shape.width}; }
  ConstRowMajorMap sample_matrix(Index n) const { return {sample(n), shape.maps, shape.height * shape.width}; }
};

}  // namespace esigal::nn
