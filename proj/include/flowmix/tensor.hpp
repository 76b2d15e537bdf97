#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "flowmix/error.hpp"

namespace flowmix {

using Index = std::int64_t;
using Shape = std::vector<Index>;

using ArrayXd = Eigen::ArrayXd;
/// All tensors are flattened row-major, so a contiguous block maps onto a
/// row-major Eigen matrix without copying.
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatRM>;
using ConstMapMat = Eigen::Map<const MatRM>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense 64-bit tensor. For activations, axis 0 is the batch and axis 1 the
/// flow dimension; remaining axes are feature dims (channels, H x W or L).
/// Parameters reuse the container with their own axis meaning.
class FlowTensor {
 public:
  FlowTensor() = default;
  explicit FlowTensor(Shape shape);  // zero-filled
  FlowTensor(Shape shape, ArrayXd data);

  static FlowTensor zeros(Shape shape) { return FlowTensor(std::move(shape)); }
  static FlowTensor constant(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_.size(); }
  Index dim(Index axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  /// Batch / flow accessors assume the activation convention (rank >= 2).
  Index batch() const;
  Index flow() const;
  /// Product of the feature axes (everything past batch and flow).
  Index feature_numel() const;

  ArrayXd& array() { return data_; }
  const ArrayXd& array() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  MapMat as_matrix(Index rows, Index cols);
  ConstMapMat as_matrix(Index rows, Index cols) const;

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  ArrayXd data_;
};

/// Throws NumericError naming `who` if the tensor holds NaN or Inf.
void require_finite(const FlowTensor& t, const char* who);

}  // namespace flowmix
