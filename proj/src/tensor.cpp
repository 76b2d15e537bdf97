#include "flowmix/tensor.hpp"

#include <sstream>

namespace flowmix {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

FlowTensor::FlowTensor(Shape shape) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d < 0) throw DimensionError("FlowTensor: negative axis in shape " + shape_str(shape_));
  }
  data_ = ArrayXd::Zero(flowmix::numel(shape_));
}

FlowTensor::FlowTensor(Shape shape, ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (flowmix::numel(shape_) != data_.size()) {
    throw DimensionError("FlowTensor: shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
  }
}

FlowTensor FlowTensor::constant(Shape shape, double value) {
  FlowTensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Index FlowTensor::batch() const {
  if (rank() < 2) throw DimensionError("FlowTensor: batch axis requires rank >= 2, got " + shape_str(shape_));
  return shape_[0];
}

Index FlowTensor::flow() const {
  if (rank() < 2) throw DimensionError("FlowTensor: flow axis requires rank >= 2, got " + shape_str(shape_));
  return shape_[1];
}

Index FlowTensor::feature_numel() const {
  if (rank() < 2) throw DimensionError("FlowTensor: feature axes require rank >= 2, got " + shape_str(shape_));
  Index n = 1;
  for (std::size_t i = 2; i < shape_.size(); ++i) n *= shape_[i];
  return n;
}

MapMat FlowTensor::as_matrix(Index rows, Index cols) {
  if (rows * cols != numel()) {
    throw DimensionError("FlowTensor: cannot view " + shape_str(shape_) + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return MapMat(data_.data(), rows, cols);
}

ConstMapMat FlowTensor::as_matrix(Index rows, Index cols) const {
  if (rows * cols != numel()) {
    throw DimensionError("FlowTensor: cannot view " + shape_str(shape_) + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return ConstMapMat(data_.data(), rows, cols);
}

void require_finite(const FlowTensor& t, const char* who) {
  if (!t.all_finite()) throw NumericError(std::string(who) + ": non-finite values in tensor " + shape_str(t.shape()));
}

}  // namespace flowmix
