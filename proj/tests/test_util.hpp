#pragma once

#include <random>

#include "flowmix/mixing.hpp"
#include "flowmix/tensor.hpp"

namespace flowmix::testutil {

inline FlowTensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  FlowTensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.array()[i] = normal(rng);
  return t;
}

inline LabelMatrix random_labels(Index rows, Index cols, std::mt19937_64& rng) {
  LabelMatrix y(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) y(i, j) = (rng() & 1) ? 1.0 : 0.0;
  }
  return y;
}

inline std::vector<Index> identity_perm(Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  return p;
}

// Permutes the flow slots of an activation tensor.
inline FlowTensor permute_flow(const FlowTensor& t, const std::vector<Index>& perm) {
  FlowTensor out(t.shape());
  const Index batch = t.batch(), flow = t.flow(), width = t.feature_numel();
  for (Index b = 0; b < batch; ++b) {
    for (Index f = 0; f < flow; ++f) {
      const double* src = t.data() + (b * flow + perm[static_cast<std::size_t>(f)]) * width;
      double* dst = out.data() + (b * flow + f) * width;
      std::copy(src, src + width, dst);
    }
  }
  return out;
}

}  // namespace flowmix::testutil
