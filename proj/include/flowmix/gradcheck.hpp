#pragma once

#include <functional>

#include "flowmix/network.hpp"
#include "flowmix/training.hpp"

namespace flowmix {

struct GradCheckReport {
  struct Entry {
    std::string param;
    double max_rel_err = 0.0;
  };
  std::vector<Entry> per_param;
  double max_rel_err = 0.0;
};

/// Central-finite-difference check of analytic gradients. `loss` must be a
/// deterministic function of the parameter values; `epsilon` is the
/// perturbation step. Relative error uses |a - f| / max(|a| + |f|, 1e-8).
GradCheckReport finite_diff_check(std::vector<Parameter*> params, const std::function<double(bool with_grad)>& loss,
                                  double epsilon = 1e-5);

/// Convenience harness over a network: composes forward_with_mixes (frozen
/// specs, so mixing is deterministic) with the weighted BCE loss.
GradCheckReport finite_diff_check(Network& net, const FlowTensor& x, const LabelMatrix& y, const MixPlan& mixes,
                                  const ClassWeights& weights, double epsilon = 1e-5);

}  // namespace flowmix
