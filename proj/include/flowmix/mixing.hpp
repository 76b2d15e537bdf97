#pragma once

#include <random>
#include <utility>
#include <vector>

#include "flowmix/tape.hpp"

namespace flowmix {

/// Per-sample label rows; row b belongs to batch element b.
using LabelMatrix = MatRM;

/// One label matrix per flow slot, aligned with a FlowTensor's flow axis.
struct FlowLabels {
  std::vector<LabelMatrix> slots;

  FlowLabels() = default;
  explicit FlowLabels(LabelMatrix single) { slots.push_back(std::move(single)); }

  Index flow() const { return static_cast<Index>(slots.size()); }
  Index batch() const { return slots.empty() ? 0 : static_cast<Index>(slots.front().rows()); }
  Index num_classes() const { return slots.empty() ? 0 : static_cast<Index>(slots.front().cols()); }
};

/// The batch-level mixing decision: coefficient p drawn from Beta(alpha,
/// alpha), one shared shuffle permutation, and whether the original features
/// continue forward. One (p, permutation) pair per batch per module; features
/// and labels are transformed with the identical pair.
struct MixSpec {
  double alpha = 3.0;
  bool op_forward = true;
  double p = 1.0;
  std::vector<Index> permutation;

  void validate(Index batch_size) const;
  std::vector<Index> inverse_permutation() const;
};

/// Beta(alpha, alpha) draw in [0,1]. alpha <= 0 is a configuration error.
double sample_p(double alpha, std::mt19937_64& rng);

MixSpec sample_mix_spec(double alpha, bool op_forward, Index batch_size, std::mt19937_64& rng);

/// Standard Mixup of one flow slot with itself under an index shuffle:
/// out[i] = p*in[i] + (1-p)*in[perm(i)], identically for labels.
std::pair<FlowTensor, LabelMatrix> mix_pair(const FlowTensor& z_slot, const LabelMatrix& y, const MixSpec& spec);

/// Forward values of the Mixing module. op_forward doubles the flow size and
/// keeps slots 0..F-1 bit-identical to the input; otherwise every slot is
/// replaced by its mixed copy (plain Mixup at this state).
FlowTensor mixing_apply(const FlowTensor& z, const MixSpec& spec);
FlowLabels mixing_apply_labels(const FlowLabels& labels, const MixSpec& spec);

/// Transpose of the (fixed p, fixed permutation) forward map: the original
/// branch passes through, the mixed branch routes back through the shuffle:
/// contribution to row i is p*grad_m[i] + (1-p)*grad_m[perm^-1(i)]. This is
/// the exact reverse-mode rule the tape uses; the flow-slot mean in the loss
/// supplies the branch averaging.
FlowTensor mixing_transpose(const FlowTensor& grad_out, const MixSpec& spec, Index input_flow);

/// The module-boundary backward rule on raw branch gradients: with the
/// optional forward path, grad = (grad' + routed grad_m) / 2 so gradient
/// magnitudes survive the flow-size doubling; degraded mode returns the
/// routed mixed gradient alone. Equals mixing_transpose scaled by 1/2 when
/// op_forward is set.
FlowTensor mixing_backward(const FlowTensor& grad_out, const MixSpec& spec, Index input_flow);

/// Tape-recorded application; the label slots move in lockstep with the
/// feature slots but stay outside the differentiation path.
struct MixOut {
  Var features;
  FlowLabels labels;
};
MixOut mixing_forward(Tape& tape, Var z, const FlowLabels& labels, const MixSpec& spec);

}  // namespace flowmix
