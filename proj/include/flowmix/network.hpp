#pragma once

#include <optional>
#include <random>
#include <vector>

#include "flowmix/mixing.hpp"
#include "flowmix/ops.hpp"

namespace flowmix {

enum class Regularizer { erm, mixup, manifold_mixup, flow_mixup };

const char* regularizer_name(Regularizer r);
Regularizer regularizer_from_name(const std::string& name);

/// One block of the sequential classifier: conv (1-D or 2-D, kernel size k,
/// stride s) or dense, each followed by relu. The block kind follows the
/// input shape: {C,L} -> conv1d, {C,H,W} -> conv2d, {d} -> dense.
struct BlockSpec {
  Index out = 8;     // output channels (conv) or units (dense)
  Index kernel = 3;  // ignored for dense blocks
  Index stride = 1;  // ignored for dense blocks
};

/// Hidden states are numbered by block input: state 0 is the raw input
/// (input of block 0), state i the input of block i. Mixing modules attach
/// at states listed in mix_points.
struct NetworkPlan {
  std::vector<BlockSpec> blocks;
  Shape input_shape;  // per-sample feature dims: {d}, {C,L} or {C,H,W}
  Index num_classes = 0;
  Regularizer mode = Regularizer::erm;
  std::vector<Index> mix_points;
  double alpha = 3.0;
  /// flow_mixup only: whether the final module keeps the optional forward
  /// path of original features. Non-final modules always keep it.
  bool op_flag = true;
  /// manifold_mixup only: whether state 0 may be drawn as a candidate.
  bool manifold_include_input = false;

  Index num_blocks() const { return static_cast<Index>(blocks.size()); }
  void validate() const;
};

/// Flow bookkeeping of one training forward pass.
struct ForwardTrace {
  /// Flow size at each block input (after any mixing there) plus the head
  /// input; length num_blocks + 1.
  std::vector<Index> flow_sizes;
  /// Label slots at each block input, aligned with flow_sizes[0..num_blocks-1].
  std::vector<FlowLabels> state_labels;
  /// Final sigmoid outputs, one [B x num_classes] matrix per flow slot.
  std::vector<LabelMatrix> final_probs;
};

/// States and specs to apply in one forward pass, aligned by position.
struct MixPlan {
  std::vector<Index> states;
  std::vector<MixSpec> specs;
};

class Network {
 public:
  static Network build(const NetworkPlan& plan, std::mt19937_64& init_rng);

  const NetworkPlan& plan() const { return plan_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  void zero_grads();
  /// Replaces parameter values from a checkpoint; names and shapes must match.
  void load_params(const std::vector<Parameter>& source);

  struct TrainForward {
    Var probs;  // [B, F_out, num_classes] on the tape
    FlowLabels labels;
    ForwardTrace trace;
    MixPlan applied;  // the sampled decisions, for logging and replay
  };

  /// Deterministic core: applies the given mixes at the given states.
  TrainForward forward_with_mixes(Tape& tape, const FlowTensor& x, const LabelMatrix& y, const MixPlan& mixes);

  /// Samples the mixing decisions for the plan's regularizer mode and runs
  /// the training forward pass. A fresh batch must have flow size 1.
  TrainForward forward_train(Tape& tape, const FlowTensor& x, const LabelMatrix& y, std::mt19937_64& mix_rng);

  /// Manifold Mixup: one candidate state chosen uniformly per call, applied
  /// degraded-style so the flow size stays 1.
  TrainForward manifold_mixup_forward(Tape& tape, const FlowTensor& x, const LabelMatrix& y,
                                      std::mt19937_64& mix_rng);

  /// Inference pass: mixing modules are inert, flow size stays 1. Returns
  /// sigmoid probabilities [B x num_classes]. Optionally captures each block
  /// output, flattened to [B x V_i], for the feature-distribution probe.
  LabelMatrix forward_eval(const FlowTensor& x, std::vector<MatRM>* state_features = nullptr);

  /// Shape of the feature dims entering block `state` (flow axis excluded).
  Shape state_feature_shape(Index state) const;

 private:
  Network() = default;
  Var block_forward(Tape& tape, Index block, Var h);
  Var head_forward(Tape& tape, Var h);

  NetworkPlan plan_;
  std::vector<Parameter> params_;
  std::vector<Shape> state_shapes_;        // feature dims per state 0..num_blocks
  std::vector<Index> block_kernel_param_;  // main parameter per block
  std::vector<Index> block_bias_param_;    // dense blocks only, else -1
  Index head_weight_param_ = -1;
  Index head_bias_param_ = -1;
  bool conv_path_ = false;
};

}  // namespace flowmix
