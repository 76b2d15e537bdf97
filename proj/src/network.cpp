#include "flowmix/network.hpp"

#include <algorithm>
#include <cmath>

#include "flowmix/rng.hpp"

namespace flowmix {

const char* regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::erm: return "erm";
    case Regularizer::mixup: return "mixup";
    case Regularizer::manifold_mixup: return "manifold_mixup";
    case Regularizer::flow_mixup: return "flow_mixup";
  }
  return "?";
}

Regularizer regularizer_from_name(const std::string& name) {
  if (name == "erm") return Regularizer::erm;
  if (name == "mixup") return Regularizer::mixup;
  if (name == "manifold_mixup") return Regularizer::manifold_mixup;
  if (name == "flow_mixup") return Regularizer::flow_mixup;
  throw ConfigError("unknown regularizer mode: " + name);
}

void NetworkPlan::validate() const {
  if (blocks.empty()) throw ConfigError("NetworkPlan: at least one block required");
  if (num_classes < 1) throw ConfigError("NetworkPlan: num_classes must be >= 1");
  if (input_shape.empty() || input_shape.size() > 3) {
    throw ConfigError("NetworkPlan: input shape must be {d}, {C,L} or {C,H,W}, got " + shape_str(input_shape));
  }
  for (Index d : input_shape) {
    if (d < 1) throw ConfigError("NetworkPlan: non-positive input dim in " + shape_str(input_shape));
  }
  if (!(alpha > 0.0)) throw ConfigError("NetworkPlan: alpha must be positive");

  std::vector<Index> pts = mix_points;
  std::sort(pts.begin(), pts.end());
  if (std::adjacent_find(pts.begin(), pts.end()) != pts.end()) {
    throw ConfigError("NetworkPlan: duplicate mix points");
  }
  for (Index s : pts) {
    if (s < 0 || s >= num_blocks()) {
      throw ConfigError("NetworkPlan: mix point " + std::to_string(s) + " outside states [0," +
                        std::to_string(num_blocks() - 1) + "]");
    }
  }
  switch (mode) {
    case Regularizer::erm:
      if (!mix_points.empty()) throw ConfigError("NetworkPlan: erm mode requires empty mix_points");
      break;
    case Regularizer::mixup:
      if (pts != std::vector<Index>{0}) throw ConfigError("NetworkPlan: mixup mode requires mix_points == {0}");
      break;
    case Regularizer::manifold_mixup:
      if (pts.empty()) throw ConfigError("NetworkPlan: manifold_mixup requires candidate mix points");
      if (!manifold_include_input && !pts.empty() && pts.front() == 0) {
        throw ConfigError("NetworkPlan: state 0 is not a manifold_mixup candidate unless manifold_include_input");
      }
      break;
    case Regularizer::flow_mixup:
      if (pts.empty()) throw ConfigError("NetworkPlan: flow_mixup requires mix points");
      break;
  }
}

namespace {

Shape block_output_shape(const Shape& in, const BlockSpec& b) {
  if (in.size() == 1) return {b.out};
  const Index pad = b.kernel / 2;
  if (in.size() == 2) {
    const Index lout = (in[1] + 2 * pad - b.kernel) / b.stride + 1;
    return {b.out, lout};
  }
  const Index hout = (in[1] + 2 * pad - b.kernel) / b.stride + 1;
  const Index wout = (in[2] + 2 * pad - b.kernel) / b.stride + 1;
  return {b.out, hout, wout};
}

double glorot_limit(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ArrayXd uniform_init(Index n, double limit, std::mt19937_64& rng) {
  ArrayXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  return v;
}

}  // namespace

Network Network::build(const NetworkPlan& plan, std::mt19937_64& init_rng) {
  plan.validate();
  Network net;
  net.plan_ = plan;
  net.conv_path_ = plan.input_shape.size() >= 2;

  Shape feat = plan.input_shape;
  net.state_shapes_.push_back(feat);
  for (Index i = 0; i < plan.num_blocks(); ++i) {
    const BlockSpec& b = plan.blocks[static_cast<std::size_t>(i)];
    const std::string base = "block" + std::to_string(i);
    if (feat.size() == 1) {
      const Index din = feat[0];
      net.block_kernel_param_.push_back(static_cast<Index>(net.params_.size()));
      net.params_.emplace_back(base + ".weight", Shape{din, b.out},
                               uniform_init(din * b.out, glorot_limit(din, b.out), init_rng));
      net.block_bias_param_.push_back(static_cast<Index>(net.params_.size()));
      net.params_.emplace_back(base + ".bias", Shape{b.out});
    } else if (feat.size() == 2) {
      const Index cin = feat[0];
      net.block_kernel_param_.push_back(static_cast<Index>(net.params_.size()));
      net.params_.emplace_back(base + ".kernel", Shape{b.out, cin, b.kernel},
                               uniform_init(b.out * cin * b.kernel, glorot_limit(cin * b.kernel, b.out * b.kernel),
                                            init_rng));
      net.block_bias_param_.push_back(-1);
    } else {
      const Index cin = feat[0];
      const Index k2 = b.kernel * b.kernel;
      net.block_kernel_param_.push_back(static_cast<Index>(net.params_.size()));
      net.params_.emplace_back(base + ".kernel", Shape{b.out, cin, b.kernel, b.kernel},
                               uniform_init(b.out * cin * k2, glorot_limit(cin * k2, b.out * k2), init_rng));
      net.block_bias_param_.push_back(-1);
    }
    feat = block_output_shape(feat, b);
    for (Index d : feat) {
      if (d < 1) {
        throw ConfigError("NetworkPlan: block " + std::to_string(i) + " shrinks features to " + shape_str(feat));
      }
    }
    net.state_shapes_.push_back(feat);
  }

  // Channels after global pooling on the conv paths, plain width otherwise.
  const Index head_in = feat[0];
  net.head_weight_param_ = static_cast<Index>(net.params_.size());
  net.params_.emplace_back("head.weight", Shape{head_in, plan.num_classes},
                           uniform_init(head_in * plan.num_classes, glorot_limit(head_in, plan.num_classes), init_rng));
  net.head_bias_param_ = static_cast<Index>(net.params_.size());
  net.params_.emplace_back("head.bias", Shape{plan.num_classes});
  return net;
}

void Network::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

void Network::load_params(const std::vector<Parameter>& source) {
  if (source.size() != params_.size()) {
    throw ConfigError("load_params: expected " + std::to_string(params_.size()) + " parameters, got " +
                      std::to_string(source.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (source[i].name != params_[i].name || source[i].shape != params_[i].shape) {
      throw ConfigError("load_params: parameter mismatch at " + params_[i].name + " " + shape_str(params_[i].shape) +
                        " vs " + source[i].name + " " + shape_str(source[i].shape));
    }
    params_[i].value = source[i].value;
  }
}

Shape Network::state_feature_shape(Index state) const {
  if (state < 0 || state >= static_cast<Index>(state_shapes_.size())) {
    throw ConfigError("state_feature_shape: state " + std::to_string(state) + " out of range");
  }
  return state_shapes_[static_cast<std::size_t>(state)];
}

Var Network::block_forward(Tape& tape, Index block, Var h) {
  const BlockSpec& b = plan_.blocks[static_cast<std::size_t>(block)];
  auto& params = params_;
  const Index kp = block_kernel_param_[static_cast<std::size_t>(block)];
  const Shape& feat = state_shapes_[static_cast<std::size_t>(block)];
  Var pre;
  if (feat.size() == 1) {
    const Index bp = block_bias_param_[static_cast<std::size_t>(block)];
    pre = dense_forward(tape, h, tape.param(params[static_cast<std::size_t>(kp)]),
                        tape.param(params[static_cast<std::size_t>(bp)]));
  } else if (feat.size() == 2) {
    pre = conv1d_forward(tape, h, tape.param(params[static_cast<std::size_t>(kp)]), b.stride);
  } else {
    pre = conv2d_forward(tape, h, tape.param(params[static_cast<std::size_t>(kp)]), b.stride);
  }
  return relu(tape, pre);
}

Var Network::head_forward(Tape& tape, Var h) {
  auto& params = params_;
  Var pooled = conv_path_ ? global_avg_pool(tape, h) : h;
  Var logits = dense_forward(tape, pooled, tape.param(params[static_cast<std::size_t>(head_weight_param_)]),
                             tape.param(params[static_cast<std::size_t>(head_bias_param_)]));
  return sigmoid(tape, logits);
}

Network::TrainForward Network::forward_with_mixes(Tape& tape, const FlowTensor& x, const LabelMatrix& y,
                                                  const MixPlan& mixes) {
  if (x.rank() != static_cast<Index>(plan_.input_shape.size()) + 2) {
    throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match plan input " +
                         shape_str(plan_.input_shape));
  }
  if (y.rows() != x.batch() || y.cols() != plan_.num_classes) {
    throw DimensionError("forward: labels " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                         " do not match batch " + std::to_string(x.batch()) + " / classes " +
                         std::to_string(plan_.num_classes));
  }
  if (mixes.states.size() != mixes.specs.size()) throw ConfigError("MixPlan: states/specs length mismatch");
  for (std::size_t i = 1; i < mixes.states.size(); ++i) {
    if (mixes.states[i] <= mixes.states[i - 1]) throw ConfigError("MixPlan: states must be strictly increasing");
  }

  TrainForward out;
  Var h = tape.input(FlowTensor(x.shape(), x.array()), "batch");
  out.labels = FlowLabels(y);
  out.applied = mixes;

  std::size_t next_mix = 0;
  for (Index state = 0; state < plan_.num_blocks(); ++state) {
    if (next_mix < mixes.states.size() && mixes.states[next_mix] == state) {
      MixOut mixed = mixing_forward(tape, h, out.labels, mixes.specs[next_mix]);
      h = mixed.features;
      out.labels = std::move(mixed.labels);
      ++next_mix;
    }
    out.trace.flow_sizes.push_back(tape.value(h).flow());
    out.trace.state_labels.push_back(out.labels);
    h = block_forward(tape, state, h);
  }
  if (next_mix != mixes.states.size()) throw ConfigError("MixPlan: unused mix state");
  out.trace.flow_sizes.push_back(tape.value(h).flow());

  out.probs = head_forward(tape, h);
  const FlowTensor& probs = tape.value(out.probs);
  const Index flow = probs.flow();
  const Index batch = probs.batch();
  for (Index f = 0; f < flow; ++f) {
    LabelMatrix slot(batch, plan_.num_classes);
    for (Index b = 0; b < batch; ++b) {
      const double* src = probs.data() + (b * flow + f) * plan_.num_classes;
      for (Index c = 0; c < plan_.num_classes; ++c) slot(b, c) = src[c];
    }
    out.trace.final_probs.push_back(std::move(slot));
  }
  return out;
}

Network::TrainForward Network::forward_train(Tape& tape, const FlowTensor& x, const LabelMatrix& y,
                                             std::mt19937_64& mix_rng) {
  if (x.flow() != 1) {
    throw DimensionError("forward_train: a fresh batch must have flow size 1, got " + std::to_string(x.flow()));
  }
  if (plan_.mode == Regularizer::manifold_mixup) return manifold_mixup_forward(tape, x, y, mix_rng);

  MixPlan mixes;
  if (plan_.mode != Regularizer::erm) {
    std::vector<Index> pts = plan_.mix_points;
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool op = false;
      if (plan_.mode == Regularizer::flow_mixup) {
        const bool final_point = (i + 1 == pts.size());
        op = final_point ? plan_.op_flag : true;
      }
      mixes.states.push_back(pts[i]);
      mixes.specs.push_back(sample_mix_spec(plan_.alpha, op, x.batch(), mix_rng));
    }
  }
  return forward_with_mixes(tape, x, y, mixes);
}

Network::TrainForward Network::manifold_mixup_forward(Tape& tape, const FlowTensor& x, const LabelMatrix& y,
                                                      std::mt19937_64& mix_rng) {
  if (plan_.mode != Regularizer::manifold_mixup) {
    throw ConfigError("manifold_mixup_forward requires mode manifold_mixup");
  }
  std::vector<Index> pts = plan_.mix_points;
  std::sort(pts.begin(), pts.end());
  const auto pick = static_cast<std::size_t>(mix_rng() % pts.size());
  MixPlan mixes;
  mixes.states.push_back(pts[pick]);
  mixes.specs.push_back(sample_mix_spec(plan_.alpha, /*op_forward=*/false, x.batch(), mix_rng));
  return forward_with_mixes(tape, x, y, mixes);
}

LabelMatrix Network::forward_eval(const FlowTensor& x, std::vector<MatRM>* state_features) {
  Tape tape;
  Var h = tape.input(FlowTensor(x.shape(), x.array()), "batch");
  const Index batch = x.batch();
  for (Index state = 0; state < plan_.num_blocks(); ++state) {
    h = block_forward(tape, state, h);
    if (state_features != nullptr) {
      const FlowTensor& v = tape.value(h);
      state_features->push_back(v.as_matrix(batch, v.numel() / batch));
    }
  }
  Var probs = head_forward(tape, h);
  const FlowTensor& pv = tape.value(probs);
  return LabelMatrix(pv.as_matrix(batch, plan_.num_classes));
}

}  // namespace flowmix
