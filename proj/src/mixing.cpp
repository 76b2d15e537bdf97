#include "flowmix/mixing.hpp"

#include <cstring>

#include "flowmix/rng.hpp"

namespace flowmix {

void MixSpec::validate(Index batch_size) const {
  if (!(alpha > 0.0)) throw ConfigError("MixSpec: alpha must be positive, got " + std::to_string(alpha));
  if (!(p >= 0.0 && p <= 1.0)) throw NumericError("MixSpec: p outside [0,1]: " + std::to_string(p));
  if (static_cast<Index>(permutation.size()) != batch_size) {
    throw DimensionError("MixSpec: permutation length " + std::to_string(permutation.size()) +
                         " does not match batch size " + std::to_string(batch_size));
  }
  std::vector<bool> seen(static_cast<std::size_t>(batch_size), false);
  for (Index v : permutation) {
    if (v < 0 || v >= batch_size || seen[static_cast<std::size_t>(v)]) {
      throw DimensionError("MixSpec: permutation is not a bijection on the batch");
    }
    seen[static_cast<std::size_t>(v)] = true;
  }
}

std::vector<Index> MixSpec::inverse_permutation() const {
  std::vector<Index> inv(permutation.size());
  for (std::size_t i = 0; i < permutation.size(); ++i) inv[static_cast<std::size_t>(permutation[i])] = static_cast<Index>(i);
  return inv;
}

double sample_p(double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ConfigError("sample_p: alpha must be positive, got " + std::to_string(alpha));
  // Beta(a,a) as X/(X+Y) with X,Y ~ Gamma(a,1).
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  const double s = x + y;
  if (s <= 0.0) return 0.5;  // both underflowed; the symmetric midpoint
  double p = x / s;
  if (p < 0.0) p = 0.0;
  if (p > 1.0) p = 1.0;
  return p;
}

MixSpec sample_mix_spec(double alpha, bool op_forward, Index batch_size, std::mt19937_64& rng) {
  MixSpec spec;
  spec.alpha = alpha;
  spec.op_forward = op_forward;
  spec.p = sample_p(alpha, rng);
  spec.permutation = random_permutation(batch_size, rng);
  return spec;
}

namespace {

// out_row = p*in[i] + (1-p)*in[perm(i)], over a [B x V] row-major block.
void mix_rows(const double* in, double* out, Index batch, Index width, double p, const std::vector<Index>& perm) {
  const double q = 1.0 - p;
  for (Index i = 0; i < batch; ++i) {
    const double* a = in + i * width;
    const double* b = in + perm[static_cast<std::size_t>(i)] * width;
    double* o = out + i * width;
    for (Index v = 0; v < width; ++v) o[v] = p * a[v] + q * b[v];
  }
}

}  // namespace

std::pair<FlowTensor, LabelMatrix> mix_pair(const FlowTensor& z_slot, const LabelMatrix& y, const MixSpec& spec) {
  const Index batch = z_slot.batch();
  spec.validate(batch);
  if (y.rows() != batch) {
    throw DimensionError("mix_pair: label rows " + std::to_string(y.rows()) + " do not match batch " +
                         std::to_string(batch));
  }
  const Index width = z_slot.numel() / batch;
  FlowTensor z_mixed(z_slot.shape());
  mix_rows(z_slot.data(), z_mixed.data(), batch, width, spec.p, spec.permutation);
  LabelMatrix y_mixed(y.rows(), y.cols());
  mix_rows(y.data(), y_mixed.data(), batch, y.cols(), spec.p, spec.permutation);
  return {std::move(z_mixed), std::move(y_mixed)};
}

FlowTensor mixing_apply(const FlowTensor& z, const MixSpec& spec) {
  require_finite(z, "mixing_apply");
  const Index batch = z.batch();
  const Index flow = z.flow();
  spec.validate(batch);
  const Index width = z.feature_numel();

  Shape out_shape = z.shape();
  out_shape[1] = spec.op_forward ? 2 * flow : flow;
  FlowTensor out(out_shape);
  const Index out_flow = out_shape[1];
  const double q = 1.0 - spec.p;

  for (Index b = 0; b < batch; ++b) {
    const double* in_b = z.data() + b * flow * width;
    double* out_b = out.data() + b * out_flow * width;
    if (spec.op_forward) {
      // Slots 0..F-1 are the originals, bit for bit.
      std::memcpy(out_b, in_b, static_cast<std::size_t>(flow * width) * sizeof(double));
    }
    const Index mixed_base = spec.op_forward ? flow : 0;
    const double* in_pb = z.data() + spec.permutation[static_cast<std::size_t>(b)] * flow * width;
    for (Index f = 0; f < flow; ++f) {
      const double* a = in_b + f * width;
      const double* c = in_pb + f * width;
      double* o = out_b + (mixed_base + f) * width;
      for (Index v = 0; v < width; ++v) o[v] = spec.p * a[v] + q * c[v];
    }
  }
  return out;
}

FlowLabels mixing_apply_labels(const FlowLabels& labels, const MixSpec& spec) {
  const Index flow = labels.flow();
  const Index batch = labels.batch();
  spec.validate(batch);
  FlowLabels out;
  out.slots.reserve(static_cast<std::size_t>(spec.op_forward ? 2 * flow : flow));
  if (spec.op_forward) {
    for (const auto& slot : labels.slots) out.slots.push_back(slot);
  }
  for (const auto& slot : labels.slots) {
    LabelMatrix mixed(slot.rows(), slot.cols());
    mix_rows(slot.data(), mixed.data(), batch, slot.cols(), spec.p, spec.permutation);
    out.slots.push_back(std::move(mixed));
  }
  return out;
}

FlowTensor mixing_transpose(const FlowTensor& grad_out, const MixSpec& spec, Index input_flow) {
  const Index batch = grad_out.batch();
  spec.validate(batch);
  const Index out_flow = grad_out.flow();
  const Index expected = spec.op_forward ? 2 * input_flow : input_flow;
  if (out_flow != expected) {
    throw StateError("mixing backward: gradient flow size " + std::to_string(out_flow) +
                     " does not match the recorded forward (expected " + std::to_string(expected) + ")");
  }
  const Index width = grad_out.feature_numel();
  const std::vector<Index> inv = spec.inverse_permutation();
  const double p = spec.p;
  const double q = 1.0 - p;

  Shape in_shape = grad_out.shape();
  in_shape[1] = input_flow;
  FlowTensor grad_in(in_shape);

  for (Index b = 0; b < batch; ++b) {
    const double* go_b = grad_out.data() + b * out_flow * width;
    const double* go_inv = grad_out.data() + inv[static_cast<std::size_t>(b)] * out_flow * width;
    double* gi_b = grad_in.data() + b * input_flow * width;
    const Index mixed_base = spec.op_forward ? input_flow : 0;
    for (Index f = 0; f < input_flow; ++f) {
      const double* gm_i = go_b + (mixed_base + f) * width;
      const double* gm_pi = go_inv + (mixed_base + f) * width;
      double* o = gi_b + f * width;
      if (spec.op_forward) {
        const double* gp = go_b + f * width;
        for (Index v = 0; v < width; ++v) o[v] = gp[v] + (p * gm_i[v] + q * gm_pi[v]);
      } else {
        for (Index v = 0; v < width; ++v) o[v] = p * gm_i[v] + q * gm_pi[v];
      }
    }
  }
  return grad_in;
}

FlowTensor mixing_backward(const FlowTensor& grad_out, const MixSpec& spec, Index input_flow) {
  const Index batch = grad_out.batch();
  spec.validate(batch);
  const Index out_flow = grad_out.flow();
  const Index expected = spec.op_forward ? 2 * input_flow : input_flow;
  if (out_flow != expected) {
    throw StateError("mixing_backward: gradient flow size " + std::to_string(out_flow) +
                     " does not match the recorded forward (expected " + std::to_string(expected) + ")");
  }
  if (!spec.op_forward) return mixing_transpose(grad_out, spec, input_flow);

  const Index width = grad_out.feature_numel();
  const std::vector<Index> inv = spec.inverse_permutation();
  const double p = spec.p;
  const double q = 1.0 - p;

  Shape in_shape = grad_out.shape();
  in_shape[1] = input_flow;
  FlowTensor grad_in(in_shape);
  for (Index b = 0; b < batch; ++b) {
    const double* go_b = grad_out.data() + b * out_flow * width;
    const double* go_inv = grad_out.data() + inv[static_cast<std::size_t>(b)] * out_flow * width;
    double* gi_b = grad_in.data() + b * input_flow * width;
    for (Index f = 0; f < input_flow; ++f) {
      const double* gp = go_b + f * width;
      const double* gm_i = go_b + (input_flow + f) * width;
      const double* gm_pi = go_inv + (input_flow + f) * width;
      double* o = gi_b + f * width;
      for (Index v = 0; v < width; ++v) o[v] = (gp[v] + (p * gm_i[v] + q * gm_pi[v])) / 2.0;
    }
  }
  return grad_in;
}

MixOut mixing_forward(Tape& tape, Var z, const FlowLabels& labels, const MixSpec& spec) {
  const FlowTensor& zv = tape.value(z);
  const Index input_flow = zv.flow();
  if (labels.flow() != input_flow) {
    throw DimensionError("mixing_forward: label slots " + std::to_string(labels.flow()) +
                         " do not match feature flow size " + std::to_string(input_flow));
  }
  FlowTensor out = mixing_apply(zv, spec);
  FlowLabels out_labels = mixing_apply_labels(labels, spec);

  // Exact reverse-mode rule of the linear forward map. The flow-slot mean in
  // the loss contributes the 1/2 per branch, which lands the composite on the
  // (grad' + grad_m)/2 module-boundary rule for raw branch gradients.
  auto backward = [z, spec, input_flow](Tape& t, const ArrayXd& grad_out) {
    Shape out_shape = t.value(z).shape();
    out_shape[1] = spec.op_forward ? 2 * input_flow : input_flow;
    FlowTensor grad(out_shape, grad_out);
    t.grad_buffer(z) += mixing_transpose(grad, spec, input_flow).array();
  };
  Var out_var = tape.emplace("mixing", {z}, std::move(out), std::move(backward));
  return {out_var, std::move(out_labels)};
}

}  // namespace flowmix
