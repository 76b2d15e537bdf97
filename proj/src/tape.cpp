#include "flowmix/tape.hpp"

namespace flowmix {

Parameter::Parameter(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
  value = ArrayXd::Zero(flowmix::numel(shape));
  grad = ArrayXd::Zero(value.size());
}

Parameter::Parameter(std::string n, Shape s, ArrayXd v) : name(std::move(n)), shape(std::move(s)), value(std::move(v)) {
  if (flowmix::numel(shape) != value.size()) {
    throw DimensionError("Parameter " + name + ": shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(value.size()));
  }
  grad = ArrayXd::Zero(value.size());
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("Tape: dangling Var id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("Tape: dangling Var id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::input(FlowTensor value, std::string op) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  consumed_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = "param:" + p.name;
  n.value = FlowTensor(p.shape, p.value);
  n.bound = &p;
  nodes_.push_back(std::move(n));
  consumed_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emplace(std::string op, std::vector<Var> parents, FlowTensor value, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.parents.reserve(parents.size());
  for (Var p : parents) {
    node(p);  // validates
    n.parents.push_back(p.id);
  }
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  consumed_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1};
}

ArrayXd& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.size() == 0) n.grad = ArrayXd::Zero(n.value.numel());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (consumed_) throw StateError("Tape::backward called twice without a new forward pass");
  Node& top = node(loss);
  if (top.value.numel() != 1) {
    throw DimensionError("Tape::backward: loss must be scalar, got " + shape_str(top.value.shape()));
  }
  grad_buffer(loss).setConstant(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;  // not reached by the loss
    if (n.backward) n.backward(*this, n.grad);
    if (n.bound != nullptr) n.bound->grad += n.grad;
    n.grad.resize(0);
  }
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace flowmix
