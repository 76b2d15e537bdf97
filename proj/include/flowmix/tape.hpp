#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowmix/tensor.hpp"

namespace flowmix {

/// A named, trainable array. Gradients are accumulated here by
/// Tape::backward and consumed by the optimizer.
struct Parameter {
  std::string name;
  Shape shape;
  ArrayXd value;
  ArrayXd grad;

  Parameter() = default;
  Parameter(std::string n, Shape s);
  Parameter(std::string n, Shape s, ArrayXd v);

  Index numel() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// Handle to a node on the tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in forward order, so walking ids in
/// reverse is a reverse topological order; backward visits each node exactly
/// once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const ArrayXd& grad_out)>;

  Var input(FlowTensor value, std::string op = "input");
  Var param(Parameter& p);
  /// Records an op node. `backward` receives the node's output gradient and
  /// must scatter it into the parents via grad_buffer().
  Var emplace(std::string op, std::vector<Var> parents, FlowTensor value, BackwardFn backward);

  const FlowTensor& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  const std::string& op(Var v) const { return node(v).op; }

  /// Gradient accumulator for a node, zero-initialized on first touch.
  ArrayXd& grad_buffer(Var v);

  /// Reverse sweep from a scalar loss. Every reachable Parameter receives its
  /// contribution in Parameter::grad; node gradient buffers are dropped
  /// afterwards. A second sweep without a new forward is a state error.
  void backward(Var loss);

  /// Drops all nodes and re-arms the tape for a new forward pass.
  void reset();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    std::vector<int> parents;
    FlowTensor value;
    ArrayXd grad;  // empty until touched
    BackwardFn backward;
    Parameter* bound = nullptr;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace flowmix
