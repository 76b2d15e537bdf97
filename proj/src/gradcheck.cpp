#include "flowmix/gradcheck.hpp"

#include <cmath>

namespace flowmix {

GradCheckReport finite_diff_check(std::vector<Parameter*> params, const std::function<double(bool with_grad)>& loss,
                                  double epsilon) {
  GradCheckReport report;
  for (Parameter* p : params) p->zero_grad();
  loss(/*with_grad=*/true);

  for (Parameter* p : params) {
    ArrayXd analytic = p->grad;
    GradCheckReport::Entry entry{p->name, 0.0};
    for (Index i = 0; i < p->numel(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double up = loss(false);
      p->value[i] = saved - epsilon;
      const double down = loss(false);
      p->value[i] = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-8);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport finite_diff_check(Network& net, const FlowTensor& x, const LabelMatrix& y, const MixPlan& mixes,
                                  const ClassWeights& weights, double epsilon) {
  std::vector<Parameter*> params;
  for (auto& p : net.params()) params.push_back(&p);

  auto loss = [&](bool with_grad) {
    Tape tape;
    Network::TrainForward fwd = net.forward_with_mixes(tape, x, y, mixes);
    Var l = weighted_bce(tape, fwd.probs, fwd.labels, weights);
    const double value = tape.value(l).array()[0];
    if (with_grad) {
      net.zero_grads();
      tape.backward(l);
    }
    return value;
  };
  return finite_diff_check(params, loss, epsilon);
}

}  // namespace flowmix
