#include "flowmix/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "flowmix/metrics.hpp"
#include "flowmix/rng.hpp"

namespace flowmix {

WeightMode weight_mode_from_name(const std::string& name) {
  if (name == "inverse_proportion") return WeightMode::inverse_proportion;
  if (name == "positive_only") return WeightMode::positive_only;
  if (name == "none") return WeightMode::none;
  throw ConfigError("unknown class_weights mode: " + name);
}

const char* weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::inverse_proportion: return "inverse_proportion";
    case WeightMode::positive_only: return "positive_only";
    case WeightMode::none: return "none";
  }
  return "?";
}

ClassWeights ClassWeights::uniform(Index num_classes) {
  ClassWeights w;
  w.positive = Eigen::VectorXd::Ones(num_classes);
  w.negative = Eigen::VectorXd::Ones(num_classes);
  return w;
}

ClassWeights compute_class_weights(const LabelMatrix& train_labels, WeightMode mode) {
  const Index n = train_labels.rows();
  const Index c = train_labels.cols();
  if (n < 1) throw ConfigError("compute_class_weights: empty training split");
  if (mode == WeightMode::none) return ClassWeights::uniform(c);

  ClassWeights w = ClassWeights::uniform(c);
  const double total = static_cast<double>(n);
  for (Index j = 0; j < c; ++j) {
    const double pos = train_labels.col(j).sum();
    const double neg = total - pos;
    if (pos <= 0.0 || neg <= 0.0) {
      w.warnings.push_back("class " + std::to_string(j) + " has " + std::to_string(static_cast<long>(pos)) +
                           " positives; weight clamped at N=" + std::to_string(n));
    }
    w.positive[j] = pos > 0.0 ? total / pos : total;
    if (mode == WeightMode::inverse_proportion) {
      w.negative[j] = neg > 0.0 ? total / neg : total;
    } else {
      w.negative[j] = 1.0;
    }
  }
  return w;
}

namespace {
constexpr double kLogClamp = 1e-12;
}

Var weighted_bce(Tape& tape, Var probs, const FlowLabels& labels, const ClassWeights& weights) {
  const FlowTensor& pv = tape.value(probs);
  require_finite(pv, "weighted_bce");
  if (pv.rank() != 3) throw DimensionError("weighted_bce: probs must be [B,F,C], got " + shape_str(pv.shape()));
  const Index batch = pv.dim(0), flow = pv.dim(1), classes = pv.dim(2);
  if (labels.flow() != flow || labels.batch() != batch || labels.num_classes() != classes) {
    throw DimensionError("weighted_bce: labels (" + std::to_string(labels.flow()) + " slots of " +
                         std::to_string(labels.batch()) + "x" + std::to_string(labels.num_classes()) +
                         ") do not align with probs " + shape_str(pv.shape()));
  }
  if (weights.positive.size() != classes || weights.negative.size() != classes) {
    throw DimensionError("weighted_bce: class weights sized " + std::to_string(weights.positive.size()) +
                         " for " + std::to_string(classes) + " classes");
  }

  double total = 0.0;
  for (Index f = 0; f < flow; ++f) {
    const LabelMatrix& y = labels.slots[static_cast<std::size_t>(f)];
    for (Index b = 0; b < batch; ++b) {
      const double* p = pv.data() + (b * flow + f) * classes;
      for (Index c = 0; c < classes; ++c) {
        const double yp = y(b, c);
        total -= weights.positive[c] * yp * std::log(std::max(p[c], kLogClamp)) +
                 weights.negative[c] * (1.0 - yp) * std::log(std::max(1.0 - p[c], kLogClamp));
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(flow * batch * classes);
  FlowTensor out(Shape{1, 1});
  out.array()[0] = total * scale;

  FlowLabels labels_copy = labels;
  Eigen::VectorXd wp = weights.positive, wn = weights.negative;
  auto backward = [probs, labels_copy = std::move(labels_copy), wp = std::move(wp), wn = std::move(wn), batch, flow,
                   classes, scale](Tape& t, const ArrayXd& grad_out) {
    const double g = grad_out[0] * scale;
    const FlowTensor& p = t.value(probs);
    ArrayXd& dp = t.grad_buffer(probs);
    for (Index f = 0; f < flow; ++f) {
      const LabelMatrix& y = labels_copy.slots[static_cast<std::size_t>(f)];
      for (Index b = 0; b < batch; ++b) {
        const Index off = (b * flow + f) * classes;
        for (Index c = 0; c < classes; ++c) {
          const double pc = p.data()[off + c];
          const double yp = y(b, c);
          double d = 0.0;
          if (pc > kLogClamp) d -= wp[c] * yp / pc;
          if (1.0 - pc > kLogClamp) d += wn[c] * (1.0 - yp) / (1.0 - pc);
          dp[off + c] += g * d;
        }
      }
    }
  };
  return tape.emplace("weighted_bce", {probs}, std::move(out), std::move(backward));
}

double weighted_bce_value(const LabelMatrix& probs, const LabelMatrix& labels, const ClassWeights& weights) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
    throw DimensionError("weighted_bce_value: probs " + std::to_string(probs.rows()) + "x" +
                         std::to_string(probs.cols()) + " vs labels " + std::to_string(labels.rows()) + "x" +
                         std::to_string(labels.cols()));
  }
  double total = 0.0;
  for (Index b = 0; b < probs.rows(); ++b) {
    for (Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(b, c);
      const double y = labels(b, c);
      total -= weights.positive[c] * y * std::log(std::max(p, kLogClamp)) +
               weights.negative[c] * (1.0 - y) * std::log(std::max(1.0 - p, kLogClamp));
    }
  }
  return total / static_cast<double>(probs.rows() * probs.cols());
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(lr0 > 0)) throw ConfigError("TrainConfig: lr0 must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("TrainConfig: betas must be in (0,1)");
  if (!(eps > 0)) throw ConfigError("TrainConfig: eps must be positive");
  if (plateau_patience < 1) throw ConfigError("TrainConfig: plateau_patience must be >= 1");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("TrainConfig: plateau_factor must be in (0,1)");
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (indicator != "macro_f1" && indicator != "auc") throw ConfigError("TrainConfig: indicator must be macro_f1 or auc");
}

void adam_step(Parameter& param, AdamState& state, const TrainConfig& cfg, double lr) {
  if (!param.grad.allFinite()) {
    throw NumericError("adam_step: non-finite gradient for parameter " + param.name);
  }
  if (state.m.size() != param.numel()) {
    state.m = ArrayXd::Zero(param.numel());
    state.v = ArrayXd::Zero(param.numel());
    state.t = 0;
  }
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * param.grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * param.grad.square();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  param.value -= lr * (state.m / bc1) / ((state.v / bc2).sqrt() + cfg.eps);
}

PlateauScheduler::PlateauScheduler(double lr0, int patience, double factor, double threshold)
    : lr_(lr0), patience_(patience), factor_(factor), threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double valid_loss) {
  if (valid_loss < best_ - threshold_) {
    best_ = valid_loss;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ >= patience_) {
      lr_ *= factor_;
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

double indicator_value(const std::string& indicator, const LabelMatrix& probs, const LabelMatrix& labels) {
  if (indicator == "auc") {
    MetricsReport rep = evaluate_metrics(probs, labels, {});
    return rep.mean_auc;
  }
  return macro_f1(probs, labels).macro;
}

LabelMatrix predict_all(Network& net, const Dataset& data, Index batch_size) {
  LabelMatrix probs(data.size(), data.num_classes());
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index stop = std::min(start + batch_size, data.size());
    idx.clear();
    for (Index i = start; i < stop; ++i) idx.push_back(i);
    LabelMatrix part = net.forward_eval(data.batch_features(idx));
    probs.middleRows(start, stop - start) = part;
  }
  return probs;
}

TrainResult train(Network& net, const Dataset& train_set, const Dataset& valid_set, const Dataset& test_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() < 1) throw ConfigError("train: empty training split");

  TrainResult result;
  result.weights = compute_class_weights(train_set.labels, cfg.class_weights);

  std::mt19937_64 data_rng = substream(cfg.seed, "data");
  std::mt19937_64 mix_rng = substream(cfg.seed, "mix");

  std::vector<AdamState> adam(net.params().size());
  double lr = cfg.lr0;
  double best_indicator = -std::numeric_limits<double>::infinity();
  PlateauScheduler scheduler(cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_threshold);
  long step_counter = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Index> order = random_permutation(train_set.size(), data_rng);
    double loss_sum = 0.0;

    for (Index start = 0; start < train_set.size(); start += cfg.batch_size) {
      const Index stop = std::min(start + cfg.batch_size, train_set.size());
      std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(stop - start));
      FlowTensor bx = train_set.batch_features(idx);
      LabelMatrix by = train_set.batch_labels(idx);

      Tape tape;
      Network::TrainForward fwd = net.forward_train(tape, bx, by, mix_rng);
      Var loss = weighted_bce(tape, fwd.probs, fwd.labels, result.weights);
      loss_sum += tape.value(loss).array()[0] * static_cast<double>(stop - start);

      net.zero_grads();
      tape.backward(loss);
      for (std::size_t i = 0; i < net.params().size(); ++i) adam_step(net.params()[i], adam[i], cfg, lr);

      ++step_counter;
      for (std::size_t i = 0; i < fwd.applied.states.size(); ++i) {
        result.mix_log.push_back({step_counter, fwd.applied.states[i], fwd.applied.specs[i].p});
      }
      if (result.first_flow_sizes.empty()) result.first_flow_sizes = fwd.trace.flow_sizes;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.lr = lr;

    const LabelMatrix valid_probs = predict_all(net, valid_set);
    const LabelMatrix test_probs = predict_all(net, test_set);
    rec.valid_loss = weighted_bce_value(valid_probs, valid_set.labels, result.weights);
    rec.valid_indicator = indicator_value(cfg.indicator, valid_probs, valid_set.labels);
    rec.test_indicator = indicator_value(cfg.indicator, test_probs, test_set.labels);

    lr = scheduler.step(rec.valid_loss);

    if (rec.valid_indicator > best_indicator) {
      best_indicator = rec.valid_indicator;
      result.best_epoch = epoch;
      result.best_params = net.params();
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.records.push_back(rec);
  }

  result.last_params = net.params();
  if (result.best_epoch < 0) result.best_params = net.params();  // 0-epoch run: the initialized checkpoint
  return result;
}

}  // namespace flowmix
