#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowmix/data.hpp"
#include "flowmix/network.hpp"

namespace flowmix {

enum class WeightMode {
  inverse_proportion,  // w+ = N/N+, w- = N/N-
  positive_only,       // w+ = N/N+, w- = 1
  none,                // all ones
};

WeightMode weight_mode_from_name(const std::string& name);
const char* weight_mode_name(WeightMode m);

struct ClassWeights {
  Eigen::VectorXd positive;
  Eigen::VectorXd negative;
  std::vector<std::string> warnings;  // degenerate classes whose weight was clamped

  static ClassWeights uniform(Index num_classes);
};

/// Inverse-proportion weights from the training split. A class with 0 or N
/// positives gets its weight clamped at N and a warning recorded.
ClassWeights compute_class_weights(const LabelMatrix& train_labels, WeightMode mode);

/// Weighted binary cross-entropy, averaged over samples and classes, then
/// over flow slots so the magnitude is flow-size invariant. Labels may be
/// convex mixtures in [0,1]. Log arguments are clamped at 1e-12.
Var weighted_bce(Tape& tape, Var probs, const FlowLabels& labels, const ClassWeights& weights);

/// Loss value only (evaluation side, flow size 1).
double weighted_bce_value(const LabelMatrix& probs, const LabelMatrix& labels, const ClassWeights& weights);

struct TrainConfig {
  Index batch_size = 32;
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int plateau_patience = 3;
  double plateau_factor = 0.1;
  double plateau_threshold = 1e-4;  // absolute improvement that resets the counter
  int epochs = 0;
  std::uint64_t seed = 0;
  WeightMode class_weights = WeightMode::inverse_proportion;
  std::string indicator = "macro_f1";  // or "auc"

  void validate() const;
};

/// Standard bias-corrected Adam; one state per parameter.
struct AdamState {
  ArrayXd m, v;
  long t = 0;
};

void adam_step(Parameter& param, AdamState& state, const TrainConfig& cfg, double lr);

/// Reduce-on-plateau: lr <- lr * factor after `patience` consecutive epochs
/// without an improvement of more than `threshold`; the counter resets on
/// each reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, int patience, double factor, double threshold);
  /// Feeds one epoch's validation loss; returns the lr for the next epoch.
  double step(double valid_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double threshold_;
  double best_;
  int bad_epochs_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double lr = 0;
  double valid_indicator = 0;  // best-checkpoint selector
  double test_indicator = 0;   // the I_e series
  double wall_time_s = 0;      // excluded from deterministic outputs
};

struct MixLogEntry {
  long step = 0;
  Index state = 0;
  double p = 0;
};

struct TrainResult {
  std::vector<Parameter> best_params;
  std::vector<Parameter> last_params;
  std::vector<EpochRecord> records;
  int best_epoch = -1;
  ClassWeights weights;
  std::vector<MixLogEntry> mix_log;
  std::vector<Index> first_flow_sizes;  // flow trace of the first training batch
};

/// The full epoch loop: shuffled minibatches, regularized forward, weighted
/// BCE, Adam, plateau scheduling, per-epoch validation/test indicators.
/// Deterministic given (seed, config, data).
TrainResult train(Network& net, const Dataset& train_set, const Dataset& valid_set, const Dataset& test_set,
                  const TrainConfig& cfg);

/// Indicator helpers shared by the trainer and the CLI: mean per-class AUC
/// or Macro-F1 of a probability matrix against binary labels.
double indicator_value(const std::string& indicator, const LabelMatrix& probs, const LabelMatrix& labels);

/// Batched inference over a dataset.
LabelMatrix predict_all(Network& net, const Dataset& data, Index batch_size = 64);

}  // namespace flowmix
