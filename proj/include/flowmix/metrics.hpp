#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowmix/mixing.hpp"
#include "flowmix/tensor.hpp"

namespace flowmix {

/// Mann-Whitney AUC with half credit for ties, O(n log n). Returns nullopt
/// for a degenerate class (no positive or no negative sample).
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

struct F1Result {
  std::vector<double> per_class;  // 0/0 convention: F1 = 0
  double macro = 0;
  std::vector<Index> tp, fp, fn;
};

/// Per-class F1 at a decision threshold (predicted positive iff prob >=
/// threshold) and the unweighted macro average.
F1Result macro_f1(const LabelMatrix& probs, const LabelMatrix& labels, double threshold = 0.5);

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_auc;  // nullopt = degenerate, excluded from the mean
  std::vector<double> per_class_f1;
  double mean_auc = 0;  // over classes with a defined AUC
  double macro = 0;     // Macro-F1
  double threshold = 0.5;
  std::vector<Index> tp, fp, fn;
};

MetricsReport evaluate_metrics(const LabelMatrix& probs, const LabelMatrix& labels,
                               const std::vector<std::string>& class_names, double threshold = 0.5);

/// Min-max normalizes the indicator series (a constant series maps to all
/// zeros), then returns the population variance.
double variance_of_indicator(std::span<const double> indicators);

/// Min-max normalization across classes into [eps, 1]; a constant vector
/// maps to all ones. Then the elementwise ratio (a/b)^r.
Eigen::VectorXd performance_ratio(const Eigen::VectorXd& perf_a, const Eigen::VectorXd& perf_b, double exponent,
                                  double eps = 1e-3);

/// Spearman rank correlation with average ranks for ties; nullopt when
/// either vector is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct KMeansResult {
  std::vector<Index> assignments;
  MatRM centers;
  double inertia = 0;  // total within-cluster sum of squares
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; deterministic under seed.
KMeansResult kmeans(const MatRM& features, Index k, std::uint64_t seed, int max_iters = 100, int restarts = 1);

struct ClusterStats {
  double sst = 0;
  double ssi = 0;
  double r_squared = 0;
  Index clusters = 0;
  std::vector<Index> cluster_sizes;
  Index feature_size = 0;
  bool degenerate = false;  // SST = 0; R^2 reported as 0
};

/// SST/SSI per the analysis-of-variance decomposition over one state's
/// features, normalized by the feature size V; R^2 = 1 - SSI/SST.
ClusterStats r_squared(const MatRM& features, std::span<const Index> assignments);

/// Elementwise per-state ratio R^2_without / R^2_with; nullopt where the
/// denominator is 0.
std::vector<std::optional<double>> r2_ratio(const std::vector<ClusterStats>& without_mix,
                                            const std::vector<ClusterStats>& with_mix);

}  // namespace flowmix
