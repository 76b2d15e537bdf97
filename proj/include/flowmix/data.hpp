#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowmix/mixing.hpp"
#include "flowmix/tensor.hpp"

namespace flowmix {

/// In-memory dataset: one flattened feature row and one multi-hot label row
/// per sample. Immutable after construction; corruption returns a copy.
struct Dataset {
  Shape feature_shape;  // per-sample dims: {d}, {C,L} or {C,H,W}
  MatRM features;       // N x V
  LabelMatrix labels;   // N x num_classes, entries in {0,1}
  std::vector<std::string> class_names;
  std::string metadata_json;  // generator parameters and provenance
  bool corrupted = false;
  std::vector<std::uint8_t> corruption_mask;  // per-sample audit trail

  Index size() const { return features.rows(); }
  Index num_classes() const { return labels.cols(); }
  Index feature_numel() const { return numel(feature_shape); }

  /// Gathers rows into a training batch with flow size 1.
  FlowTensor batch_features(std::span<const Index> idx) const;
  LabelMatrix batch_labels(std::span<const Index> idx) const;

  /// Empirical positive rate per class.
  Eigen::VectorXd class_marginals() const;
  /// n_c/m_c per class: the fraction of a class's samples carrying only that
  /// label. Classes with m_c = 0 are marked NaN.
  Eigen::VectorXd independent_ratios() const;
};

/// Order-sensitive FNV-1a over the label bits; used to assert that
/// corruption never touches the validation/test splits.
std::uint64_t label_checksum(const Dataset& data);

struct GeneratorConfig {
  Index num_samples = 5000;
  Index num_classes = 12;
  Shape feature_shape = {2, 512};  // {C,L} sequences or {C,H,W} images
  /// Symmetric, unit-diagonal target pairwise label correlations in [0,1].
  Eigen::MatrixXd correlation;  // defaults to identity when empty
  /// Target positive rate per class; defaults to a spread over [0.15, 0.45].
  Eigen::VectorXd marginals;
  double crosstalk = 0.2;
  double noise_sigma = 0.3;

  void validate() const;
};

/// Correlated multi-label generator: labels from a Gaussian-copula Bernoulli
/// model calibrated to the requested pairwise correlations; features as the
/// sum of class template signals plus shared cross-talk and Gaussian noise.
/// Every generated sample has at least one positive label.
Dataset generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed);
Dataset generate_synthetic(Index num_samples, Index num_classes, const Eigen::MatrixXd& correlation,
                           std::uint64_t seed);

struct SplitRatios {
  double train = 0.7, valid = 0.1, test = 0.2;
};

struct SplitResult {
  Dataset train, valid, test;
  std::vector<Index> train_idx, valid_idx, test_idx;
};

/// Deterministic disjoint exhaustive split; ratios must sum to 1 and every
/// part must be non-empty.
SplitResult split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

struct CorruptionSpec {
  enum class Scheme { per_sample_resample, per_bit_flip };
  double rate = 0.0;
  Scheme scheme = Scheme::per_sample_resample;
  std::uint64_t seed = 0;

  void validate() const;
};

CorruptionSpec::Scheme corruption_scheme_from_name(const std::string& name);
const char* corruption_scheme_name(CorruptionSpec::Scheme s);

/// Label corruption (training split only, by contract of the caller).
/// per_sample_resample replaces whole label rows with fresh draws from the
/// empirical class marginals; per_bit_flip flips bits independently. Applied
/// at most once per dataset: a second application is a state error.
Dataset corrupt_labels(const Dataset& data, const CorruptionSpec& spec);

/// FLXD1 binary dataset format plus a JSON sidecar at `path + ".json"`.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Tiny hand-made fixtures: one CSV row = flattened features then label bits.
Dataset load_csv(const std::string& path, const Shape& feature_shape, Index num_classes);

namespace detail {
// Correlated-Bernoulli calibration internals, exposed for testing.
double normal_cdf(double x);
double normal_quantile(double p);
/// P(X <= h, Y <= k) for standard bivariate normals with correlation r.
double bivariate_normal_cdf(double h, double k, double r);
/// Pearson correlation of the thresholded pair as a function of the latent
/// Gaussian correlation.
double binary_corr_from_gaussian(double pi_a, double pi_b, double r);
/// Inverse of the above; throws GenerationError when `rho` is unreachable.
double gaussian_corr_for_binary(double pi_a, double pi_b, double rho, Index class_a, Index class_b);
}  // namespace detail

}  // namespace flowmix
