#include "flowmix/data.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "flowmix/rng.hpp"

namespace flowmix {

using nlohmann::json;

FlowTensor Dataset::batch_features(std::span<const Index> idx) const {
  const Index v = feature_numel();
  Shape shape{static_cast<Index>(idx.size()), 1};
  for (Index d : feature_shape) shape.push_back(d);
  FlowTensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= size()) throw DimensionError("batch_features: index out of range");
    std::memcpy(out.data() + static_cast<Index>(i) * v, features.row(idx[i]).data(),
                static_cast<std::size_t>(v) * sizeof(double));
  }
  return out;
}

LabelMatrix Dataset::batch_labels(std::span<const Index> idx) const {
  LabelMatrix out(static_cast<Index>(idx.size()), num_classes());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = labels.row(idx[i]);
  return out;
}

Eigen::VectorXd Dataset::class_marginals() const {
  if (size() == 0) return Eigen::VectorXd::Zero(num_classes());
  return labels.colwise().mean();
}

Eigen::VectorXd Dataset::independent_ratios() const {
  const Index c = num_classes();
  Eigen::VectorXd out(c);
  for (Index j = 0; j < c; ++j) {
    Index m = 0, n = 0;
    for (Index i = 0; i < size(); ++i) {
      if (labels(i, j) > 0.5) {
        ++m;
        if (labels.row(i).sum() < 1.5) ++n;
      }
    }
    out[j] = m > 0 ? static_cast<double>(n) / static_cast<double>(m) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::uint64_t label_checksum(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.num_classes(); ++j) {
      h ^= static_cast<std::uint8_t>(data.labels(i, j) > 0.5 ? 1 : 0);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Correlated-Bernoulli calibration
// ---------------------------------------------------------------------------

namespace detail {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must be in (0,1), got " + std::to_string(p));
  // Acklam's rational approximation, then one Newton polish.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,  -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = normal_cdf(x) - p;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi);
  if (pdf > 0) x -= e / pdf;
  return x;
}

namespace {

// Nodes/weights of n-point Gauss-Legendre quadrature on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[static_cast<std::size_t>(i)] = -x;
    nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * pp * pp);
    weights[static_cast<std::size_t>(n - 1 - i)] = weights[static_cast<std::size_t>(i)];
  }
}

}  // namespace

double bivariate_normal_cdf(double h, double k, double r) {
  if (r <= -1.0) return std::max(0.0, normal_cdf(h) + normal_cdf(k) - 1.0);
  if (r >= 1.0) return normal_cdf(std::min(h, k));
  if (r == 0.0) return normal_cdf(h) * normal_cdf(k);
  // Phi2(h,k;r) = Phi(h)Phi(k) + (1/2pi) * Int_0^{asin r} exp(-(h^2 - 2hk sin t + k^2) / (2 cos^2 t)) dt
  static thread_local std::vector<double> nodes, weights;
  if (nodes.empty()) gauss_legendre(48, nodes, weights);
  const double upper = std::asin(r);
  double integral = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double t = 0.5 * upper * (nodes[i] + 1.0);
    const double s = std::sin(t);
    const double c2 = 1.0 - s * s;
    integral += weights[i] * std::exp(-(h * h - 2.0 * h * k * s + k * k) / (2.0 * c2));
  }
  integral *= 0.5 * upper / (2.0 * std::numbers::pi);
  return normal_cdf(h) * normal_cdf(k) + integral;
}

double binary_corr_from_gaussian(double pi_a, double pi_b, double r) {
  const double ta = normal_quantile(pi_a);
  const double tb = normal_quantile(pi_b);
  const double p11 = bivariate_normal_cdf(ta, tb, r);
  const double denom = std::sqrt(pi_a * (1 - pi_a) * pi_b * (1 - pi_b));
  return (p11 - pi_a * pi_b) / denom;
}

double gaussian_corr_for_binary(double pi_a, double pi_b, double rho, Index class_a, Index class_b) {
  if (rho <= 1e-12) return 0.0;
  const double reachable = binary_corr_from_gaussian(pi_a, pi_b, 1.0);
  if (rho >= reachable - 1e-9) {
    if (rho <= reachable + 1e-6) return 1.0;
    std::ostringstream os;
    os << "generate_synthetic: requested correlation " << rho << " between classes " << class_a << " and " << class_b
       << " exceeds the maximum " << reachable << " reachable with marginals (" << pi_a << ", " << pi_b << ")";
    throw GenerationError(os.str());
  }
  double lo = 0.0, hi = 1.0 - 1e-12;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (binary_corr_from_gaussian(pi_a, pi_b, mid) < rho) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-13) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (num_samples < 0) throw ConfigError("generate_synthetic: num_samples must be >= 0");
  if (num_classes < 1) throw ConfigError("generate_synthetic: num_classes must be >= 1");
  if (feature_shape.empty() || feature_shape.size() > 3) {
    throw ConfigError("generate_synthetic: feature shape must be {d}, {C,L} or {C,H,W}");
  }
  for (Index d : feature_shape) {
    if (d < 1) throw ConfigError("generate_synthetic: non-positive feature dim");
  }
  if (correlation.size() != 0) {
    if (correlation.rows() != num_classes || correlation.cols() != num_classes) {
      throw ConfigError("generate_synthetic: correlation matrix must be num_classes x num_classes");
    }
    for (Index i = 0; i < num_classes; ++i) {
      if (std::abs(correlation(i, i) - 1.0) > 1e-12) throw ConfigError("generate_synthetic: correlation diagonal must be 1");
      for (Index j = 0; j < num_classes; ++j) {
        const double v = correlation(i, j);
        if (v < 0.0 || v > 1.0) throw ConfigError("generate_synthetic: correlation entries must lie in [0,1]");
        if (std::abs(v - correlation(j, i)) > 1e-12) throw ConfigError("generate_synthetic: correlation must be symmetric");
      }
    }
  }
  if (marginals.size() != 0) {
    if (marginals.size() != num_classes) throw ConfigError("generate_synthetic: marginals must have num_classes entries");
    for (Index i = 0; i < num_classes; ++i) {
      if (!(marginals[i] > 0.0 && marginals[i] < 1.0)) {
        throw ConfigError("generate_synthetic: marginals must lie strictly in (0,1)");
      }
    }
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("generate_synthetic: noise_sigma must be >= 0");
}

namespace {

Eigen::VectorXd default_marginals(Index num_classes) {
  Eigen::VectorXd m(num_classes);
  for (Index c = 0; c < num_classes; ++c) {
    m[c] = num_classes == 1 ? 0.3 : 0.15 + 0.3 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
  }
  return m;
}

// Spectral square root of the calibrated Gaussian correlation matrix,
// clipped to PSD and renormalized so every latent coordinate keeps unit
// variance.
Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& gauss_corr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gauss_corr);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd a = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
  for (Index i = 0; i < a.rows(); ++i) {
    const double norm = a.row(i).norm();
    if (norm > 0) a.row(i) /= norm;
  }
  return a;
}

// Class template signals. Distinct base frequencies (sequences) or blob
// centers (images) keep classes separable; phases and amplitudes come from
// the template stream.
std::vector<ArrayXd> make_templates(const Shape& feature_shape, Index num_classes, std::mt19937_64& rng) {
  const Index v = numel(feature_shape);
  std::vector<ArrayXd> templates;
  templates.reserve(static_cast<std::size_t>(num_classes) + 1);
  const double two_pi = 2.0 * std::numbers::pi;

  for (Index c = 0; c <= num_classes; ++c) {  // last one is the shared cross-talk component
    ArrayXd t = ArrayXd::Zero(v);
    if (feature_shape.size() == 1) {
      for (Index i = 0; i < v; ++i) t[i] = 2.0 * uniform01(rng) - 1.0;
    } else if (feature_shape.size() == 2) {
      const Index channels = feature_shape[0], len = feature_shape[1];
      const double freq = static_cast<double>(c + 1);
      for (Index ch = 0; ch < channels; ++ch) {
        const double phase = two_pi * uniform01(rng);
        const double amp = 0.7 + 0.6 * uniform01(rng);
        for (Index l = 0; l < len; ++l) {
          t[ch * len + l] = amp * std::sin(two_pi * freq * static_cast<double>(l) / static_cast<double>(len) + phase);
        }
      }
    } else {
      const Index channels = feature_shape[0], h = feature_shape[1], w = feature_shape[2];
      const double cy = (0.2 + 0.6 * uniform01(rng)) * static_cast<double>(h - 1);
      const double cx = (0.2 + 0.6 * uniform01(rng)) * static_cast<double>(w - 1);
      const double s = 0.12 * static_cast<double>(std::max(h, w)) + 1e-9;
      for (Index ch = 0; ch < channels; ++ch) {
        const double amp = 0.7 + 0.6 * uniform01(rng);
        for (Index i = 0; i < h; ++i) {
          for (Index j = 0; j < w; ++j) {
            const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
            t[(ch * h + i) * w + j] = amp * std::exp(-d2 / (2.0 * s * s));
          }
        }
      }
    }
    templates.push_back(std::move(t));
  }
  return templates;
}

}  // namespace

Dataset generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Index n = cfg.num_samples;
  const Index k = cfg.num_classes;
  const Eigen::MatrixXd corr = cfg.correlation.size() ? cfg.correlation : Eigen::MatrixXd::Identity(k, k);
  const Eigen::VectorXd marg = cfg.marginals.size() ? cfg.marginals : default_marginals(k);

  // Classes requested with correlation 1.0 collapse onto one latent
  // coordinate, so their bits come out identical by construction. Equal
  // marginals are required for perfect coupling.
  std::vector<Index> rep(static_cast<std::size_t>(k));
  for (Index c = 0; c < k; ++c) rep[static_cast<std::size_t>(c)] = c;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      if (corr(i, j) >= 1.0 - 1e-12) {
        if (std::abs(marg[i] - marg[j]) > 1e-12) {
          throw GenerationError("generate_synthetic: correlation 1.0 between classes " + std::to_string(i) + " and " +
                                std::to_string(j) + " requires equal marginals");
        }
        rep[static_cast<std::size_t>(j)] = rep[static_cast<std::size_t>(i)];
      }
    }
  }
  std::vector<Index> latent_of(static_cast<std::size_t>(k));
  std::vector<Index> latent_class;  // representative class per latent coordinate
  for (Index c = 0; c < k; ++c) {
    if (rep[static_cast<std::size_t>(c)] == c) {
      latent_of[static_cast<std::size_t>(c)] = static_cast<Index>(latent_class.size());
      latent_class.push_back(c);
    } else {
      latent_of[static_cast<std::size_t>(c)] = latent_of[static_cast<std::size_t>(rep[static_cast<std::size_t>(c)])];
    }
  }
  const Index kl = static_cast<Index>(latent_class.size());

  // Calibrate the latent Gaussian correlation per representative pair so the
  // thresholded bits land on the requested Pearson correlation.
  Eigen::MatrixXd gauss = Eigen::MatrixXd::Identity(kl, kl);
  for (Index i = 0; i < kl; ++i) {
    for (Index j = i + 1; j < kl; ++j) {
      const Index a = latent_class[static_cast<std::size_t>(i)], b = latent_class[static_cast<std::size_t>(j)];
      const double r = detail::gaussian_corr_for_binary(marg[a], marg[b], corr(a, b), a, b);
      gauss(i, j) = gauss(j, i) = r;
    }
  }
  const Eigen::MatrixXd factor = sampling_factor(gauss);

  Eigen::VectorXd thresholds(k);
  for (Index c = 0; c < k; ++c) thresholds[c] = detail::normal_quantile(marg[c]);

  std::mt19937_64 label_rng = substream(seed, "labels");
  std::mt19937_64 template_rng = substream(seed, "templates");
  std::mt19937_64 noise_rng = substream(seed, "noise");
  std::normal_distribution<double> gaussian(0.0, 1.0);

  Dataset out;
  out.feature_shape = cfg.feature_shape;
  const Index v = numel(cfg.feature_shape);
  out.features.resize(n, v);
  out.labels.resize(n, k);
  for (Index c = 0; c < k; ++c) out.class_names.push_back("class_" + std::to_string(c));

  // Labels first (their stream must not depend on the feature shape). A row
  // that comes out all-zero gets its most-nearly-positive classes flipped
  // (the whole tie group, so perfectly coupled classes move together); this
  // distorts the requested law far less than conditioning the joint draw.
  Eigen::VectorXd xi(kl), zl(kl);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < kl; ++c) xi[c] = gaussian(label_rng);
    zl.noalias() = factor * xi;
    bool any = false;
    double min_gap = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < k; ++c) {
      const double z = zl[latent_of[static_cast<std::size_t>(c)]];
      const bool on = z <= thresholds[c];
      out.labels(i, c) = on ? 1.0 : 0.0;
      any = any || on;
      min_gap = std::min(min_gap, z - thresholds[c]);
    }
    if (!any) {
      for (Index c = 0; c < k; ++c) {
        const double gap = zl[latent_of[static_cast<std::size_t>(c)]] - thresholds[c];
        if (gap == min_gap) out.labels(i, c) = 1.0;
      }
    }
  }

  const std::vector<ArrayXd> templates = make_templates(cfg.feature_shape, k, template_rng);
  for (Index i = 0; i < n; ++i) {
    ArrayXd x = ArrayXd::Zero(v);
    double positives = 0.0;
    for (Index c = 0; c < k; ++c) {
      if (out.labels(i, c) > 0.5) {
        x += templates[static_cast<std::size_t>(c)];
        positives += 1.0;
      }
    }
    x += cfg.crosstalk * positives * templates.back();
    for (Index j = 0; j < v; ++j) x[j] += cfg.noise_sigma * gaussian(noise_rng);
    out.features.row(i) = x.matrix().transpose();
  }

  json meta;
  meta["generator"] = {{"num_samples", n},
                       {"num_classes", k},
                       {"crosstalk", cfg.crosstalk},
                       {"noise_sigma", cfg.noise_sigma},
                       {"seed", seed}};
  meta["marginals"] = std::vector<double>(marg.data(), marg.data() + k);
  out.metadata_json = meta.dump();
  return out;
}

Dataset generate_synthetic(Index num_samples, Index num_classes, const Eigen::MatrixXd& correlation,
                           std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.num_samples = num_samples;
  cfg.num_classes = num_classes;
  cfg.correlation = correlation;
  return generate_synthetic(cfg, seed);
}

// ---------------------------------------------------------------------------
// Split and corruption
// ---------------------------------------------------------------------------

namespace {

Dataset gather(const Dataset& src, const std::vector<Index>& idx) {
  Dataset out;
  out.feature_shape = src.feature_shape;
  out.class_names = src.class_names;
  out.metadata_json = src.metadata_json;
  out.features.resize(static_cast<Index>(idx.size()), src.features.cols());
  out.labels.resize(static_cast<Index>(idx.size()), src.labels.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = src.features.row(idx[i]);
    out.labels.row(static_cast<Index>(i)) = src.labels.row(idx[i]);
  }
  return out;
}

}  // namespace

SplitResult split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.valid + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1, got " + std::to_string(sum));
  const Index n = data.size();
  std::mt19937_64 rng = substream(seed, "split");
  const std::vector<Index> order = random_permutation(n, rng);

  const Index n_train = static_cast<Index>(std::llround(ratios.train * static_cast<double>(n)));
  const Index n_valid = static_cast<Index>(std::llround((ratios.train + ratios.valid) * static_cast<double>(n))) - n_train;
  const Index n_test = n - n_train - n_valid;
  if (n_train < 1 || n_valid < 1 || n_test < 1) {
    throw ConfigError("split: empty part with n=" + std::to_string(n) + " and ratios " + std::to_string(ratios.train) +
                      ":" + std::to_string(ratios.valid) + ":" + std::to_string(ratios.test));
  }

  SplitResult out;
  out.train_idx.assign(order.begin(), order.begin() + n_train);
  out.valid_idx.assign(order.begin() + n_train, order.begin() + n_train + n_valid);
  out.test_idx.assign(order.begin() + n_train + n_valid, order.end());
  out.train = gather(data, out.train_idx);
  out.valid = gather(data, out.valid_idx);
  out.test = gather(data, out.test_idx);
  return out;
}

void CorruptionSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("CorruptionSpec: rate must lie in [0,1]");
}

CorruptionSpec::Scheme corruption_scheme_from_name(const std::string& name) {
  if (name == "per_sample_resample") return CorruptionSpec::Scheme::per_sample_resample;
  if (name == "per_bit_flip") return CorruptionSpec::Scheme::per_bit_flip;
  throw ConfigError("unknown corruption scheme: " + name);
}

const char* corruption_scheme_name(CorruptionSpec::Scheme s) {
  return s == CorruptionSpec::Scheme::per_sample_resample ? "per_sample_resample" : "per_bit_flip";
}

Dataset corrupt_labels(const Dataset& data, const CorruptionSpec& spec) {
  spec.validate();
  if (data.corrupted) throw StateError("corrupt_labels: dataset was already corrupted once");

  Dataset out = data;
  out.corrupted = true;
  out.corruption_mask.assign(static_cast<std::size_t>(data.size()), 0);
  const Eigen::VectorXd marginals = data.class_marginals();
  std::mt19937_64 rng = substream(spec.seed, "corruption");

  for (Index i = 0; i < data.size(); ++i) {
    if (spec.scheme == CorruptionSpec::Scheme::per_sample_resample) {
      if (uniform01(rng) < spec.rate) {
        out.corruption_mask[static_cast<std::size_t>(i)] = 1;
        for (Index c = 0; c < data.num_classes(); ++c) {
          out.labels(i, c) = uniform01(rng) < marginals[c] ? 1.0 : 0.0;
        }
      }
    } else {
      bool touched = false;
      for (Index c = 0; c < data.num_classes(); ++c) {
        if (uniform01(rng) < spec.rate) {
          out.labels(i, c) = 1.0 - out.labels(i, c);
          touched = true;
        }
      }
      out.corruption_mask[static_cast<std::size_t>(i)] = touched ? 1 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FLXD1 file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'F', 'L', 'X', 'D', '1'};

template <typename T>
void write_raw(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, std::uint64_t& offset, const std::string& path) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) {
    throw ParseError("load_dataset: " + path + " truncated at byte offset " + std::to_string(offset));
  }
  offset += sizeof(T);
  return value;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_dataset: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(data.size()));
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(data.num_classes()));
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(data.feature_shape.size()));
  for (Index d : data.feature_shape) write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  const Index v = data.feature_numel();
  for (Index i = 0; i < data.size(); ++i) {
    os.write(reinterpret_cast<const char*>(data.features.row(i).data()),
             static_cast<std::streamsize>(v) * static_cast<std::streamsize>(sizeof(double)));
    for (Index c = 0; c < data.num_classes(); ++c) {
      write_raw<std::uint8_t>(os, data.labels(i, c) > 0.5 ? 1 : 0);
    }
  }
  if (!os) throw IoError("save_dataset: write failed for " + path);
  os.close();

  json side;
  side["class_names"] = data.class_names;
  side["corrupted"] = data.corrupted;
  side["corruption_mask"] = data.corruption_mask;
  if (!data.metadata_json.empty()) {
    side["metadata"] = json::parse(data.metadata_json, nullptr, false);
    if (side["metadata"].is_discarded()) side["metadata"] = data.metadata_json;
  }
  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw IoError("save_dataset: cannot open " + path + ".json for writing");
  js << side.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_dataset: cannot open " + path);
  std::uint64_t offset = 0;

  char magic[5];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("load_dataset: " + path + " has no FLXD1 magic at byte offset 0");
  }
  offset += sizeof(magic);

  Dataset out;
  const auto n = static_cast<Index>(read_raw<std::uint64_t>(is, offset, path));
  const auto classes = static_cast<Index>(read_raw<std::uint32_t>(is, offset, path));
  const auto ndim = read_raw<std::uint32_t>(is, offset, path);
  if (ndim < 1 || ndim > 3) {
    throw ParseError("load_dataset: " + path + " has unsupported feature rank " + std::to_string(ndim) +
                     " at byte offset " + std::to_string(offset - sizeof(std::uint32_t)));
  }
  for (std::uint32_t i = 0; i < ndim; ++i) {
    out.feature_shape.push_back(static_cast<Index>(read_raw<std::uint64_t>(is, offset, path)));
  }
  const Index v = numel(out.feature_shape);
  if (n < 0 || classes < 1 || v < 1) {
    throw ParseError("load_dataset: " + path + " header describes an invalid dataset");
  }

  out.features.resize(n, v);
  out.labels.resize(n, classes);
  std::vector<double> row(static_cast<std::size_t>(v));
  for (Index i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(v * static_cast<Index>(sizeof(double))));
    if (!is) throw ParseError("load_dataset: " + path + " truncated at byte offset " + std::to_string(offset));
    offset += static_cast<std::uint64_t>(v) * sizeof(double);
    for (Index j = 0; j < v; ++j) {
      if (!std::isfinite(row[static_cast<std::size_t>(j)])) {
        throw ParseError("load_dataset: " + path + " holds a non-finite feature in sample " + std::to_string(i));
      }
      out.features(i, j) = row[static_cast<std::size_t>(j)];
    }
    for (Index c = 0; c < classes; ++c) {
      const auto bit = read_raw<std::uint8_t>(is, offset, path);
      if (bit > 1) {
        throw ParseError("load_dataset: " + path + " holds label byte " + std::to_string(int(bit)) +
                         " at byte offset " + std::to_string(offset - 1));
      }
      out.labels(i, c) = bit;
    }
  }

  std::ifstream js(path + ".json");
  if (js) {
    json side = json::parse(js, nullptr, false);
    if (!side.is_discarded()) {
      if (side.contains("class_names")) out.class_names = side["class_names"].get<std::vector<std::string>>();
      if (side.contains("corrupted")) out.corrupted = side["corrupted"].get<bool>();
      if (side.contains("corruption_mask")) {
        out.corruption_mask = side["corruption_mask"].get<std::vector<std::uint8_t>>();
      }
      if (side.contains("metadata")) {
        out.metadata_json = side["metadata"].is_string() ? side["metadata"].get<std::string>() : side["metadata"].dump();
      }
    }
  }
  if (out.class_names.empty()) {
    for (Index c = 0; c < classes; ++c) out.class_names.push_back("class_" + std::to_string(c));
  }
  return out;
}

Dataset load_csv(const std::string& path, const Shape& feature_shape, Index num_classes) {
  std::ifstream is(path);
  if (!is) throw IoError("load_csv: cannot open " + path);
  const Index v = numel(feature_shape);

  Dataset out;
  out.feature_shape = feature_shape;
  std::vector<std::vector<double>> rows;
  std::string line;
  Index line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("load_csv: " + path + " line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (static_cast<Index>(fields.size()) != v + num_classes) {
      throw ParseError("load_csv: " + path + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(v + num_classes) + " fields, got " + std::to_string(fields.size()));
    }
    for (Index c = 0; c < num_classes; ++c) {
      const double bit = fields[static_cast<std::size_t>(v + c)];
      if (bit != 0.0 && bit != 1.0) {
        throw ParseError("load_csv: " + path + " line " + std::to_string(line_no) + ": label bits must be 0 or 1");
      }
    }
    rows.push_back(std::move(fields));
  }
  out.features.resize(static_cast<Index>(rows.size()), v);
  out.labels.resize(static_cast<Index>(rows.size()), num_classes);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Index j = 0; j < v; ++j) out.features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    for (Index c = 0; c < num_classes; ++c) {
      out.labels(static_cast<Index>(i), c) = rows[i][static_cast<std::size_t>(v + c)];
    }
  }
  for (Index c = 0; c < num_classes; ++c) out.class_names.push_back("class_" + std::to_string(c));
  return out;
}

}  // namespace flowmix
