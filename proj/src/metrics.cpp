#include "flowmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flowmix/rng.hpp"

namespace flowmix {

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (double y : labels) {
    if (y > 0.5) ++positives;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, then the Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);  // 1-based
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] > 0.5) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  const double numerator = rank_sum_pos - p * (p + 1.0) / 2.0;
  return numerator / (p * static_cast<double>(negatives));
}

F1Result macro_f1(const LabelMatrix& probs, const LabelMatrix& labels, double threshold) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
    throw DimensionError("macro_f1: probs " + std::to_string(probs.rows()) + "x" + std::to_string(probs.cols()) +
                         " vs labels " + std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()));
  }
  const Index classes = probs.cols();
  F1Result out;
  out.tp.assign(static_cast<std::size_t>(classes), 0);
  out.fp.assign(static_cast<std::size_t>(classes), 0);
  out.fn.assign(static_cast<std::size_t>(classes), 0);
  for (Index c = 0; c < classes; ++c) {
    for (Index i = 0; i < probs.rows(); ++i) {
      const bool pred = probs(i, c) >= threshold;
      const bool truth = labels(i, c) > 0.5;
      if (pred && truth) ++out.tp[static_cast<std::size_t>(c)];
      else if (pred) ++out.fp[static_cast<std::size_t>(c)];
      else if (truth) ++out.fn[static_cast<std::size_t>(c)];
    }
    const double denom = static_cast<double>(2 * out.tp[static_cast<std::size_t>(c)] +
                                             out.fp[static_cast<std::size_t>(c)] + out.fn[static_cast<std::size_t>(c)]);
    out.per_class.push_back(denom > 0.0 ? 2.0 * static_cast<double>(out.tp[static_cast<std::size_t>(c)]) / denom : 0.0);
  }
  out.macro = classes > 0 ? std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
                                static_cast<double>(classes)
                          : 0.0;
  return out;
}

MetricsReport evaluate_metrics(const LabelMatrix& probs, const LabelMatrix& labels,
                               const std::vector<std::string>& class_names, double threshold) {
  MetricsReport rep;
  rep.threshold = threshold;
  const Index classes = probs.cols();
  rep.class_names = class_names;
  if (rep.class_names.empty()) {
    for (Index c = 0; c < classes; ++c) rep.class_names.push_back("class_" + std::to_string(c));
  }

  std::vector<double> col_scores(static_cast<std::size_t>(probs.rows()));
  std::vector<double> col_labels(static_cast<std::size_t>(probs.rows()));
  double auc_sum = 0.0;
  Index auc_count = 0;
  for (Index c = 0; c < classes; ++c) {
    for (Index i = 0; i < probs.rows(); ++i) {
      col_scores[static_cast<std::size_t>(i)] = probs(i, c);
      col_labels[static_cast<std::size_t>(i)] = labels(i, c);
    }
    auto a = auc(col_scores, col_labels);
    rep.per_class_auc.push_back(a);
    if (a) {
      auc_sum += *a;
      ++auc_count;
    }
  }
  rep.mean_auc = auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : 0.0;

  F1Result f1 = macro_f1(probs, labels, threshold);
  rep.per_class_f1 = std::move(f1.per_class);
  rep.macro = f1.macro;
  rep.tp = std::move(f1.tp);
  rep.fp = std::move(f1.fp);
  rep.fn = std::move(f1.fn);
  return rep;
}

double variance_of_indicator(std::span<const double> indicators) {
  const std::size_t n = indicators.size();
  if (n == 0) throw ConfigError("variance_of_indicator: empty series");
  const auto [lo_it, hi_it] = std::minmax_element(indicators.begin(), indicators.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> norm(n, 0.0);
  if (hi > lo) {
    for (std::size_t i = 0; i < n; ++i) norm[i] = (indicators[i] - lo) / (hi - lo);
  }
  const double mean = std::accumulate(norm.begin(), norm.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : norm) var += (x - mean) * (x - mean);
  return var / static_cast<double>(n);
}

Eigen::VectorXd performance_ratio(const Eigen::VectorXd& perf_a, const Eigen::VectorXd& perf_b, double exponent,
                                  double eps) {
  if (perf_a.size() != perf_b.size()) {
    throw DimensionError("performance_ratio: vectors sized " + std::to_string(perf_a.size()) + " vs " +
                         std::to_string(perf_b.size()));
  }
  auto normalize = [eps](const Eigen::VectorXd& v) {
    const double lo = v.minCoeff(), hi = v.maxCoeff();
    if (hi <= lo) return Eigen::VectorXd::Ones(v.size()).eval();
    return (eps + (1.0 - eps) * (v.array() - lo) / (hi - lo)).matrix().eval();
  };
  const Eigen::VectorXd na = normalize(perf_a);
  const Eigen::VectorXd nb = normalize(perf_b);
  Eigen::VectorXd out(perf_a.size());
  for (Index i = 0; i < out.size(); ++i) out[i] = std::pow(na[i] / nb[i], exponent);
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("spearman: size mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va <= 0.0 || vb <= 0.0) return std::nullopt;  // constant input
  return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// k-means and the R^2 probe
// ---------------------------------------------------------------------------

namespace {

double nearest_center(const MatRM& features, const MatRM& centers, Index point, Index& best) {
  double best_d = std::numeric_limits<double>::infinity();
  best = 0;
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (features.row(point) - centers.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best_d;
}

KMeansResult kmeans_once(const MatRM& features, Index k, std::mt19937_64& rng, int max_iters) {
  const Index n = features.rows();
  KMeansResult res;
  res.centers.resize(k, features.cols());

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Index first = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
  res.centers.row(0) = features.row(first);
  for (Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = (features.row(i) - res.centers.row(c - 1)).squaredNorm();
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
      total += d2[static_cast<std::size_t>(i)];
    }
    Index chosen = n - 1;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    }
    res.centers.row(c) = features.row(chosen);
  }

  res.assignments.assign(static_cast<std::size_t>(n), 0);
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    res.inertia = 0.0;
    std::vector<double> worst(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      const double d = nearest_center(features, res.centers, i, best);
      worst[static_cast<std::size_t>(i)] = d;
      res.inertia += d;
      if (res.assignments[static_cast<std::size_t>(i)] != best) {
        res.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    res.iterations = iter + 1;

    MatRM sums = MatRM::Zero(k, features.cols());
    std::fill(counts.begin(), counts.end(), Index{0});
    for (Index i = 0; i < n; ++i) {
      sums.row(res.assignments[static_cast<std::size_t>(i)]) += features.row(i);
      ++counts[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(i)])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        res.centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Re-seed an empty cluster with the point farthest from its center.
        Index far = 0;
        for (Index i = 1; i < n; ++i) {
          if (worst[static_cast<std::size_t>(i)] > worst[static_cast<std::size_t>(far)]) far = i;
        }
        res.centers.row(c) = features.row(far);
        worst[static_cast<std::size_t>(far)] = 0.0;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
  }

  res.inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    res.inertia += nearest_center(features, res.centers, i, best);
    res.assignments[static_cast<std::size_t>(i)] = best;
  }
  return res;
}

}  // namespace

KMeansResult kmeans(const MatRM& features, Index k, std::uint64_t seed, int max_iters, int restarts) {
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (features.rows() < k) {
    throw ConfigError("kmeans: " + std::to_string(features.rows()) + " points cannot fill k=" + std::to_string(k) +
                      " clusters");
  }
  if (restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");
  std::mt19937_64 rng = substream(seed, "kmeans");
  KMeansResult best = kmeans_once(features, k, rng, max_iters);
  for (int r = 1; r < restarts; ++r) {
    KMeansResult next = kmeans_once(features, k, rng, max_iters);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

ClusterStats r_squared(const MatRM& features, std::span<const Index> assignments) {
  const Index n = features.rows();
  const Index v = features.cols();
  if (static_cast<Index>(assignments.size()) != n) {
    throw DimensionError("r_squared: " + std::to_string(assignments.size()) + " assignments for " + std::to_string(n) +
                         " points");
  }
  Index clusters = 0;
  for (Index a : assignments) {
    if (a < 0) throw ConfigError("r_squared: negative cluster id");
    clusters = std::max(clusters, a + 1);
  }

  ClusterStats stats;
  stats.feature_size = v;
  stats.clusters = clusters;
  stats.cluster_sizes.assign(static_cast<std::size_t>(clusters), 0);

  const Eigen::RowVectorXd grand_mean = features.colwise().mean();
  stats.sst = (features.rowwise() - grand_mean).squaredNorm() / static_cast<double>(v);

  MatRM cluster_means = MatRM::Zero(clusters, v);
  for (Index i = 0; i < n; ++i) {
    cluster_means.row(assignments[static_cast<std::size_t>(i)]) += features.row(i);
    ++stats.cluster_sizes[static_cast<std::size_t>(assignments[static_cast<std::size_t>(i)])];
  }
  for (Index c = 0; c < clusters; ++c) {
    if (stats.cluster_sizes[static_cast<std::size_t>(c)] > 0) {
      cluster_means.row(c) /= static_cast<double>(stats.cluster_sizes[static_cast<std::size_t>(c)]);
    }
  }
  double ssi = 0.0;
  for (Index i = 0; i < n; ++i) {
    ssi += (features.row(i) - cluster_means.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  }
  stats.ssi = ssi / static_cast<double>(v);

  if (stats.sst <= 0.0) {
    stats.degenerate = true;
    stats.r_squared = 0.0;
  } else {
    stats.r_squared = std::clamp(1.0 - stats.ssi / stats.sst, 0.0, 1.0);
  }
  return stats;
}

std::vector<std::optional<double>> r2_ratio(const std::vector<ClusterStats>& without_mix,
                                            const std::vector<ClusterStats>& with_mix) {
  if (without_mix.size() != with_mix.size()) {
    throw DimensionError("r2_ratio: " + std::to_string(without_mix.size()) + " vs " + std::to_string(with_mix.size()) +
                         " states");
  }
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < with_mix.size(); ++i) {
    if (with_mix[i].r_squared > 0.0) {
      out.push_back(without_mix[i].r_squared / with_mix[i].r_squared);
    } else {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace flowmix
