#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowmix/data.hpp"

using namespace flowmix;
namespace fs = std::filesystem;

namespace {

double empirical_phi(const LabelMatrix& labels, Index a, Index b) {
  const double n = static_cast<double>(labels.rows());
  const double pa = labels.col(a).mean();
  const double pb = labels.col(b).mean();
  const double pab = (labels.col(a).array() * labels.col(b).array()).mean();
  return (pab - pa * pb) / std::sqrt(pa * (1 - pa) * pb * (1 - pb) + 1e-300) + 0.0 * n;
}

GeneratorConfig small_config(Index n, Index classes) {
  GeneratorConfig cfg;
  cfg.num_samples = n;
  cfg.num_classes = classes;
  cfg.feature_shape = {1, 8};
  return cfg;
}

}  // namespace

TEST_CASE("tetrachoric calibration round-trips the requested correlation") {
  for (double rho : {0.1, 0.3, 0.6, 0.8}) {
    const double r = detail::gaussian_corr_for_binary(0.3, 0.4, rho, 0, 1);
    CHECK(detail::binary_corr_from_gaussian(0.3, 0.4, r) == doctest::Approx(rho).epsilon(1e-6));
  }
  CHECK(detail::normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(detail::normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-5));
  CHECK(detail::bivariate_normal_cdf(0.0, 0.0, 0.0) == doctest::Approx(0.25).epsilon(1e-12));
  // Classic closed form: Phi2(0,0;r) = 1/4 + asin(r)/(2 pi).
  CHECK(detail::bivariate_normal_cdf(0.0, 0.0, 0.5) ==
        doctest::Approx(0.25 + std::asin(0.5) / (2 * std::numbers::pi)).epsilon(1e-10));
}

TEST_CASE("identity correlation yields near-independent labels") {
  GeneratorConfig cfg = small_config(5000, 8);
  Dataset data = generate_synthetic(cfg, 101);
  REQUIRE(data.size() == 5000);
  for (Index a = 0; a < 8; ++a) {
    for (Index b = a + 1; b < 8; ++b) CHECK(std::abs(empirical_phi(data.labels, a, b)) < 0.05);
  }
}

TEST_CASE("correlation 1.0 with equal marginals couples the labels bit for bit") {
  GeneratorConfig cfg = small_config(2000, 3);
  cfg.marginals = (Eigen::VectorXd(3) << 0.3, 0.3, 0.45).finished();
  cfg.correlation = Eigen::MatrixXd::Identity(3, 3);
  cfg.correlation(0, 1) = cfg.correlation(1, 0) = 1.0;
  Dataset data = generate_synthetic(cfg, 102);
  CHECK((data.labels.col(0).array() == data.labels.col(1).array()).all());
}

TEST_CASE("requested rho 0.6 lands within [0.5, 0.7] empirically") {
  GeneratorConfig cfg = small_config(5000, 8);
  cfg.correlation = Eigen::MatrixXd::Identity(8, 8);
  cfg.correlation(1, 2) = cfg.correlation(2, 1) = 0.6;
  Dataset data = generate_synthetic(cfg, 103);
  const double phi = empirical_phi(data.labels, 1, 2);
  CHECK(phi > 0.5);
  CHECK(phi < 0.7);
}

TEST_CASE("infeasible correlation targets raise a generation error naming the pair") {
  GeneratorConfig cfg = small_config(10, 2);
  cfg.marginals = (Eigen::VectorXd(2) << 0.1, 0.9).finished();
  cfg.correlation = Eigen::MatrixXd::Identity(2, 2);
  cfg.correlation(0, 1) = cfg.correlation(1, 0) = 0.9;
  CHECK_THROWS_WITH_AS(generate_synthetic(cfg, 104), doctest::Contains("classes 0 and 1"), GenerationError);
}

TEST_CASE("generated samples always carry at least one positive label") {
  Dataset data = generate_synthetic(small_config(3000, 3), 105);
  for (Index i = 0; i < data.size(); ++i) CHECK(data.labels.row(i).sum() >= 1.0);
  CHECK(data.features.allFinite());
}

TEST_CASE("generator is deterministic under seed and distinct across seeds") {
  GeneratorConfig cfg = small_config(200, 4);
  Dataset a = generate_synthetic(cfg, 7);
  Dataset b = generate_synthetic(cfg, 7);
  Dataset c = generate_synthetic(cfg, 8);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.features != c.features);
}

TEST_CASE("image-shaped features generate with class templates") {
  GeneratorConfig cfg;
  cfg.num_samples = 50;
  cfg.num_classes = 3;
  cfg.feature_shape = {1, 8, 8};
  Dataset data = generate_synthetic(cfg, 9);
  CHECK(data.feature_numel() == 64);
  CHECK(data.features.allFinite());
}

TEST_CASE("split: 1000 samples at 7:1:2 gives 700/100/200, deterministic and exhaustive") {
  Dataset data = generate_synthetic(small_config(1000, 3), 11);
  SplitResult s1 = split(data, SplitRatios{}, 42);
  CHECK(s1.train.size() == 700);
  CHECK(s1.valid.size() == 100);
  CHECK(s1.test.size() == 200);

  SplitResult s2 = split(data, SplitRatios{}, 42);
  CHECK(s1.train_idx == s2.train_idx);
  CHECK(s1.valid_idx == s2.valid_idx);
  CHECK(s1.test_idx == s2.test_idx);

  std::vector<bool> seen(1000, false);
  for (const auto* part : {&s1.train_idx, &s1.valid_idx, &s1.test_idx}) {
    for (Index i : *part) {
      CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
      seen[static_cast<std::size_t>(i)] = true;
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool v) { return v; }));
}

TEST_CASE("split rejects ratios that do not sum to 1 or leave a part empty") {
  Dataset data = generate_synthetic(small_config(5, 2), 12);
  CHECK_THROWS_AS(split(data, SplitRatios{0.5, 0.2, 0.2}, 1), ConfigError);
  CHECK_THROWS_AS(split(data, SplitRatios{}, 1), ConfigError);  // 5 samples -> empty validation part
}

TEST_CASE("corruption r=0 is the identity with an all-false mask") {
  Dataset data = generate_synthetic(small_config(300, 4), 13);
  CorruptionSpec spec;
  spec.rate = 0.0;
  spec.seed = 5;
  Dataset out = corrupt_labels(data, spec);
  CHECK(out.labels == data.labels);
  CHECK(out.corrupted);
  CHECK(std::none_of(out.corruption_mask.begin(), out.corruption_mask.end(), [](auto b) { return b != 0; }));
  CHECK(label_checksum(out) == label_checksum(data));
}

TEST_CASE("corruption r=1 resamples every row from the empirical marginals") {
  Dataset data = generate_synthetic(small_config(5000, 4), 14);
  const Eigen::VectorXd marginals = data.class_marginals();
  CorruptionSpec spec;
  spec.rate = 1.0;
  spec.seed = 6;
  Dataset out = corrupt_labels(data, spec);
  CHECK(std::all_of(out.corruption_mask.begin(), out.corruption_mask.end(), [](auto b) { return b != 0; }));
  const Eigen::VectorXd after = out.class_marginals();
  for (Index c = 0; c < 4; ++c) {
    const double sigma = std::sqrt(marginals[c] * (1 - marginals[c]) / 5000.0);
    CHECK(std::abs(after[c] - marginals[c]) < 3.0 * sigma);
  }
}

TEST_CASE("corruption r=0.4 touches a 0.4 +- 0.02 fraction at n=5000") {
  Dataset data = generate_synthetic(small_config(5000, 4), 15);
  CorruptionSpec spec;
  spec.rate = 0.4;
  spec.seed = 7;
  Dataset out = corrupt_labels(data, spec);
  double touched = 0;
  for (auto b : out.corruption_mask) touched += b;
  const double fraction = touched / 5000.0;
  CHECK(std::abs(fraction - 0.4) < 0.02);
}

TEST_CASE("per-bit-flip corruption flips bits independently") {
  Dataset data = generate_synthetic(small_config(4000, 4), 16);
  CorruptionSpec spec;
  spec.rate = 0.25;
  spec.scheme = CorruptionSpec::Scheme::per_bit_flip;
  spec.seed = 8;
  Dataset out = corrupt_labels(data, spec);
  double flipped = 0;
  for (Index i = 0; i < data.size(); ++i) {
    for (Index c = 0; c < 4; ++c) flipped += data.labels(i, c) != out.labels(i, c) ? 1 : 0;
  }
  const double rate = flipped / (4000.0 * 4.0);
  CHECK(std::abs(rate - 0.25) < 0.02);
}

TEST_CASE("corruption is guarded against double application and is seed-deterministic") {
  Dataset data = generate_synthetic(small_config(100, 3), 17);
  CorruptionSpec spec;
  spec.rate = 0.5;
  spec.seed = 9;
  Dataset once = corrupt_labels(data, spec);
  CHECK_THROWS_AS(corrupt_labels(once, spec), StateError);
  Dataset again = corrupt_labels(data, spec);
  CHECK(once.labels == again.labels);
}

TEST_CASE("FLXD1 round trip is bit-identical including sidecar fields") {
  Dataset data = generate_synthetic(small_config(40, 3), 18);
  CorruptionSpec spec;
  spec.rate = 0.3;
  spec.seed = 10;
  Dataset corrupted = corrupt_labels(data, spec);

  const std::string path = (fs::temp_directory_path() / "flxd_roundtrip.flxd").string();
  save_dataset(corrupted, path);
  Dataset loaded = load_dataset(path);
  CHECK(loaded.feature_shape == corrupted.feature_shape);
  CHECK(loaded.features == corrupted.features);
  CHECK(loaded.labels == corrupted.labels);
  CHECK(loaded.class_names == corrupted.class_names);
  CHECK(loaded.corrupted == corrupted.corrupted);
  CHECK(loaded.corruption_mask == corrupted.corruption_mask);
  fs::remove(path);
  fs::remove(path + ".json");
}

TEST_CASE("truncated FLXD1 file raises a parse error with a byte offset") {
  Dataset data = generate_synthetic(small_config(10, 2), 19);
  const std::string path = (fs::temp_directory_path() / "flxd_trunc.flxd").string();
  save_dataset(data, path);
  fs::resize_file(path, fs::file_size(path) - 5);
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("byte offset"), ParseError);
  fs::remove(path);
  fs::remove(path + ".json");
}

TEST_CASE("empty dataset round-trips with a valid header") {
  Dataset empty;
  empty.feature_shape = {1, 4};
  empty.features.resize(0, 4);
  empty.labels.resize(0, 3);
  empty.class_names = {"a", "b", "c"};
  const std::string path = (fs::temp_directory_path() / "flxd_empty.flxd").string();
  save_dataset(empty, path);
  Dataset loaded = load_dataset(path);
  CHECK(loaded.size() == 0);
  CHECK(loaded.num_classes() == 3);
  CHECK(loaded.feature_shape == Shape{1, 4});
  fs::remove(path);
  fs::remove(path + ".json");
}

TEST_CASE("bad magic raises a parse error at offset 0") {
  const std::string path = (fs::temp_directory_path() / "flxd_magic.flxd").string();
  std::ofstream os(path, std::ios::binary);
  os << "NOPE!" << std::string(64, '\0');
  os.close();
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("magic"), ParseError);
  fs::remove(path);
}

TEST_CASE("CSV import reads tiny fixtures and reports malformed rows") {
  const std::string path = (fs::temp_directory_path() / "fixture.csv").string();
  {
    std::ofstream os(path);
    os << "0.5,1.5,1,0\n";
    os << "-0.25,2.0,0,1\n";
  }
  Dataset data = load_csv(path, Shape{2}, 2);
  REQUIRE(data.size() == 2);
  CHECK(data.features(0, 0) == 0.5);
  CHECK(data.features(1, 1) == 2.0);
  CHECK(data.labels(0, 0) == 1.0);
  CHECK(data.labels(1, 1) == 1.0);

  {
    std::ofstream os(path);
    os << "0.5,1.5,2,0\n";  // label bit out of range
  }
  CHECK_THROWS_WITH_AS(load_csv(path, Shape{2}, 2), doctest::Contains("line 1"), ParseError);
  {
    std::ofstream os(path);
    os << "0.5,1.5,1\n";  // missing field
  }
  CHECK_THROWS_AS(load_csv(path, Shape{2}, 2), ParseError);
  fs::remove(path);
}

TEST_CASE("independent ratio: 10 images with the class, 4 single-labeled -> 0.4") {
  Dataset data;
  data.feature_shape = {1};
  data.features.resize(12, 1);
  data.features.setZero();
  data.labels = LabelMatrix::Zero(12, 2);
  for (Index i = 0; i < 10; ++i) data.labels(i, 0) = 1.0;  // class 0 in 10 samples
  for (Index i = 4; i < 10; ++i) data.labels(i, 1) = 1.0;  // 6 of them also carry class 1
  data.labels(10, 1) = 1.0;
  data.labels(11, 1) = 1.0;
  const Eigen::VectorXd ratios = data.independent_ratios();
  CHECK(ratios[0] == doctest::Approx(0.4));
  CHECK(ratios[1] == doctest::Approx(0.25));  // 2 of 8

  Dataset no_class;
  no_class.feature_shape = {1};
  no_class.features.resize(2, 1);
  no_class.features.setZero();
  no_class.labels = LabelMatrix::Zero(2, 2);
  no_class.labels(0, 0) = 1.0;
  no_class.labels(1, 0) = 1.0;
  CHECK(std::isnan(no_class.independent_ratios()[1]));  // m_c = 0 marker
}
