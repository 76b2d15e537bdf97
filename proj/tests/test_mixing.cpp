#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowmix/gradcheck.hpp"
#include "flowmix/mixing.hpp"
#include "flowmix/rng.hpp"
#include "test_util.hpp"

using namespace flowmix;
namespace tu = flowmix::testutil;

namespace {

// Independent oracle: variance of Beta(a,a) via the product-form formula
// a*b / ((a+b)^2 (a+b+1)).
double beta_symmetric_variance(double alpha) {
  const double a = alpha, b = alpha;
  return a * b / ((a + b) * (a + b) * (a + b + 1.0));
}

MixSpec make_spec(double p, std::vector<Index> perm, bool op_forward, double alpha = 1.0) {
  MixSpec spec;
  spec.alpha = alpha;
  spec.op_forward = op_forward;
  spec.p = p;
  spec.permutation = std::move(perm);
  return spec;
}

}  // namespace

TEST_CASE("sample_p: Beta(1,1) is uniform on [0,1]") {
  std::mt19937_64 rng = substream(123, "mix");
  const int n = 100000;
  double sum = 0.0;
  std::vector<int> bins(10, 0);
  for (int i = 0; i < n; ++i) {
    const double p = sample_p(1.0, rng);
    REQUIRE(p >= 0.0);
    REQUIRE(p <= 1.0);
    sum += p;
    ++bins[std::min(9, static_cast<int>(p * 10.0))];
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
  // Chi-squared over 10 equiprobable bins; 27.88 is the 0.999 quantile at
  // 9 dof, so p-value > 0.001 means the statistic stays below it.
  double chi2 = 0.0;
  const double expected = n / 10.0;
  for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
  CHECK(chi2 < 27.877);
}

TEST_CASE("sample_p: Beta(3,3) mean and variance match the closed form") {
  std::mt19937_64 rng = substream(321, "mix");
  const int n = 100000;
  std::vector<double> draws(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    draws[i] = sample_p(3.0, rng);
    REQUIRE(draws[i] >= 0.0);
    REQUIRE(draws[i] <= 1.0);
    sum += draws[i];
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 0.01);
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= n;
  const double expected = beta_symmetric_variance(3.0);
  CHECK(expected == doctest::Approx(1.0 / 28.0));
  CHECK(std::abs(var - expected) < 0.1 * expected);
}

TEST_CASE("sample_p rejects non-positive alpha") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_p(0.0, rng), ConfigError);
  CHECK_THROWS_AS(sample_p(-1.0, rng), ConfigError);
}

TEST_CASE("mix_pair: p=0.5 swap averages rows; labels move identically") {
  FlowTensor z(Shape{2, 1, 1}, (ArrayXd(2) << 1, 3).finished());
  LabelMatrix y(2, 2);
  y << 1, 0, 0, 1;
  auto [zm, ym] = mix_pair(z, y, make_spec(0.5, {1, 0}, false));
  CHECK(zm.array()[0] == 2.0);
  CHECK(zm.array()[1] == 2.0);
  CHECK(ym(0, 0) == 0.5);
  CHECK(ym(0, 1) == 0.5);
  CHECK(ym(1, 0) == 0.5);
  CHECK(ym(1, 1) == 0.5);
}

TEST_CASE("mix_pair: p=1 is the identity on the mini-copy") {
  std::mt19937_64 rng(5);
  FlowTensor z = tu::random_tensor({4, 1, 3}, rng);
  LabelMatrix y = tu::random_labels(4, 2, rng);
  auto [zm, ym] = mix_pair(z, y, make_spec(1.0, {2, 3, 0, 1}, false));
  CHECK((zm.array() == z.array()).all());
  CHECK(ym == y);
}

TEST_CASE("mix_pair: p=0.6 label arithmetic") {
  FlowTensor z(Shape{2, 1, 1}, (ArrayXd(2) << 0, 0).finished());
  LabelMatrix y(2, 3);
  y << 1, 0, 1, 0, 0, 1;
  auto [zm, ym] = mix_pair(z, y, make_spec(0.6, {1, 0}, false));
  CHECK(ym(0, 0) == 0.6);
  CHECK(ym(0, 1) == 0.0);
  CHECK(ym(0, 2) == 1.0);
}

TEST_CASE("mix_pair rejects a permutation of the wrong length") {
  FlowTensor z(Shape{3, 1, 1});
  LabelMatrix y = LabelMatrix::Zero(3, 1);
  CHECK_THROWS_AS(mix_pair(z, y, make_spec(0.5, {1, 0}, false)), DimensionError);
}

TEST_CASE("mixing forward: op=true doubles the flow and keeps slot 0 bit-identical") {
  std::mt19937_64 rng(6);
  FlowTensor z = tu::random_tensor({4, 1, 8}, rng);
  MixSpec spec = make_spec(0.3, {1, 2, 3, 0}, true);
  FlowTensor out = mixing_apply(z, spec);
  CHECK(out.shape() == Shape{4, 2, 8});
  for (Index b = 0; b < 4; ++b) {
    for (Index v = 0; v < 8; ++v) CHECK(out.data()[(b * 2 + 0) * 8 + v] == z.data()[b * 8 + v]);
  }
}

TEST_CASE("mixing forward: degraded mode equals the direct Eq-style mix") {
  std::mt19937_64 rng(7);
  FlowTensor z = tu::random_tensor({4, 1, 8}, rng);
  LabelMatrix y = tu::random_labels(4, 3, rng);
  MixSpec spec = make_spec(0.7, {2, 0, 3, 1}, false);
  FlowTensor out = mixing_apply(z, spec);
  CHECK(out.shape() == Shape{4, 1, 8});
  auto [zm, ym] = mix_pair(z, y, spec);
  CHECK((out.array() == zm.array()).all());
  FlowLabels labels = mixing_apply_labels(FlowLabels(y), spec);
  CHECK(labels.flow() == 1);
  CHECK(labels.slots[0] == ym);
}

TEST_CASE("mixing forward: p=1 with op makes slot 1 the permuted slot 0") {
  std::mt19937_64 rng(8);
  FlowTensor z = tu::random_tensor({4, 1, 5}, rng);
  const std::vector<Index> perm{3, 2, 1, 0};
  FlowTensor out = mixing_apply(z, make_spec(1.0, perm, true));
  for (Index b = 0; b < 4; ++b) {
    for (Index v = 0; v < 5; ++v) {
      CHECK(out.data()[(b * 2 + 1) * 5 + v] == z.data()[b * 5 + v]);  // p=1 keeps row b itself
    }
  }
}

TEST_CASE("flow-size law holds for every F >= 1") {
  std::mt19937_64 rng(9);
  for (Index flow : {1, 2, 3, 5}) {
    FlowTensor z = tu::random_tensor({3, flow, 4}, rng);
    FlowLabels labels;
    for (Index f = 0; f < flow; ++f) labels.slots.push_back(tu::random_labels(3, 2, rng));
    MixSpec doubling = sample_mix_spec(2.0, true, 3, rng);
    MixSpec degraded = sample_mix_spec(2.0, false, 3, rng);
    CHECK(mixing_apply(z, doubling).flow() == 2 * flow);
    CHECK(mixing_apply(z, degraded).flow() == flow);
    CHECK(mixing_apply_labels(labels, doubling).flow() == 2 * flow);
    CHECK(mixing_apply_labels(labels, degraded).flow() == flow);
  }
}

TEST_CASE("label-feature consistency: sentinel rows stay aligned through the mix") {
  // Feature row b is the constant b; label row b one-hot at b. Any divergence
  // between the feature and label transforms breaks the equality below.
  const Index batch = 6;
  FlowTensor z(Shape{batch, 1, 2});
  LabelMatrix y = LabelMatrix::Zero(batch, batch);
  for (Index b = 0; b < batch; ++b) {
    z.data()[b * 2] = z.data()[b * 2 + 1] = static_cast<double>(b);
    y(b, b) = 1.0;
  }
  std::mt19937_64 rng(10);
  MixSpec spec = sample_mix_spec(3.0, true, batch, rng);
  FlowTensor zo = mixing_apply(z, spec);
  FlowLabels lo = mixing_apply_labels(FlowLabels(y), spec);
  for (Index b = 0; b < batch; ++b) {
    const double mixed_feat = zo.data()[(b * 2 + 1) * 2];
    double label_decode = 0.0;
    for (Index c = 0; c < batch; ++c) label_decode += lo.slots[1](b, c) * static_cast<double>(c);
    CHECK(mixed_feat == doctest::Approx(label_decode).epsilon(1e-12));
  }
}

TEST_CASE("mixed one-hot labels stay in [0,1] and sum to 1") {
  std::mt19937_64 rng(11);
  const Index batch = 8, classes = 4;
  LabelMatrix y = LabelMatrix::Zero(batch, classes);
  for (Index b = 0; b < batch; ++b) y(b, static_cast<Index>(rng() % classes)) = 1.0;
  for (int rep = 0; rep < 20; ++rep) {
    MixSpec spec = sample_mix_spec(0.7, false, batch, rng);
    FlowLabels mixed = mixing_apply_labels(FlowLabels(y), spec);
    for (Index b = 0; b < batch; ++b) {
      double row_sum = 0.0;
      for (Index c = 0; c < classes; ++c) {
        CHECK(mixed.slots[0](b, c) >= 0.0);
        CHECK(mixed.slots[0](b, c) <= 1.0);
        row_sum += mixed.slots[0](b, c);
      }
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("mixing_backward: identity permutation p=1 averages the branches") {
  FlowTensor grad_out(Shape{2, 2, 1}, (ArrayXd(4) << 2, 4, -4, 0).finished());
  MixSpec spec = make_spec(1.0, {0, 1}, true);
  FlowTensor grad_in = mixing_backward(grad_out, spec, 1);
  CHECK(grad_in.shape() == Shape{2, 1, 1});
  CHECK(grad_in.array()[0] == 3.0);
  CHECK(grad_in.array()[1] == -2.0);
}

TEST_CASE("mixing_backward: grad_m == grad' preserves the magnitude") {
  std::mt19937_64 rng(12);
  FlowTensor gp = tu::random_tensor({3, 1, 4}, rng);
  FlowTensor grad_out(Shape{3, 2, 4});
  for (Index b = 0; b < 3; ++b) {
    for (Index v = 0; v < 4; ++v) {
      grad_out.data()[(b * 2 + 0) * 4 + v] = gp.data()[b * 4 + v];
      grad_out.data()[(b * 2 + 1) * 4 + v] = gp.data()[b * 4 + v];
    }
  }
  MixSpec spec = make_spec(1.0, {0, 1, 2}, true);
  FlowTensor grad_in = mixing_backward(grad_out, spec, 1);
  CHECK((grad_in.array() == gp.array()).all());
}

TEST_CASE("mixing_backward equals half the finite-difference transpose of the forward map") {
  std::mt19937_64 rng(13);
  const Index batch = 3, width = 2;
  FlowTensor z = tu::random_tensor({batch, 1, width}, rng);
  MixSpec spec = make_spec(0.7, {1, 0, 2}, true);
  FlowTensor cotangent = tu::random_tensor({batch, 2, width}, rng);

  // FD of g(z) = <cotangent, forward(z)> gives the exact transpose map.
  const double eps = 1e-6;
  auto dot_forward = [&](const FlowTensor& zz) {
    FlowTensor out = mixing_apply(zz, spec);
    return (out.array() * cotangent.array()).sum();
  };
  FlowTensor fd(Shape{batch, 1, width});
  for (Index i = 0; i < z.numel(); ++i) {
    FlowTensor up(z.shape(), z.array()), down(z.shape(), z.array());
    up.array()[i] += eps;
    down.array()[i] -= eps;
    fd.array()[i] = (dot_forward(up) - dot_forward(down)) / (2 * eps);
  }

  const FlowTensor transpose = mixing_transpose(cotangent, spec, 1);
  const FlowTensor halved = mixing_backward(cotangent, spec, 1);
  for (Index i = 0; i < z.numel(); ++i) {
    CHECK(transpose.array()[i] == doctest::Approx(fd.array()[i]).epsilon(1e-4));
    CHECK(halved.array()[i] == doctest::Approx(0.5 * fd.array()[i]).epsilon(1e-4));
    CHECK(halved.array()[i] == 0.5 * transpose.array()[i]);
  }

  // Degraded mode: the routed gradient alone is the exact FD transpose.
  MixSpec degraded = make_spec(0.7, {1, 0, 2}, false);
  FlowTensor cot1 = tu::random_tensor({batch, 1, width}, rng);
  auto dot_degraded = [&](const FlowTensor& zz) {
    FlowTensor out = mixing_apply(zz, degraded);
    return (out.array() * cot1.array()).sum();
  };
  FlowTensor fd1(Shape{batch, 1, width});
  for (Index i = 0; i < z.numel(); ++i) {
    FlowTensor up(z.shape(), z.array()), down(z.shape(), z.array());
    up.array()[i] += eps;
    down.array()[i] -= eps;
    fd1.array()[i] = (dot_degraded(up) - dot_degraded(down)) / (2 * eps);
  }
  const FlowTensor routed = mixing_backward(cot1, degraded, 1);
  for (Index i = 0; i < z.numel(); ++i) {
    CHECK(routed.array()[i] == doctest::Approx(fd1.array()[i]).epsilon(1e-4));
  }
}

TEST_CASE("mixing_backward rejects a flow size that does not match the forward") {
  std::mt19937_64 rng(14);
  FlowTensor grad = tu::random_tensor({2, 3, 2}, rng);
  MixSpec spec = make_spec(0.5, {1, 0}, true);
  CHECK_THROWS_AS(mixing_backward(grad, spec, 1), StateError);
}

TEST_CASE("non-finite input to the mixing module is a numeric error") {
  FlowTensor z(Shape{2, 1, 1}, (ArrayXd(2) << 1.0, std::numeric_limits<double>::infinity()).finished());
  MixSpec spec = make_spec(0.5, {1, 0}, true);
  CHECK_THROWS_AS(mixing_apply(z, spec), NumericError);
}
