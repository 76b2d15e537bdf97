#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "flowmix/checkpoint.hpp"
#include "flowmix/gradcheck.hpp"
#include "flowmix/ops.hpp"
#include "test_util.hpp"

using namespace flowmix;
namespace tu = flowmix::testutil;

TEST_CASE("FlowTensor validates shape against data length") {
  CHECK_THROWS_AS(FlowTensor(Shape{2, 2}, ArrayXd::Zero(3)), DimensionError);
  FlowTensor t(Shape{2, 1, 3});
  CHECK(t.numel() == 6);
  CHECK(t.batch() == 2);
  CHECK(t.flow() == 1);
  CHECK(t.feature_numel() == 3);
}

TEST_CASE("dense_forward identity and affine examples") {
  Tape tape;
  // 2x2 identity, zero bias
  Var x = tape.input(FlowTensor(Shape{1, 1, 2}, (ArrayXd(2) << 1, 2).finished()));
  Var w = tape.input(FlowTensor(Shape{2, 2}, (ArrayXd(4) << 1, 0, 0, 1).finished()));
  Var b = tape.input(FlowTensor(Shape{2}, ArrayXd::Zero(2)));
  Var y = dense_forward(tape, x, w, b);
  CHECK(tape.value(y).array()[0] == 1.0);
  CHECK(tape.value(y).array()[1] == 2.0);

  // scalar affine: 3*2 + 1 = 7
  Var x2 = tape.input(FlowTensor(Shape{1, 1, 1}, (ArrayXd(1) << 3).finished()));
  Var w2 = tape.input(FlowTensor(Shape{1, 1}, (ArrayXd(1) << 2).finished()));
  Var b2 = tape.input(FlowTensor(Shape{1}, (ArrayXd(1) << 1).finished()));
  CHECK(tape.value(dense_forward(tape, x2, w2, b2)).array()[0] == 7.0);
}

TEST_CASE("dense_forward shape rule and mismatch error") {
  std::mt19937_64 rng(1);
  Tape tape;
  Var x = tape.input(tu::random_tensor({4, 3, 5}, rng));
  Var w = tape.input(tu::random_tensor({5, 2}, rng));
  Var b = tape.input(FlowTensor(Shape{2}));
  CHECK(tape.shape(dense_forward(tape, x, w, b)) == Shape{4, 3, 2});

  Var wbad = tape.input(tu::random_tensor({4, 2}, rng));
  CHECK_THROWS_WITH_AS(dense_forward(tape, x, wbad, b), doctest::Contains("(4,3,5)"), DimensionError);
}

TEST_CASE("conv1d identity kernel, box sum, shape rule") {
  std::mt19937_64 rng(2);
  Tape tape;
  Var x = tape.input(tu::random_tensor({2, 1, 1, 6}, rng));
  Var k_id = tape.input(FlowTensor(Shape{1, 1, 3}, (ArrayXd(3) << 0, 1, 0).finished()));
  Var y = conv1d_forward(tape, x, k_id, 1);
  CHECK((tape.value(y).array() == tape.value(x).array()).all());

  Var ones = tape.input(FlowTensor(Shape{1, 1, 1, 4}, ArrayXd::Ones(4)));
  Var k_box = tape.input(FlowTensor(Shape{1, 1, 3}, ArrayXd::Ones(3)));
  Var sums = conv1d_forward(tape, ones, k_box, 1);
  const ArrayXd& s = tape.value(sums).array();
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 3.0);
  CHECK(s[2] == 3.0);
  CHECK(s[3] == 2.0);

  Var x10 = tape.input(tu::random_tensor({1, 1, 2, 10}, rng));
  Var k2 = tape.input(tu::random_tensor({3, 2, 3}, rng));
  CHECK(tape.shape(conv1d_forward(tape, x10, k2, 2)) == Shape{1, 1, 3, 5});

  CHECK_THROWS_AS(conv1d_forward(tape, x10, k2, 0), ConfigError);
}

TEST_CASE("elementwise and pooling examples") {
  Tape tape;
  Var x = tape.input(FlowTensor(Shape{1, 1, 2}, (ArrayXd(2) << -1, 2).finished()));
  const ArrayXd& r = tape.value(relu(tape, x)).array();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);

  Var zero = tape.input(FlowTensor(Shape{1, 1, 1}));
  CHECK(tape.value(sigmoid(tape, zero)).array()[0] == 0.5);

  Var g = tape.input(FlowTensor(Shape{1, 1, 1, 2}, (ArrayXd(2) << 1, 3).finished()));
  Var pooled = global_avg_pool(tape, g);
  CHECK(tape.shape(pooled) == Shape{1, 1, 1});
  CHECK(tape.value(pooled).array()[0] == 2.0);

  Var nan_in = tape.input(FlowTensor(Shape{1, 1, 1}, (ArrayXd(1) << std::nan("")).finished()));
  CHECK_THROWS_AS(relu(tape, nan_in), NumericError);
}

TEST_CASE("backward: x^2 at x=3 gives 6, sum(Wx) gives outer structure of x") {
  Parameter px("x", Shape{1, 1}, (ArrayXd(1) << 3).finished());
  Tape tape;
  Var x = tape.param(px);
  Var loss = reduce_sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK(px.grad[0] == doctest::Approx(6.0));

  Parameter pw("W", Shape{3, 2}, ArrayXd::Random(6));
  Tape tape2;
  ArrayXd xv = (ArrayXd(3) << 1.5, -2.0, 0.25).finished();
  Var xin = tape2.input(FlowTensor(Shape{1, 1, 3}, xv));
  Var w = tape2.param(pw);
  Var b = tape2.input(FlowTensor(Shape{2}));
  Var loss2 = reduce_sum(tape2, dense_forward(tape2, xin, w, b));
  tape2.backward(loss2);
  // d sum(xW) / dW_ij = x_i for every output column j
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) CHECK(pw.grad[i * 2 + j] == doctest::Approx(xv[i]));
  }
}

TEST_CASE("backward twice without a new forward is a state error") {
  Parameter px("x", Shape{1, 1}, (ArrayXd(1) << 2).finished());
  Tape tape;
  Var x = tape.param(px);
  Var loss = reduce_sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), StateError);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Var x = tape.input(FlowTensor(Shape{1, 1, 2}, (ArrayXd(2) << 1, 2).finished()));
  CHECK_THROWS_AS(tape.backward(x), DimensionError);
}

namespace {

// Generic finite-difference harness over explicit ops.
double two_layer_loss(Parameter& w1, Parameter& b1, Parameter& w2, Parameter& b2, const FlowTensor& x,
                      bool with_grad) {
  Tape tape;
  Var xin = tape.input(FlowTensor(x.shape(), x.array()));
  Var h = relu(tape, dense_forward(tape, xin, tape.param(w1), tape.param(b1)));
  Var out = sigmoid(tape, dense_forward(tape, h, tape.param(w2), tape.param(b2)));
  Var loss = reduce_sum(tape, mul(tape, out, out));
  const double v = tape.value(loss).array()[0];
  if (with_grad) {
    w1.zero_grad();
    b1.zero_grad();
    w2.zero_grad();
    b2.zero_grad();
    tape.backward(loss);
  }
  return v;
}

}  // namespace

TEST_CASE("two-layer dense net matches central finite differences") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 0.8);
  Parameter w1("w1", Shape{3, 4}), b1("b1", Shape{4}), w2("w2", Shape{4, 2}), b2("b2", Shape{2});
  for (auto* p : {&w1, &w2}) {
    for (Index i = 0; i < p->numel(); ++i) p->value[i] = normal(rng);
  }
  // Biases pushed away from zero keep every relu input off its kink.
  b1.value = (ArrayXd(4) << 0.9, -0.7, 1.1, 0.6).finished();
  FlowTensor x = tu::random_tensor({5, 1, 3}, rng);

  auto loss = [&](bool g) { return two_layer_loss(w1, b1, w2, b2, x, g); };
  GradCheckReport report = finite_diff_check({&w1, &b1, &w2, &b2}, loss, 1e-5);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("finite_diff_check on a purely linear net is exact to 1e-8") {
  std::mt19937_64 rng(8);
  Parameter w("w", Shape{3, 2}, ArrayXd::Random(6));
  Parameter b("b", Shape{2}, ArrayXd::Random(2));
  FlowTensor x = tu::random_tensor({4, 1, 3}, rng);
  auto loss = [&](bool g) {
    Tape tape;
    Var out = dense_forward(tape, tape.input(FlowTensor(x.shape(), x.array())), tape.param(w), tape.param(b));
    Var l = reduce_sum(tape, out);
    if (g) {
      w.zero_grad();
      b.zero_grad();
      tape.backward(l);
    }
    return tape.value(l).array()[0];
  };
  GradCheckReport report = finite_diff_check({&w, &b}, loss, 1e-5);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("conv1d and conv2d gradients match finite differences") {
  std::mt19937_64 rng(9);
  Parameter k1("k1", Shape{2, 2, 3});
  for (Index i = 0; i < k1.numel(); ++i) k1.value[i] = 0.3 * std::normal_distribution<double>()(rng);
  FlowTensor x1 = tu::random_tensor({2, 2, 2, 7}, rng);
  auto loss1 = [&](bool g) {
    Tape tape;
    Var out = conv1d_forward(tape, tape.input(FlowTensor(x1.shape(), x1.array())), tape.param(k1), 2);
    Var l = reduce_sum(tape, mul(tape, out, out));
    if (g) {
      k1.zero_grad();
      tape.backward(l);
    }
    return tape.value(l).array()[0];
  };
  CHECK(finite_diff_check({&k1}, loss1, 1e-5).max_rel_err < 1e-4);

  Parameter k2("k2", Shape{2, 1, 3, 3});
  for (Index i = 0; i < k2.numel(); ++i) k2.value[i] = 0.3 * std::normal_distribution<double>()(rng);
  FlowTensor x2 = tu::random_tensor({2, 1, 1, 5, 6}, rng);
  auto loss2 = [&](bool g) {
    Tape tape;
    Var out = conv2d_forward(tape, tape.input(FlowTensor(x2.shape(), x2.array())), tape.param(k2), 2);
    Var l = reduce_sum(tape, mul(tape, out, out));
    if (g) {
      k2.zero_grad();
      tape.backward(l);
    }
    return tape.value(l).array()[0];
  };
  CHECK(finite_diff_check({&k2}, loss2, 1e-5).max_rel_err < 1e-4);
}

TEST_CASE("flow-axis transparency: layers commute with flow-slot permutations") {
  std::mt19937_64 rng(10);
  const std::vector<Index> perm{2, 0, 3, 1};
  const std::vector<Index> inv{1, 3, 0, 2};

  FlowTensor x = tu::random_tensor({3, 4, 2, 6}, rng);
  FlowTensor xp = tu::permute_flow(x, perm);
  Parameter k("k", Shape{2, 2, 3}, ArrayXd::Random(12));

  Tape tape;
  Var direct = conv1d_forward(tape, tape.input(FlowTensor(x.shape(), x.array())), tape.param(k), 1);
  Var permuted = conv1d_forward(tape, tape.input(FlowTensor(xp.shape(), xp.array())), tape.param(k), 1);
  FlowTensor unpermuted = tu::permute_flow(tape.value(permuted), inv);
  CHECK((tape.value(direct).array() == unpermuted.array()).all());

  Parameter w("w", Shape{12, 5}, ArrayXd::Random(60));
  Parameter b("b", Shape{5}, ArrayXd::Random(5));
  FlowTensor xd = tu::random_tensor({3, 4, 12}, rng);
  FlowTensor xdp = tu::permute_flow(xd, perm);
  Var d_direct = dense_forward(tape, tape.input(FlowTensor(xd.shape(), xd.array())), tape.param(w), tape.param(b));
  Var d_perm = dense_forward(tape, tape.input(FlowTensor(xdp.shape(), xdp.array())), tape.param(w), tape.param(b));
  CHECK((tape.value(d_direct).array() == tu::permute_flow(tape.value(d_perm), inv).array()).all());
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  std::mt19937_64 rng(11);
  FlowTensor x = tu::random_tensor({2, 1, 2, 8}, rng);
  Parameter k("k", Shape{3, 2, 3}, ArrayXd::Random(18));
  auto run = [&]() {
    Tape tape;
    Var out = relu(tape, conv1d_forward(tape, tape.input(FlowTensor(x.shape(), x.array())), tape.param(k), 2));
    return ArrayXd(tape.value(out).array());
  };
  const ArrayXd a = run();
  const ArrayXd b = run();
  CHECK((a == b).all());
}

TEST_CASE("FLXW1 checkpoints round-trip bitwise and reject truncation") {
  std::vector<Parameter> params;
  params.emplace_back("block0.kernel", Shape{2, 1, 3}, ArrayXd::Random(6));
  params.emplace_back("head.weight", Shape{4, 3}, ArrayXd::Random(12));
  params.emplace_back("head.bias", Shape{3}, ArrayXd::Random(3));

  const std::string path = (std::filesystem::temp_directory_path() / "flxw_test.flxw").string();
  save_checkpoint(path, params);
  std::vector<Parameter> loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded[i].name == params[i].name);
    CHECK(loaded[i].shape == params[i].shape);
    CHECK((loaded[i].value == params[i].value).all());
  }

  // Truncate and expect a parse error naming an offset.
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 9);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::filesystem::remove(path);
}
