#include <gtest/gtest.h>

#include <random>

#include "flowadapter/core/ops.hpp"
#include "flowadapter/core/optim.hpp"
#include "gradcheck.hpp"

namespace fa::ag {
namespace {

using testing::check_gradients;
using testing::random_matrix;

constexpr double kTol = 1e-6;

void expect_grads_ok(const std::function<Var()>& loss, const ParamList& params) {
  for (const auto& r : check_gradients(loss, params)) EXPECT_LT(r.relative_error, kTol) << r.name;
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  Var p(int r, int c, double sd = 1.0) { return parameter(random_matrix(r, c, rng, sd)); }
  // Random fixed projection so the loss exercises every output entry.
  Var probe(const Var& x) { return sum(mul(x, constant(random_matrix(x.rows(), x.cols(), rng)))); }
};

TEST_F(OpGradients, MatmulFamily) {
  Var a = p(3, 4), b = p(4, 5), bt = p(5, 4), bias = p(1, 5);
  Matrix w1 = random_matrix(3, 5, rng);
  expect_grads_ok([&] { return sum(mul(matmul(a, b), constant(w1))); }, {{"a", a}, {"b", b}});
  expect_grads_ok([&] { return sum(mul(matmul_nt(a, bt), constant(w1))); }, {{"a", a}, {"bt", bt}});
  expect_grads_ok([&] { return sum(mul(linear(a, b, bias), constant(w1))); }, {{"a", a}, {"b", b}, {"bias", bias}});
}

TEST_F(OpGradients, InverseAndDiag) {
  Matrix m = random_matrix(4, 4, rng, 0.3);
  for (int i = 0; i < 4; ++i) m(i, i) += 2.0;
  Var a = parameter(m);
  Var d = p(1, 4);
  Matrix w = random_matrix(4, 4, rng);
  expect_grads_ok([&] { return sum(mul(inverse(a), constant(w))); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(diag_embed(d), constant(w))); }, {{"d", d}});
}

TEST_F(OpGradients, ElementwiseAndBroadcast) {
  Var a = p(3, 4), b = p(3, 4), r = p(1, 4);
  Matrix w = random_matrix(3, 4, rng);
  Var cw = constant(w);
  expect_grads_ok([&] { return sum(mul(add(a, b), cw)); }, {{"a", a}, {"b", b}});
  expect_grads_ok([&] { return sum(mul(sub(a, b), cw)); }, {{"a", a}, {"b", b}});
  expect_grads_ok([&] { return sum(mul(mul(a, b), cw)); }, {{"a", a}, {"b", b}});
  expect_grads_ok([&] { return sum(mul(add_row(a, r), cw)); }, {{"a", a}, {"r", r}});
  expect_grads_ok([&] { return sum(mul(mul_row(a, r), cw)); }, {{"a", a}, {"r", r}});
  expect_grads_ok([&] { return sum(mul(expand_rows(r, 3), cw)); }, {{"r", r}});
  expect_grads_ok([&] { return sum(mul(add_scalar(scale(a, -1.5), 2.0), cw)); }, {{"a", a}});
}

TEST_F(OpGradients, Nonlinearities) {
  Var a = p(3, 4);
  Var cw = constant(random_matrix(3, 4, rng));
  expect_grads_ok([&] { return sum(mul(tanh(a), cw)); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(sigmoid(a), cw)); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(exp(a), cw)); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(square(a), cw)); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(relu(a), cw)); }, {{"a", a}});
}

TEST_F(OpGradients, ReductionsAndShapes) {
  Var a = p(3, 6), b = p(3, 2);
  Var cw = constant(random_matrix(3, 1, rng));
  expect_grads_ok([&] { return mean(a); }, {{"a", a}});
  expect_grads_ok([&] { return sum(mul(row_sum(a), cw)); }, {{"a", a}});
  Matrix w = random_matrix(3, 3, rng);
  expect_grads_ok([&] { return sum(mul(slice_cols(a, 2, 5), constant(w))); }, {{"a", a}});
  Matrix w2 = random_matrix(3, 8, rng);
  expect_grads_ok([&] { return sum(mul(concat_cols({a, b}), constant(w2))); }, {{"a", a}, {"b", b}});
  std::vector<int> idx{2, 0, 2, 1};
  Matrix w3 = random_matrix(4, 6, rng);
  expect_grads_ok([&] { return sum(mul(gather_rows(a, idx), constant(w3))); }, {{"a", a}});
}

TEST_F(OpGradients, LayerNorm) {
  Var x = p(4, 6), g = p(1, 6), b = p(1, 6);
  Matrix w = random_matrix(4, 6, rng);
  expect_grads_ok([&] { return sum(mul(layer_norm(x, g, b), constant(w))); }, {{"x", x}, {"g", g}, {"b", b}});
}

TEST_F(OpGradients, AttentionWithMasks) {
  for (bool causal : {false, true}) {
    kernels::AttentionShape s{.batch = 2, .q_len = 3, .k_len = 3, .heads = 2, .dim = 4, .causal = causal};
    std::vector<int> lens{3, 2};
    Var q = p(6, 4), k = p(6, 4), v = p(6, 4);
    Matrix w = random_matrix(6, 4, rng);
    expect_grads_ok([&] { return sum(mul(attention(q, k, v, s, lens), constant(w))); }, {{"q", q}, {"k", k}, {"v", v}});
  }
}

TEST_F(OpGradients, SegmentPoolingAndCrossEntropy) {
  std::vector<int> lens{3, 2};
  Var h = p(8, 3);
  Matrix w = random_matrix(2, 3, rng);
  expect_grads_ok([&] { return sum(mul(segment_max(h, 2, 4, lens), constant(w))); }, {{"h", h}});
  expect_grads_ok([&] { return sum(mul(segment_mean(h, 2, 4, lens), constant(w))); }, {{"h", h}});
  Var logits = p(5, 7);
  std::vector<int> targets{1, -1, 6, 0, -1};
  expect_grads_ok([&] { return cross_entropy(logits, targets, -1); }, {{"logits", logits}});
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var x = parameter(Matrix(1, 1, 3.0));
  Var y = mul(x, x);
  Var z = add(y, y);  // 2 x^2
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  Var x = parameter(Matrix(1, 1, 2.0));
  Var y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, CrossEntropyMatchesHandComputed) {
  Var logits = constant(Matrix::of(1, 3, {0.0, 0.0, 0.0}));
  std::vector<int> t{2};
  EXPECT_NEAR(cross_entropy(logits, t, -1).item(), std::log(3.0), 1e-12);
}

TEST(Optim, ClipScalesToMaxNorm) {
  Var a = parameter(Matrix(1, 2));
  a.mutable_grad() = Matrix::of(1, 2, {3.0, 4.0});
  ParamList ps{{"a", a}};
  EXPECT_DOUBLE_EQ(optim::clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-12);
}

TEST(Optim, AdamMinimizesQuadratic) {
  Var x = parameter(Matrix::of(1, 2, {3.0, -2.0}));
  optim::Adam adam({{"x", x}}, {.lr = 0.1});
  for (int i = 0; i < 500; ++i) {
    adam.zero_grad();
    sum(square(x)).backward();
    adam.step();
  }
  EXPECT_LT(x.value().max_abs(), 1e-2);
}

}  // namespace
}  // namespace fa::ag
