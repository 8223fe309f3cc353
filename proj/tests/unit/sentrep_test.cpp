#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"
#include "flowadapter/sentrep/sentrep.hpp"
#include "gradcheck.hpp"

namespace fa::sentrep {
namespace {

ProjectionMap identity_projection(int d, std::mt19937_64& rng) {
  ProjectionMap p(d, d, rng);
  p.map.weight.mutable_value() = Matrix::identity(d);
  return p;
}

EncoderStates states_of(const Matrix& rows, int batch, int max_len, std::vector<int> lengths) {
  return {ag::constant(rows), batch, max_len, std::move(lengths)};
}

TEST(Pool, IdenticalStatesGiveThreeTimesState) {
  std::mt19937_64 rng(1);
  Matrix h(4, 3);
  for (int i = 0; i < 4; ++i) h.row(i)[0] = 1.5, h.row(i)[1] = -2.0, h.row(i)[2] = 0.25;
  Matrix z = pool_representation(states_of(h, 1, 4, {4}), identity_projection(3, rng)).value();
  EXPECT_EQ(z, Matrix::of(1, 3, {4.5, -6.0, 0.75}));
}

TEST(Pool, HandComputedPools) {
  std::mt19937_64 rng(2);
  Matrix z = pool_representation(states_of(Matrix::of(2, 2, {1, -2, 3, 0}), 1, 2, {2}), identity_projection(2, rng))
                 .value();
  // max [3, 0] + mean [2, -1] + h0 [1, -2]
  EXPECT_EQ(z, Matrix::of(1, 2, {6, -3}));
}

TEST(Pool, OutputDimensionIndependentOfLength) {
  std::mt19937_64 rng(3);
  ProjectionMap proj(8, 6, rng);
  for (int len : {1, 2, 9, 30}) {
    Matrix z = pool_representation(states_of(testing::random_matrix(len, 8, rng), 1, len, {len}), proj).value();
    EXPECT_EQ(z.rows(), 1);
    EXPECT_EQ(z.cols(), 6);
  }
}

TEST(Pool, PaddingRowsAreIgnored) {
  std::mt19937_64 rng(4);
  ProjectionMap proj(4, 2, rng);
  Matrix h = testing::random_matrix(3, 4, rng);
  Matrix padded(5, 4, 1e6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) padded(i, j) = h(i, j);
  EXPECT_LT(max_abs_diff(pool_representation(states_of(h, 1, 3, {3}), proj).value(),
                         pool_representation(states_of(padded, 1, 5, {3}), proj).value()),
            1e-12);
}

TEST(Pool, InvariantToPermutingNonInitialStates) {
  std::mt19937_64 rng(5);
  ProjectionMap proj(5, 4, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int len = 2 + trial % 7;
    Matrix h = testing::random_matrix(len, 5, rng);
    std::vector<int> order(len);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin() + 1, order.end(), rng);
    Matrix permuted(len, 5);
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < 5; ++j) permuted(i, j) = h(order[i], j);
    EXPECT_LT(max_abs_diff(pool_representation(states_of(h, 1, len, {len}), proj).value(),
                           pool_representation(states_of(permuted, 1, len, {len}), proj).value()),
              1e-12);
  }
}

TEST(Pool, EmptyStatesRejected) {
  std::mt19937_64 rng(6);
  EXPECT_THROW(pool_representation(EncoderStates{}, identity_projection(2, rng)), UsageError);
  EXPECT_THROW(pool_representation(states_of(Matrix(2, 2), 1, 2, {0}), identity_projection(2, rng)), UsageError);
}

TEST(Gate, ZeroMapIsEvenMix) {
  std::mt19937_64 rng(7);
  GateParams gp(2, 2, rng);
  gp.gate.weight.mutable_value().fill(0.0);
  EXPECT_FALSE(gp.projects_latent());
  Matrix o = gate_fuse(ag::constant(Matrix::of(1, 2, {2, 0})), ag::constant(Matrix::of(1, 2, {0, 2})), gp).value();
  EXPECT_EQ(o, Matrix::of(1, 2, {1, 1}));
}

TEST(Gate, SaturatedGateLimits) {
  std::mt19937_64 rng(8);
  GateParams gp(4, 4, rng);
  ag::Var s = ag::constant(testing::random_matrix(3, 4, rng));
  ag::Var z = ag::constant(testing::random_matrix(3, 4, rng));
  gp.gate.bias.mutable_value().fill(-50.0);
  EXPECT_LT(max_abs_diff(gate_fuse(s, z, gp).value(), s.value()), 1e-8);
  gp.gate.bias.mutable_value().fill(50.0);
  EXPECT_LT(max_abs_diff(gate_fuse(s, z, gp).value(), z.value()), 1e-8);
}

TEST(Gate, OutputIsConvexCombination) {
  std::mt19937_64 rng(9);
  GateParams gp(6, 4, rng);
  testing::perturb({{"p", gp.latent_proj.weight}}, rng, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ag::Var s = ag::constant(testing::random_matrix(5, 6, rng, 3.0));
    ag::Var z = ag::constant(testing::random_matrix(5, 4, rng, 3.0));
    Matrix g = gate_values(s, z, gp).value();
    Matrix zp = gp.latent_proj(z).value();
    Matrix o = gate_fuse(s, z, gp).value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_GT(g[i], 0.0);
      EXPECT_LT(g[i], 1.0);
      const double lo = std::min(s.value()[i], zp[i]), hi = std::max(s.value()[i], zp[i]);
      EXPECT_GE(o[i], lo - 1e-12);
      EXPECT_LE(o[i], hi + 1e-12);
    }
  }
}

TEST(Gate, ProjectionStartsNeutral) {
  std::mt19937_64 rng(10);
  GateParams gp(6, 4, rng);
  ASSERT_TRUE(gp.projects_latent());
  EXPECT_EQ(gp.latent_proj.weight.value().max_abs(), 0.0);
}

TEST(Gate, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int d_z : {4, 6}) {
    GateParams gp(6, d_z, rng);
    ag::ParamList params;
    gp.collect("gate", params);
    testing::perturb(params, rng, 0.5);
    ag::Var s = ag::parameter(testing::random_matrix(3, 6, rng));
    ag::Var z = ag::parameter(testing::random_matrix(3, d_z, rng));
    params.push_back({"s", s});
    params.push_back({"z", z});
    ag::Var w = ag::constant(testing::random_matrix(3, 6, rng));
    for (const auto& r : testing::check_gradients([&] { return ag::sum(ag::mul(gate_fuse(s, z, gp), w)); }, params))
      EXPECT_LT(r.relative_error, 1e-3) << r.name;
  }
}

TEST(Gate, DimensionMismatchRejected) {
  std::mt19937_64 rng(12);
  GateParams gp(4, 2, rng);
  EXPECT_THROW(gate_fuse(ag::constant(Matrix(1, 4)), ag::constant(Matrix(1, 3)), gp), ConfigError);
}

}  // namespace
}  // namespace fa::sentrep
