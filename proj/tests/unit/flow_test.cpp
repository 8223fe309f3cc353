#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"
#include "flowadapter/flow/flow.hpp"
#include "gradcheck.hpp"

namespace fa::flow {
namespace {

const double kLn2 = std::log(2.0);
const double kLn2Pi = std::log(2.0 * std::numbers::pi);

// Makes a coupling layer compute constant s and t regardless of its input.
void set_constant_coupling(CouplingLayer& layer, double s, double t) {
  layer.scale_head.weight.mutable_value().fill(0.0);
  layer.translate_head.weight.mutable_value().fill(0.0);
  layer.scale_head.bias.mutable_value().fill(std::atanh(s / layer.s_max()));
  layer.translate_head.bias.mutable_value().fill(t);
}

LatentVector random_latent(int d, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  LatentVector z;
  for (int i = 0; i < d; ++i) z.values.push_back(n(rng));
  return z;
}

double max_diff(const LatentVector& a, const LatentVector& b) {
  double m = 0.0;
  for (int i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

FlowStack random_stack(FlowType type, int layers, int dim, std::mt19937_64& rng, double sd = 0.3) {
  FlowStack stack({.type = type, .layers = layers, .dim = dim, .hidden = 16}, "l1", rng);
  for (auto& layer : stack.layers())
    if (auto* g = std::get_if<GlowLayer>(&layer)) g->linear.randomize_rotation(rng);
  ag::ParamList params;
  stack.collect("flow", params);
  testing::perturb(params, rng, sd);
  return stack;
}

TEST(Coupling, ZeroNetsAreIdentity) {
  std::mt19937_64 rng(1);
  CouplingLayer layer(4, 8, true, 2.0, rng);
  auto [y, ld] = coupling_forward(layer, {1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(y.values, (std::vector<double>{1.0, 2.0, 3.0, 4.0}));
  EXPECT_EQ(ld, 0.0);
  auto [x, ld_inv] = coupling_inverse(CouplingLayer(2, 8, true, 2.0, rng), {1.0, 2.0});
  EXPECT_EQ(x.values, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(ld_inv, 0.0);
}

TEST(Coupling, ConstantAffineClosedForm) {
  std::mt19937_64 rng(2);
  CouplingLayer layer(2, 8, true, 2.0, rng);
  set_constant_coupling(layer, kLn2, 1.0);
  auto [y, ld] = coupling_forward(layer, {0.5, 1.0});
  EXPECT_NEAR(y.values[0], 0.5, 1e-12);
  EXPECT_NEAR(y.values[1], 3.0, 1e-12);
  EXPECT_NEAR(ld, 0.6931471805599453, 1e-12);

  auto [x, ld_inv] = coupling_inverse(layer, {0.5, 3.0});
  EXPECT_NEAR(x.values[0], 0.5, 1e-12);
  EXPECT_NEAR(x.values[1], 1.0, 1e-12);
  EXPECT_NEAR(ld_inv, -0.6931471805599453, 1e-12);
}

TEST(Coupling, PassthroughHalfAlternates) {
  std::mt19937_64 rng(3);
  CouplingLayer second(2, 8, false, 2.0, rng);
  set_constant_coupling(second, kLn2, 1.0);
  auto [y, ld] = coupling_forward(second, {0.5, 1.0});
  EXPECT_NEAR(y.values[0], 2.0, 1e-12);  // 0.5 * 2 + 1
  EXPECT_NEAR(y.values[1], 1.0, 1e-12);
}

TEST(Coupling, RejectsDimensionMismatch) {
  std::mt19937_64 rng(4);
  CouplingLayer layer(4, 8, true, 2.0, rng);
  EXPECT_THROW(coupling_forward(layer, {1.0, 2.0}), ConfigError);
  EXPECT_THROW(CouplingLayer(3, 8, true, 2.0, rng), ConfigError);
}

TEST(Coupling, RoundTripProperty) {
  std::mt19937_64 rng(5);
  CouplingLayer layer(100, 32, true, 2.0, rng);
  ag::ParamList params;
  layer.collect("c", params);
  testing::perturb(params, rng, 0.3);
  double worst = 0.0, worst_ld = 0.0;
  for (int i = 0; i < 1000; ++i) {
    LatentVector z = random_latent(100, rng);
    auto [y, ld] = coupling_forward(layer, z);
    auto [back, ld_inv] = coupling_inverse(layer, y);
    worst = std::max(worst, max_diff(back, z));
    worst_ld = std::max(worst_ld, std::abs(ld + ld_inv));
  }
  EXPECT_LT(worst, 1e-5);
  EXPECT_LT(worst_ld, 1e-6);
}

TEST(Glow, IdentityComposition) {
  std::mt19937_64 rng(6);
  GlowLayer layer(4, 8, true, 2.0, rng);
  auto [y, ld] = glow_forward(layer, {0.3, -1.0, 2.0, 0.5});
  EXPECT_LT(max_diff(y, {0.3, -1.0, 2.0, 0.5}), 1e-15);
  EXPECT_EQ(ld, 0.0);
}

TEST(Glow, ActNormDiagonalLogDet) {
  std::mt19937_64 rng(7);
  GlowLayer layer(2, 8, true, 2.0, rng);
  layer.actnorm.set_scale(std::vector<double>{2.0, 2.0});
  auto [y, ld] = glow_forward(layer, {1.0, -1.0});
  EXPECT_NEAR(y.values[0], 2.0, 1e-12);
  EXPECT_NEAR(y.values[1], -2.0, 1e-12);
  EXPECT_NEAR(ld, 1.3862943611198906, 1e-12);
}

TEST(Glow, RoundTripProperty) {
  std::mt19937_64 rng(8);
  GlowLayer layer(10, 16, true, 2.0, rng);
  layer.linear.randomize_rotation(rng);
  ag::ParamList params;
  layer.collect("g", params);
  testing::perturb(params, rng, 0.2);
  EXPECT_TRUE(std::isfinite(layer.linear.log_abs_det()));
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    LatentVector z = random_latent(10, rng);
    auto [y, ld] = glow_forward(layer, z);
    auto [back, ld_inv] = glow_inverse(layer, y);
    worst = std::max(worst, max_diff(back, z));
    EXPECT_NEAR(ld + ld_inv, 0.0, 1e-9);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Glow, SingularLinearIsNumericError) {
  std::mt19937_64 rng(9);
  GlowLayer layer(2, 8, true, 2.0, rng);
  layer.linear.log_s.mutable_value()(0, 0) = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(glow_forward(layer, {1.0, 1.0}), NumericError);
}

TEST(Glow, ActNormDataInitStandardizes) {
  std::mt19937_64 rng(10);
  FlowStack stack({.type = FlowType::Glow, .layers = 2, .dim = 4, .hidden = 8}, "l1", rng);
  Matrix data = testing::random_matrix(500, 4, rng, 3.0);
  for (int i = 0; i < 500; ++i) data(i, 1) += 5.0;
  stack.initialize(data);
  ag::NoGradGuard g;
  Matrix eps = stack.forward(ag::constant(data)).out.value();
  for (int j = 0; j < 4; ++j) {
    double mu = 0.0, sq = 0.0;
    for (int i = 0; i < 500; ++i) mu += eps(i, j);
    mu /= 500;
    for (int i = 0; i < 500; ++i) sq += (eps(i, j) - mu) * (eps(i, j) - mu);
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / 499), 1.0, 1e-6);
  }
}

TEST(Stack, IdentityStack) {
  std::mt19937_64 rng(11);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow}) {
    FlowStack stack({.type = type, .layers = 3, .dim = 4, .hidden = 8}, "l1", rng);
    LatentVector z{0.1, -0.2, 0.3, 4.0};
    auto [eps, ld] = stack_forward(stack, z);
    EXPECT_LT(max_diff(eps, z), 1e-15);
    EXPECT_EQ(ld, 0.0);
    auto [back, ld2] = stack_inverse(stack, z);
    EXPECT_LT(max_diff(back, z), 1e-15);
    EXPECT_EQ(ld2, 0.0);
  }
}

TEST(Stack, TwoHandBuiltCouplingsComposeInOrder) {
  // Layer 0 (passthrough first): s = ln 2, t = 1. Layer 1 (passthrough second): s = 0.3, t = -0.5.
  // base->latent:  [e1, e2] -> [e1, 2 e2 + 1] -> [e1 e^0.3 - 0.5, 2 e2 + 1],  log-det ln 2 + 0.3
  std::mt19937_64 rng(12);
  FlowStack stack({.type = FlowType::RealNVP, .layers = 2, .dim = 2, .hidden = 8}, "l1", rng);
  set_constant_coupling(std::get<CouplingLayer>(stack.layers()[0]), kLn2, 1.0);
  set_constant_coupling(std::get<CouplingLayer>(stack.layers()[1]), 0.3, -0.5);

  const double e1 = 0.7, e2 = -1.2;
  auto [z, ld_inv] = stack_inverse(stack, {e1, e2});
  EXPECT_NEAR(z.values[0], e1 * std::exp(0.3) - 0.5, 1e-12);
  EXPECT_NEAR(z.values[1], 2.0 * e2 + 1.0, 1e-12);
  EXPECT_NEAR(ld_inv, kLn2 + 0.3, 1e-12);

  const double z1 = 1.5, z2 = 4.0;
  auto [eps, ld] = stack_forward(stack, {z1, z2});
  EXPECT_NEAR(eps.values[0], (z1 + 0.5) * std::exp(-0.3), 1e-12);
  EXPECT_NEAR(eps.values[1], (z2 - 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(ld, -kLn2 - 0.3, 1e-12);
}

TEST(Stack, RoundTripAndAntisymmetricLogDet) {
  std::mt19937_64 rng(13);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow}) {
    FlowStack stack = random_stack(type, 3, 100, rng, 0.05);
    for (int i = 0; i < 200; ++i) {
      LatentVector z = random_latent(100, rng);
      auto [eps, ld] = stack_forward(stack, z);
      auto [back, ld_inv] = stack_inverse(stack, eps);
      EXPECT_LT(max_diff(back, z), 1e-4);
      EXPECT_NEAR(ld + ld_inv, 0.0, 1e-5);
    }
  }
}

TEST(Stack, LogDetMatchesFiniteDifferenceJacobian) {
  std::mt19937_64 rng(14);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow})
    for (int d : {2, 4}) {
      FlowStack stack = random_stack(type, 3, d, rng);
      auto f = [&](const Matrix& x) {
        ag::NoGradGuard g;
        return stack.forward(ag::constant(x)).out.value();
      };
      for (int i = 0; i < 10; ++i) {
        LatentVector z = random_latent(d, rng);
        const double analytic = stack_forward(stack, z).second;
        EXPECT_NEAR(analytic, testing::finite_difference_log_abs_det(f, z.as_row()), 1e-3);
      }
    }
}

TEST(Stack, NonFiniteIntermediateNamesLayer) {
  std::mt19937_64 rng(15);
  FlowStack stack({.type = FlowType::RealNVP, .layers = 2, .dim = 2, .hidden = 4}, "l2", rng);
  try {
    stack_forward(stack, {std::numeric_limits<double>::infinity(), 0.0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Stack, RejectsOddDimensionAndEmptyStack) {
  std::mt19937_64 rng(16);
  EXPECT_THROW(FlowStack({.type = FlowType::RealNVP, .layers = 2, .dim = 3}, "l1", rng), ConfigError);
  EXPECT_THROW(FlowStack({.type = FlowType::RealNVP, .layers = 0, .dim = 4}, "l1", rng), ConfigError);
}

TEST(Density, StandardNormalAtOrigin) {
  std::mt19937_64 rng(17);
  FlowStack s4({.layers = 3, .dim = 4, .hidden = 8}, "l1", rng);
  FlowStack s2({.layers = 3, .dim = 2, .hidden = 8}, "l1", rng);
  EXPECT_NEAR(log_prob(s4, BaseDistribution(4), LatentVector{0, 0, 0, 0}), -2.0 * kLn2Pi, 1e-12);
  EXPECT_NEAR(log_prob(s2, BaseDistribution(2), LatentVector{0, 0}), -kLn2Pi, 1e-12);
  EXPECT_DOUBLE_EQ(BaseDistribution(4).log_density(LatentVector{0, 0, 0, 0}), -2.0 * kLn2Pi);
  EXPECT_NEAR(-2.0 * kLn2Pi, -3.6757541328186907, 1e-12);
}

TEST(Density, QuadratureIntegratesToOne) {
  std::mt19937_64 rng(18);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow}) {
    FlowStack stack = random_stack(type, 3, 2, rng, 0.15);
    BaseDistribution base(2);
    ag::NoGradGuard g;
    // +-6 sigma box of the modeled density, located by sampling through the flow.
    Matrix samples = stack.inverse(ag::constant(testing::random_matrix(4000, 2, rng))).out.value();
    double lo[2], hi[2];
    for (int j = 0; j < 2; ++j) {
      double mu = 0.0, sq = 0.0;
      for (int i = 0; i < samples.rows(); ++i) mu += samples(i, j);
      mu /= samples.rows();
      for (int i = 0; i < samples.rows(); ++i) sq += (samples(i, j) - mu) * (samples(i, j) - mu);
      const double sd = std::sqrt(sq / (samples.rows() - 1));
      lo[j] = mu - 6.0 * sd;
      hi[j] = mu + 6.0 * sd;
    }
    const int n = 300;
    const double hx = (hi[0] - lo[0]) / n, hy = (hi[1] - lo[1]) / n;
    Matrix grid(n * n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        grid(i * n + j, 0) = lo[0] + (i + 0.5) * hx;
        grid(i * n + j, 1) = lo[1] + (j + 0.5) * hy;
      }
    Matrix lp = log_prob(stack, base, ag::constant(grid)).value();
    double mass = 0.0;
    for (double v : lp.values()) mass += std::exp(v) * hx * hy;
    EXPECT_GT(mass, 0.98) << to_string(type);
    EXPECT_LT(mass, 1.02) << to_string(type);
  }
}

TEST(Mle, IdentityZeroBatchAndPermutationInvariance) {
  std::mt19937_64 rng(19);
  FlowStack id({.layers = 3, .dim = 4, .hidden = 8}, "l1", rng);
  std::vector<LatentVector> zeros(5, LatentVector{0, 0, 0, 0});
  EXPECT_NEAR(mle_loss(id, BaseDistribution(4), zeros), 2.0 * kLn2Pi, 1e-12);

  FlowStack stack = random_stack(FlowType::RealNVP, 3, 4, rng);
  std::vector<LatentVector> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_latent(4, rng));
  const double a = mle_loss(stack, BaseDistribution(4), batch);
  std::shuffle(batch.begin(), batch.end(), rng);
  EXPECT_NEAR(mle_loss(stack, BaseDistribution(4), batch), a, 1e-12);
  EXPECT_THROW(mle_loss(stack, BaseDistribution(4), std::vector<LatentVector>{}), UsageError);
}

TEST(Mle, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(20);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow}) {
    FlowStack stack = random_stack(type, 2, 4, rng);
    BaseDistribution base(4);
    ag::Var latents = ag::parameter(testing::random_matrix(6, 4, rng));
    ag::ParamList params{{"latents", latents}};
    stack.collect("flow", params);
    for (const auto& r : testing::check_gradients([&] { return mle_loss(stack, base, latents); }, params))
      EXPECT_LT(r.relative_error, 1e-3) << to_string(type) << " " << r.name;
  }
}

TEST(Transform, IdentityAndPureScaling) {
  std::mt19937_64 rng(21);
  FlowStack a({.type = FlowType::Glow, .layers = 1, .dim = 2, .hidden = 4}, "l1", rng);
  FlowStack b({.type = FlowType::Glow, .layers = 1, .dim = 2, .hidden = 4}, "l2", rng);
  EXPECT_LT(max_diff(transform_latent(a, b, LatentVector{1.5, -2.0}), {1.5, -2.0}), 1e-15);

  std::get<GlowLayer>(a.layers()[0]).actnorm.set_scale(std::vector<double>{2.0, 2.0});
  std::get<GlowLayer>(b.layers()[0]).actnorm.set_scale(std::vector<double>{3.0, 3.0});
  LatentVector out = transform_latent(a, b, LatentVector{4.0, 4.0});
  EXPECT_NEAR(out.values[0], 6.0, 1e-12);
  EXPECT_NEAR(out.values[1], 6.0, 1e-12);
}

TEST(Transform, ComposesToIdentityBothWays) {
  std::mt19937_64 rng(22);
  for (FlowType type : {FlowType::RealNVP, FlowType::Glow}) {
    FlowStack src = random_stack(type, 3, 8, rng);
    FlowStack tgt = random_stack(type, 3, 8, rng);
    for (int i = 0; i < 100; ++i) {
      LatentVector z = random_latent(8, rng);
      EXPECT_LT(max_diff(transform_latent(tgt, src, transform_latent(src, tgt, z)), z), 1e-4);
      EXPECT_LT(max_diff(transform_latent(src, tgt, transform_latent(tgt, src, z)), z), 1e-4);
    }
  }
}

TEST(Transform, DimensionMismatchIsConfigError) {
  std::mt19937_64 rng(23);
  FlowStack a({.layers = 1, .dim = 2, .hidden = 4}, "l1", rng);
  FlowStack b({.layers = 1, .dim = 4, .hidden = 4}, "l2", rng);
  EXPECT_THROW(transform_latent(a, b, LatentVector{1.0, 1.0}), ConfigError);
}

}  // namespace
}  // namespace fa::flow
