#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "flowadapter/core/kernels.hpp"
#include "gradcheck.hpp"

namespace fa {
namespace {

using testing::random_matrix;

TEST(Gemm, ParallelMatchesSerialReference) {
  std::mt19937_64 rng(7);
  for (auto [m, k, n] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {3, 5, 7}, {64, 48, 80}, {130, 65, 33}}) {
    Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng), bt = random_matrix(n, k, rng),
           at = random_matrix(k, m, rng);
    Matrix c1(m, n), c2(m, n);
    kernels::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
    kernels::serial::gemm_nn(m, k, n, a.data(), b.data(), c2.data(), false);
    EXPECT_LT(max_abs_diff(c1, c2), 1e-10);

    kernels::gemm_nt(m, k, n, a.data(), bt.data(), c1.data(), false);
    kernels::serial::gemm_nt(m, k, n, a.data(), bt.data(), c2.data(), false);
    EXPECT_LT(max_abs_diff(c1, c2), 1e-10);

    kernels::gemm_tn(m, k, n, at.data(), b.data(), c1.data(), false);
    kernels::serial::gemm_tn(m, k, n, at.data(), b.data(), c2.data(), false);
    EXPECT_LT(max_abs_diff(c1, c2), 1e-10);
  }
}

TEST(Gemm, AccumulateAddsIntoOutput) {
  Matrix a = Matrix::of(1, 2, {1, 2});
  Matrix b = Matrix::of(2, 1, {3, 4});
  Matrix c(1, 1, 10.0);
  kernels::gemm_nn(1, 2, 1, a.data(), b.data(), c.data(), true);
  EXPECT_DOUBLE_EQ(c(0, 0), 21.0);
}

TEST(Attention, ParallelMatchesSerialReference) {
  std::mt19937_64 rng(11);
  for (bool causal : {false, true}) {
    kernels::AttentionShape s{.batch = 3, .q_len = 5, .k_len = 6, .heads = 2, .dim = 8, .causal = causal};
    if (causal) s.k_len = s.q_len;
    std::vector<int> lens{s.k_len, 2, 4};
    Matrix q = random_matrix(s.batch * s.q_len, s.dim, rng), k = random_matrix(s.batch * s.k_len, s.dim, rng),
           v = random_matrix(s.batch * s.k_len, s.dim, rng), dout = random_matrix(s.batch * s.q_len, s.dim, rng);
    Matrix o1(q.rows(), s.dim), o2(q.rows(), s.dim);
    std::vector<double> p1(s.prob_size()), p2(s.prob_size());
    kernels::attention_forward(s, lens, q.data(), k.data(), v.data(), o1.data(), p1.data());
    kernels::serial::attention_forward(s, lens, q.data(), k.data(), v.data(), o2.data(), p2.data());
    EXPECT_LT(max_abs_diff(o1, o2), 1e-12);
    for (std::size_t i = 0; i < p1.size(); ++i) ASSERT_NEAR(p1[i], p2[i], 1e-12);

    Matrix dq1(q.rows(), s.dim), dk1(k.rows(), s.dim), dv1(v.rows(), s.dim);
    Matrix dq2(q.rows(), s.dim), dk2(k.rows(), s.dim), dv2(v.rows(), s.dim);
    kernels::attention_backward(s, q.data(), k.data(), v.data(), p1.data(), dout.data(), dq1.data(), dk1.data(),
                                dv1.data());
    kernels::serial::attention_backward(s, q.data(), k.data(), v.data(), p2.data(), dout.data(), dq2.data(),
                                        dk2.data(), dv2.data());
    EXPECT_LT(max_abs_diff(dq1, dq2), 1e-12);
    EXPECT_LT(max_abs_diff(dk1, dk2), 1e-12);
    EXPECT_LT(max_abs_diff(dv1, dv2), 1e-12);
  }
}

TEST(Attention, MaskedKeysGetZeroWeight) {
  kernels::AttentionShape s{.batch = 1, .q_len = 2, .k_len = 4, .heads = 1, .dim = 2, .causal = false};
  std::vector<int> lens{2};
  std::mt19937_64 rng(3);
  Matrix q = random_matrix(2, 2, rng), k = random_matrix(4, 2, rng), v = random_matrix(4, 2, rng);
  Matrix out(2, 2);
  std::vector<double> p(s.prob_size());
  kernels::attention_forward(s, lens, q.data(), k.data(), v.data(), out.data(), p.data());
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(p[i * 4 + 2], 0.0);
    EXPECT_EQ(p[i * 4 + 3], 0.0);
    EXPECT_NEAR(p[i * 4 + 0] + p[i * 4 + 1], 1.0, 1e-12);
  }
}

}  // namespace
}  // namespace fa
