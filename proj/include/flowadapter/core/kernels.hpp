#pragma once

#include <span>

// Dense compute kernels. The functions in fa::kernels are OpenMP-parallel over
// independent output rows (or batch x head blocks), so every output element is
// produced by exactly one thread in a fixed order and results do not depend on
// the thread count. fa::kernels::serial holds plain single-threaded reference
// versions used by the tests and the benchmark.

namespace fa::kernels {

// C[M x N] (+)= A[M x K] * B[K x N]
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
// C[M x N] (+)= A[M x K] * B[N x K]^T
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
// C[M x N] (+)= A[K x M]^T * B[K x N]
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);

// Multi-head scaled dot-product attention over a padded batch.
// Rows of Q are laid out as (batch * q_len), rows of K/V as (batch * k_len);
// head h owns columns [h * dim / heads, (h + 1) * dim / heads).
struct AttentionShape {
  int batch = 0;
  int q_len = 0;
  int k_len = 0;
  int heads = 1;
  int dim = 0;
  bool causal = false;

  int head_dim() const { return dim / heads; }
  long prob_size() const { return static_cast<long>(batch) * heads * q_len * k_len; }
};

// probs receives the softmax weights (batch, head, query, key), zero on masked keys.
void attention_forward(const AttentionShape& shape, std::span<const int> key_lengths, const double* q,
                       const double* k, const double* v, double* out, double* probs);

// Accumulates into dq, dk, dv.
void attention_backward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

namespace serial {

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);

void attention_forward(const AttentionShape& shape, std::span<const int> key_lengths, const double* q,
                       const double* k, const double* v, double* out, double* probs);
void attention_backward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

}  // namespace serial

}  // namespace fa::kernels
