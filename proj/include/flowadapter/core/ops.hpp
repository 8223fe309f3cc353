#pragma once

#include <random>
#include <span>
#include <vector>

#include "flowadapter/core/autograd.hpp"
#include "flowadapter/core/kernels.hpp"

namespace fa::ag {

// Linear algebra
Var matmul(const Var& a, const Var& b);     // A * B
Var matmul_nt(const Var& a, const Var& b);  // A * B^T
// X * W + b with W stored (in x out); bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& b = {});
Var inverse(const Var& a);
Var diag_embed(const Var& row);  // 1 x n -> n x n

// Elementwise and broadcasting
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);  // row is 1 x cols
Var mul_row(const Var& x, const Var& row);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var expand_rows(const Var& row, int rows);  // 1 x c -> rows x c

Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);

// Reductions
Var sum(const Var& x);      // -> 1 x 1
Var mean(const Var& x);     // -> 1 x 1
Var row_sum(const Var& x);  // -> rows x 1

// Shape
Var slice_cols(const Var& x, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& x, std::span<const int> rows);

// Normalization / regularization
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var dropout(const Var& x, double p, std::mt19937_64& rng);

// Attention over padded batches; see kernels::AttentionShape for layout.
Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionShape& shape,
              std::span<const int> key_lengths);

// Per-sentence pooling over the first lengths[b] rows of each (batch * max_len) block.
Var segment_max(const Var& states, int batch, int max_len, std::span<const int> lengths);
Var segment_mean(const Var& states, int batch, int max_len, std::span<const int> lengths);

// Mean token-level cross-entropy over rows whose target != ignore_index.
Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_index);

}  // namespace fa::ag
