#include "flowadapter/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

namespace fa::kernels {

namespace {

constexpr long kParallelWork = 1L << 15;

inline void row_nn(int k, int n, const double* __restrict a_row, const double* __restrict b,
                   double* __restrict c_row) {
  for (int p = 0; p < k; ++p) {
    const double av = a_row[p];
    if (av == 0.0) continue;
    const double* __restrict b_row = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

inline void row_nt(int k, int n, const double* __restrict a_row, const double* __restrict b,
                   double* __restrict c_row) {
  for (int j = 0; j < n; ++j) {
    const double* __restrict b_row = b + static_cast<long>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += a_row[p] * b_row[p];
    c_row[j] += s;
  }
}

inline void row_tn(int i, int m, int k, int n, const double* __restrict a, const double* __restrict b,
                   double* __restrict c_row) {
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<long>(p) * m + i];
    if (av == 0.0) continue;
    const double* __restrict b_row = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

void attention_block_forward(const AttentionShape& s, int b, int h, int key_len, const double* q,
                             const double* k, const double* v, double* out, double* probs) {
  const int dh = s.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int col = h * dh;
  for (int i = 0; i < s.q_len; ++i) {
    const double* qi = q + static_cast<long>(b * s.q_len + i) * s.dim + col;
    double* pi = probs + ((static_cast<long>(b) * s.heads + h) * s.q_len + i) * s.k_len;
    double* oi = out + static_cast<long>(b * s.q_len + i) * s.dim + col;
    int limit = key_len;
    if (s.causal) limit = std::min(limit, i + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < limit; ++j) {
      const double* kj = k + static_cast<long>(b * s.k_len + j) * s.dim + col;
      double dot = 0.0;
      for (int d = 0; d < dh; ++d) dot += qi[d] * kj[d];
      pi[j] = dot * scale;
      mx = std::max(mx, pi[j]);
    }
    double total = 0.0;
    for (int j = 0; j < limit; ++j) {
      pi[j] = std::exp(pi[j] - mx);
      total += pi[j];
    }
    for (int j = limit; j < s.k_len; ++j) pi[j] = 0.0;
    for (int d = 0; d < dh; ++d) oi[d] = 0.0;
    if (limit == 0) continue;
    const double inv = 1.0 / total;
    for (int j = 0; j < limit; ++j) {
      pi[j] *= inv;
      const double* vj = v + static_cast<long>(b * s.k_len + j) * s.dim + col;
      for (int d = 0; d < dh; ++d) oi[d] += pi[j] * vj[d];
    }
  }
}

// dq/dk/dv rows touched here belong to batch b and columns to head h only, so
// blocks can run concurrently without write conflicts.
void attention_block_backward(const AttentionShape& s, int b, int h, const double* q, const double* k,
                              const double* v, const double* probs, const double* dout, double* dq,
                              double* dk, double* dv, double* scratch) {
  const int dh = s.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int col = h * dh;
  for (int i = 0; i < s.q_len; ++i) {
    const double* pi = probs + ((static_cast<long>(b) * s.heads + h) * s.q_len + i) * s.k_len;
    const double* doi = dout + static_cast<long>(b * s.q_len + i) * s.dim + col;
    const double* qi = q + static_cast<long>(b * s.q_len + i) * s.dim + col;
    double* dqi = dq + static_cast<long>(b * s.q_len + i) * s.dim + col;
    double weighted = 0.0;
    for (int j = 0; j < s.k_len; ++j) {
      if (pi[j] == 0.0) {
        scratch[j] = 0.0;
        continue;
      }
      const double* vj = v + static_cast<long>(b * s.k_len + j) * s.dim + col;
      double dp = 0.0;
      for (int d = 0; d < dh; ++d) dp += doi[d] * vj[d];
      scratch[j] = dp;
      weighted += dp * pi[j];
    }
    for (int j = 0; j < s.k_len; ++j) {
      if (pi[j] == 0.0) continue;
      const double ds = pi[j] * (scratch[j] - weighted) * scale;
      const double* kj = k + static_cast<long>(b * s.k_len + j) * s.dim + col;
      double* dkj = dk + static_cast<long>(b * s.k_len + j) * s.dim + col;
      double* dvj = dv + static_cast<long>(b * s.k_len + j) * s.dim + col;
      for (int d = 0; d < dh; ++d) {
        dqi[d] += ds * kj[d];
        dkj[d] += ds * qi[d];
        dvj[d] += pi[j] * doi[d];
      }
    }
  }
}

}  // namespace

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<long>(m) * n);
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_nn(k, n, a + static_cast<long>(i) * k, b, c + static_cast<long>(i) * n);
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<long>(m) * n);
  const long work = static_cast<long>(m) * k * n;
  if (m < 4) {
    for (int i = 0; i < m; ++i) row_nt(k, n, a + static_cast<long>(i) * k, b, c + static_cast<long>(i) * n);
    return;
  }
  // Transposing B once lets every row use the vectorizable axpy loop.
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<long>(j) * k + p];
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_nn(k, n, a + static_cast<long>(i) * k, bt.data(), c + static_cast<long>(i) * n);
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<long>(m) * n);
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_tn(i, m, k, n, a, b, c + static_cast<long>(i) * n);
}

void attention_forward(const AttentionShape& shape, std::span<const int> key_lengths, const double* q,
                       const double* k, const double* v, double* out, double* probs) {
  const int blocks = shape.batch * shape.heads;
#pragma omp parallel for schedule(static) if (blocks > 1)
  for (int bh = 0; bh < blocks; ++bh) {
    const int b = bh / shape.heads;
    const int h = bh % shape.heads;
    attention_block_forward(shape, b, h, std::min(key_lengths[b], shape.k_len), q, k, v, out, probs);
  }
}

void attention_backward(const AttentionShape& shape, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
  const int blocks = shape.batch * shape.heads;
#pragma omp parallel if (blocks > 1)
  {
    std::vector<double> scratch(static_cast<std::size_t>(shape.k_len));
#pragma omp for schedule(static)
    for (int bh = 0; bh < blocks; ++bh) {
      attention_block_backward(shape, bh / shape.heads, bh % shape.heads, q, k, v, probs, dout, dq, dk, dv,
                               scratch.data());
    }
  }
}

namespace serial {

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[static_cast<long>(i) * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[static_cast<long>(i) * k + p] * b[static_cast<long>(p) * n + j];
      c[static_cast<long>(i) * n + j] = s;
    }
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[static_cast<long>(i) * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[static_cast<long>(i) * k + p] * b[static_cast<long>(j) * k + p];
      c[static_cast<long>(i) * n + j] = s;
    }
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[static_cast<long>(i) * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[static_cast<long>(p) * m + i] * b[static_cast<long>(p) * n + j];
      c[static_cast<long>(i) * n + j] = s;
    }
}

void attention_forward(const AttentionShape& s, std::span<const int> key_lengths, const double* q,
                       const double* k, const double* v, double* out, double* probs) {
  const int dh = s.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> logits(static_cast<std::size_t>(s.k_len));
  for (int b = 0; b < s.batch; ++b)
    for (int h = 0; h < s.heads; ++h)
      for (int i = 0; i < s.q_len; ++i) {
        double* p = probs + ((static_cast<long>(b) * s.heads + h) * s.q_len + i) * s.k_len;
        double* o = out + static_cast<long>(b * s.q_len + i) * s.dim + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < s.k_len; ++j) {
          const bool visible = j < key_lengths[b] && (!s.causal || j <= i);
          if (!visible) {
            logits[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double dot = 0.0;
          for (int d = 0; d < dh; ++d)
            dot += q[static_cast<long>(b * s.q_len + i) * s.dim + h * dh + d] *
                   k[static_cast<long>(b * s.k_len + j) * s.dim + h * dh + d];
          logits[j] = dot * scale;
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (int j = 0; j < s.k_len; ++j) z += std::isfinite(logits[j]) ? std::exp(logits[j] - mx) : 0.0;
        for (int j = 0; j < s.k_len; ++j)
          p[j] = (z > 0.0 && std::isfinite(logits[j])) ? std::exp(logits[j] - mx) / z : 0.0;
        for (int d = 0; d < dh; ++d) {
          double acc = 0.0;
          for (int j = 0; j < s.k_len; ++j) acc += p[j] * v[static_cast<long>(b * s.k_len + j) * s.dim + h * dh + d];
          o[d] = acc;
        }
      }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
  const int dh = s.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp(static_cast<std::size_t>(s.k_len));
  for (int b = 0; b < s.batch; ++b)
    for (int h = 0; h < s.heads; ++h)
      for (int i = 0; i < s.q_len; ++i) {
        const double* p = probs + ((static_cast<long>(b) * s.heads + h) * s.q_len + i) * s.k_len;
        const long qrow = static_cast<long>(b * s.q_len + i) * s.dim + h * dh;
        for (int j = 0; j < s.k_len; ++j) {
          double acc = 0.0;
          for (int d = 0; d < dh; ++d) acc += dout[qrow + d] * v[static_cast<long>(b * s.k_len + j) * s.dim + h * dh + d];
          dp[j] = acc;
        }
        double centre = 0.0;
        for (int j = 0; j < s.k_len; ++j) centre += p[j] * dp[j];
        for (int j = 0; j < s.k_len; ++j) {
          const long krow = static_cast<long>(b * s.k_len + j) * s.dim + h * dh;
          const double ds = p[j] * (dp[j] - centre) * scale;
          for (int d = 0; d < dh; ++d) {
            dq[qrow + d] += ds * k[krow + d];
            dk[krow + d] += ds * q[qrow + d];
            dv[krow + d] += p[j] * dout[qrow + d];
          }
        }
      }
}

}  // namespace serial

}  // namespace fa::kernels
