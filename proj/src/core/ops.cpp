#include "flowadapter/core/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "flowadapter/core/errors.hpp"

namespace fa::ag {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ConfigError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                      b.value().shape_string());
}

void require_row(const Var& x, const Var& row, const char* op) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ConfigError(std::string(op) + ": expected 1x" + std::to_string(x.cols()) + " row, got " +
                      row.value().shape_string());
}

template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx_from_out) {
  Matrix out(x.rows(), x.cols());
  const Matrix& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(std::move(out), {x}, [dfdx_from_out](Node& self) {
    Node& a = self.input(0);
    if (!a.requires_grad) return;
    Matrix& g = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx_from_out(a.value[i], self.value[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw ConfigError("matmul: " + a.value().shape_string() + " * " + b.value().shape_string());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Matrix out(m, n);
  kernels::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data(), false);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& A = self.input(0);
    Node& B = self.input(1);
    if (A.requires_grad) kernels::gemm_nt(m, n, k, self.grad.data(), B.value.data(), A.grad_buffer().data(), true);
    if (B.requires_grad) kernels::gemm_tn(k, m, n, A.value.data(), self.grad.data(), B.grad_buffer().data(), true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols())
    throw ConfigError("matmul_nt: " + a.value().shape_string() + " * T(" + b.value().shape_string() + ")");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Matrix out(m, n);
  kernels::gemm_nt(m, k, n, a.value().data(), b.value().data(), out.data(), false);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& A = self.input(0);
    Node& B = self.input(1);
    if (A.requires_grad) kernels::gemm_nn(m, n, k, self.grad.data(), B.value.data(), A.grad_buffer().data(), true);
    if (B.requires_grad) kernels::gemm_tn(n, m, k, self.grad.data(), A.value.data(), B.grad_buffer().data(), true);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows())
    throw ConfigError("linear: input " + x.value().shape_string() + " vs weight " + w.value().shape_string());
  const int m = x.rows(), k = x.cols(), n = w.cols();
  Matrix out(m, n);
  if (b.defined()) {
    require_row(Var(Matrix(1, n)), b, "linear bias");
    for (int i = 0; i < m; ++i) std::copy_n(b.value().data(), n, out.data() + static_cast<long>(i) * n);
  }
  kernels::gemm_nn(m, k, n, x.value().data(), w.value().data(), out.data(), b.defined());
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(out), std::move(inputs), [m, k, n](Node& self) {
    Node& X = self.input(0);
    Node& W = self.input(1);
    if (X.requires_grad) kernels::gemm_nt(m, n, k, self.grad.data(), W.value.data(), X.grad_buffer().data(), true);
    if (W.requires_grad) kernels::gemm_tn(k, m, n, X.value.data(), self.grad.data(), W.grad_buffer().data(), true);
    if (self.inputs.size() > 2 && self.input(2).requires_grad) {
      Matrix& gb = self.input(2).grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += self.grad(i, j);
    }
  });
}

Var inverse(const Var& a) {
  if (a.rows() != a.cols()) throw ConfigError("inverse: non-square " + a.value().shape_string());
  const int n = a.rows();
  using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const EigenMat> src(a.value().data(), n, n);
  Eigen::FullPivLU<EigenMat> lu(src);
  if (!lu.isInvertible()) throw NumericError("inverse: matrix is singular");
  Matrix out(n, n);
  Eigen::Map<EigenMat>(out.data(), n, n) = lu.inverse();
  if (!out.all_finite()) throw NumericError("inverse: non-finite result");
  return make_result(std::move(out), {a}, [n](Node& self) {
    Node& A = self.input(0);
    if (!A.requires_grad) return;
    // d(A^-1) = -A^-1 dA A^-1  =>  dL/dA = -A^-T G A^-T
    Eigen::Map<const EigenMat> inv(self.value.data(), n, n);
    Eigen::Map<const EigenMat> g(self.grad.data(), n, n);
    Eigen::Map<EigenMat> ga(A.grad_buffer().data(), n, n);
    ga.noalias() -= inv.transpose() * g * inv.transpose();
  });
}

Var diag_embed(const Var& row) {
  if (row.rows() != 1) throw ConfigError("diag_embed: expected a row vector");
  const int n = row.cols();
  Matrix out(n, n);
  for (int i = 0; i < n; ++i) out(i, i) = row.value()(0, i);
  return make_result(std::move(out), {row}, [n](Node& self) {
    Node& r = self.input(0);
    if (!r.requires_grad) return;
    Matrix& g = r.grad_buffer();
    for (int i = 0; i < n; ++i) g(0, i) += self.grad(i, i);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int i = 0; i < 2; ++i)
      if (self.input(i).requires_grad) self.input(i).grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value();
  out -= b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.input(0).requires_grad) self.input(0).grad_buffer() += self.grad;
    if (self.input(1).requires_grad) self.input(1).grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& A = self.input(0);
    Node& B = self.input(1);
    if (A.requires_grad) {
      Matrix& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      Matrix& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Var add_row(const Var& x, const Var& row) {
  require_row(x, row, "add_row");
  Matrix out = x.value();
  const int r = x.rows(), c = x.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) += row.value()(0, j);
  return make_result(std::move(out), {x, row}, [r, c](Node& self) {
    if (self.input(0).requires_grad) self.input(0).grad_buffer() += self.grad;
    if (self.input(1).requires_grad) {
      Matrix& g = self.input(1).grad_buffer();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g[j] += self.grad(i, j);
    }
  });
}

Var mul_row(const Var& x, const Var& row) {
  require_row(x, row, "mul_row");
  Matrix out = x.value();
  const int r = x.rows(), c = x.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) *= row.value()(0, j);
  return make_result(std::move(out), {x, row}, [r, c](Node& self) {
    Node& X = self.input(0);
    Node& R = self.input(1);
    if (X.requires_grad) {
      Matrix& g = X.grad_buffer();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g(i, j) += self.grad(i, j) * R.value(0, j);
    }
    if (R.requires_grad) {
      Matrix& g = R.grad_buffer();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g[j] += self.grad(i, j) * X.value(i, j);
    }
  });
}

Var scale(const Var& x, double factor) {
  Matrix out = x.value();
  out *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    Node& X = self.input(0);
    if (!X.requires_grad) return;
    Matrix& g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& x, double c) {
  Matrix out = x.value();
  for (double& v : out.values()) v += c;
  return make_result(std::move(out), {x}, [](Node& self) {
    if (self.input(0).requires_grad) self.input(0).grad_buffer() += self.grad;
  });
}

Var expand_rows(const Var& row, int rows) {
  if (row.rows() != 1) throw ConfigError("expand_rows: expected a row vector");
  const int c = row.cols();
  Matrix out(rows, c);
  for (int i = 0; i < rows; ++i) std::copy_n(row.value().data(), c, out.data() + static_cast<long>(i) * c);
  return make_result(std::move(out), {row}, [rows, c](Node& self) {
    Node& R = self.input(0);
    if (!R.requires_grad) return;
    Matrix& g = R.grad_buffer();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < c; ++j) g[j] += self.grad(i, j);
  });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var sum(const Var& x) {
  Matrix out(1, 1, x.value().sum());
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& X = self.input(0);
    if (!X.requires_grad) return;
    const double g0 = self.grad[0];
    for (double& g : X.grad_buffer().values()) g += g0;
  });
}

Var mean(const Var& x) {
  if (x.value().size() == 0) throw UsageError("mean of empty matrix");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var row_sum(const Var& x) {
  const int r = x.rows(), c = x.cols();
  Matrix out(r, 1);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += x.value()(i, j);
    out(i, 0) = s;
  }
  return make_result(std::move(out), {x}, [r, c](Node& self) {
    Node& X = self.input(0);
    if (!X.requires_grad) return;
    Matrix& g = X.grad_buffer();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g(i, j) += self.grad(i, 0);
  });
}

Var slice_cols(const Var& x, int begin, int end) {
  if (begin < 0 || end > x.cols() || begin >= end)
    throw ConfigError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                      x.value().shape_string());
  const int r = x.rows(), w = end - begin;
  Matrix out(r, w);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = x.value()(i, begin + j);
  return make_result(std::move(out), {x}, [r, w, begin](Node& self) {
    Node& X = self.input(0);
    if (!X.requires_grad) return;
    Matrix& g = X.grad_buffer();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j) g(i, begin + j) += self.grad(i, j);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const int r = parts.front().rows();
  int total = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ConfigError("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(r, total);
  std::vector<int> offsets;
  int off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return make_result(std::move(out), parts, [r, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& P = self.input(k);
      if (!P.requires_grad) continue;
      Matrix& g = P.grad_buffer();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < g.cols(); ++j) g(i, j) += self.grad(i, offsets[k] + j);
    }
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  const int c = x.cols();
  const int n = static_cast<int>(rows.size());
  Matrix out(n, c);
  std::vector<int> idx(rows.begin(), rows.end());
  for (int i = 0; i < n; ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows())
      throw ConfigError("gather_rows: index " + std::to_string(idx[i]) + " out of range " + x.value().shape_string());
    std::copy_n(x.value().data() + static_cast<long>(idx[i]) * c, c, out.data() + static_cast<long>(i) * c);
  }
  return make_result(std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
    Node& X = self.input(0);
    if (!X.requires_grad) return;
    Matrix& g = X.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j) g(idx[i], j) += self.grad(static_cast<int>(i), j);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_row(x, gain, "layer_norm gain");
  require_row(x, bias, "layer_norm bias");
  const int r = x.rows(), c = x.cols();
  Matrix out(r, c);
  Matrix xhat(r, c);
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += x.value()(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = x.value()(i, j) - mu;
      var += d * d;
    }
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      xhat(i, j) = (x.value()(i, j) - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * gain.value()(0, j) + bias.value()(0, j);
    }
  }
  return make_result(std::move(out), {x, gain, bias},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& X = self.input(0);
                       Node& G = self.input(1);
                       Node& B = self.input(2);
                       if (G.requires_grad || B.requires_grad) {
                         for (int i = 0; i < r; ++i)
                           for (int j = 0; j < c; ++j) {
                             if (G.requires_grad) G.grad_buffer()[j] += self.grad(i, j) * xhat(i, j);
                             if (B.requires_grad) B.grad_buffer()[j] += self.grad(i, j);
                           }
                       }
                       if (!X.requires_grad) return;
                       Matrix& gx = X.grad_buffer();
                       std::vector<double> dxhat(static_cast<std::size_t>(c));
                       for (int i = 0; i < r; ++i) {
                         double m1 = 0.0, m2 = 0.0;
                         for (int j = 0; j < c; ++j) {
                           dxhat[j] = self.grad(i, j) * G.value(0, j);
                           m1 += dxhat[j];
                           m2 += dxhat[j] * xhat(i, j);
                         }
                         m1 /= c;
                         m2 /= c;
                         for (int j = 0; j < c; ++j) gx(i, j) += inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
                       }
                     });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.values()) m = keep(rng) ? s : 0.0;
  return mul(x, constant(std::move(mask)));
}

Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionShape& shape,
              std::span<const int> key_lengths) {
  if (shape.dim % shape.heads != 0) throw ConfigError("attention: dim not divisible by heads");
  if (q.rows() != shape.batch * shape.q_len || k.rows() != shape.batch * shape.k_len || !k.value().same_shape(v.value()) ||
      q.cols() != shape.dim || k.cols() != shape.dim)
    throw ConfigError("attention: input shapes do not match layout");
  if (static_cast<int>(key_lengths.size()) != shape.batch) throw ConfigError("attention: key_lengths size");
  Matrix out(q.rows(), shape.dim);
  std::vector<double> probs(static_cast<std::size_t>(shape.prob_size()));
  kernels::attention_forward(shape, key_lengths, q.value().data(), k.value().data(), v.value().data(), out.data(),
                             probs.data());
  return make_result(std::move(out), {q, k, v}, [shape, probs = std::move(probs)](Node& self) {
    Node& Q = self.input(0);
    Node& K = self.input(1);
    Node& V = self.input(2);
    // Gradients are always materialised for all three; unused buffers are cheap.
    Matrix dq(Q.value.rows(), Q.value.cols());
    Matrix dk(K.value.rows(), K.value.cols());
    Matrix dv(V.value.rows(), V.value.cols());
    kernels::attention_backward(shape, Q.value.data(), K.value.data(), V.value.data(), probs.data(),
                                self.grad.data(), dq.data(), dk.data(), dv.data());
    if (Q.requires_grad) Q.grad_buffer() += dq;
    if (K.requires_grad) K.grad_buffer() += dk;
    if (V.requires_grad) V.grad_buffer() += dv;
  });
}

Var segment_max(const Var& states, int batch, int max_len, std::span<const int> lengths) {
  if (states.rows() != batch * max_len) throw ConfigError("segment_max: layout mismatch");
  const int c = states.cols();
  Matrix out(batch, c);
  std::vector<int> arg(static_cast<std::size_t>(batch) * c);
  for (int b = 0; b < batch; ++b) {
    if (lengths[b] <= 0) throw UsageError("segment_max: empty segment");
    for (int j = 0; j < c; ++j) {
      int best = b * max_len;
      for (int t = 1; t < lengths[b]; ++t)
        if (states.value()(b * max_len + t, j) > states.value()(best, j)) best = b * max_len + t;
      arg[static_cast<std::size_t>(b) * c + j] = best;
      out(b, j) = states.value()(best, j);
    }
  }
  return make_result(std::move(out), {states}, [batch, c, arg = std::move(arg)](Node& self) {
    Node& S = self.input(0);
    if (!S.requires_grad) return;
    Matrix& g = S.grad_buffer();
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < c; ++j) g(arg[static_cast<std::size_t>(b) * c + j], j) += self.grad(b, j);
  });
}

Var segment_mean(const Var& states, int batch, int max_len, std::span<const int> lengths) {
  if (states.rows() != batch * max_len) throw ConfigError("segment_mean: layout mismatch");
  const int c = states.cols();
  Matrix out(batch, c);
  std::vector<int> lens(lengths.begin(), lengths.end());
  for (int b = 0; b < batch; ++b) {
    if (lens[b] <= 0) throw UsageError("segment_mean: empty segment");
    for (int t = 0; t < lens[b]; ++t)
      for (int j = 0; j < c; ++j) out(b, j) += states.value()(b * max_len + t, j);
    for (int j = 0; j < c; ++j) out(b, j) /= lens[b];
  }
  return make_result(std::move(out), {states}, [batch, max_len, c, lens = std::move(lens)](Node& self) {
    Node& S = self.input(0);
    if (!S.requires_grad) return;
    Matrix& g = S.grad_buffer();
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < lens[b]; ++t)
        for (int j = 0; j < c; ++j) g(b * max_len + t, j) += self.grad(b, j) / lens[b];
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_index) {
  const int n = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != n) throw ConfigError("cross_entropy: target count mismatch");
  Matrix probs(n, v);
  double total = 0.0;
  int counted = 0;
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int i = 0; i < n; ++i) {
    if (tgt[i] == ignore_index) continue;
    if (tgt[i] < 0 || tgt[i] >= v) throw ConfigError("cross_entropy: target id out of range");
    const auto row = logits.value().row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      probs(i, j) = std::exp(row[j] - mx);
      z += probs(i, j);
    }
    for (int j = 0; j < v; ++j) probs(i, j) /= z;
    total += std::log(z) + mx - row[tgt[i]];
    ++counted;
  }
  Matrix out(1, 1, counted > 0 ? total / counted : 0.0);
  return make_result(std::move(out), {logits},
                     [n, v, counted, tgt = std::move(tgt), ignore_index, probs = std::move(probs)](Node& self) {
                       Node& L = self.input(0);
                       if (!L.requires_grad || counted == 0) return;
                       Matrix& g = L.grad_buffer();
                       const double s = self.grad[0] / counted;
                       for (int i = 0; i < n; ++i) {
                         if (tgt[i] == ignore_index) continue;
                         for (int j = 0; j < v; ++j) g(i, j) += s * probs(i, j);
                         g(i, tgt[i]) -= s;
                       }
                     });
}

}  // namespace fa::ag
