#include "gradcheck.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace fa::testing {

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  if (denom < 1e-12) return 0.0;
  return std::sqrt(diff) / denom;
}

std::vector<GradCheck> check_gradients(const std::function<ag::Var()>& loss, const ag::ParamList& params,
                                       double step) {
  ag::zero_grads(params);
  loss().backward();
  std::vector<GradCheck> out;
  for (const auto& p : params) {
    ag::Var v = p.var;
    Matrix analytic = v.grad().empty() ? Matrix(v.rows(), v.cols()) : v.grad();
    Matrix numeric(v.rows(), v.cols());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double orig = v.value()[i];
      double plus = 0.0, minus = 0.0;
      {
        ag::NoGradGuard guard;
        v.mutable_value()[i] = orig + step;
        plus = loss().item();
        v.mutable_value()[i] = orig - step;
        minus = loss().item();
      }
      v.mutable_value()[i] = orig;
      numeric[i] = (plus - minus) / (2.0 * step);
    }
    double norm = 0.0;
    for (double g : analytic.values()) norm += g * g;
    out.push_back({p.name, relative_error(analytic, numeric), std::sqrt(norm)});
  }
  return out;
}

double finite_difference_log_abs_det(const std::function<Matrix(const Matrix&)>& f, const Matrix& x, double step) {
  const int d = x.cols();
  Eigen::MatrixXd jac(d, d);
  for (int j = 0; j < d; ++j) {
    Matrix xp = x, xm = x;
    xp(0, j) += step;
    xm(0, j) -= step;
    const Matrix fp = f(xp), fm = f(xm);
    for (int i = 0; i < d; ++i) jac(i, j) = (fp(0, i) - fm(0, i)) / (2.0 * step);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace fa::testing

namespace fa::testing {

void perturb(const ag::ParamList& params, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> noise(0.0, stddev);
  for (const auto& p : params) {
    ag::Var v = p.var;
    for (double& x : v.mutable_value().values()) x += noise(rng);
  }
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> noise(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = noise(rng);
  return m;
}

}  // namespace fa::testing
