#include "flowadapter/core/nn.hpp"

#include <cmath>

#include "flowadapter/core/ops.hpp"

namespace fa::nn {

Matrix xavier_uniform(int in, int out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(in, out);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Matrix gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Linear::Linear(int in, int out, bool with_bias, std::mt19937_64& rng, Init init) {
  weight = ag::parameter(init == Init::Xavier ? xavier_uniform(in, out, rng) : Matrix(in, out));
  if (with_bias) bias = ag::parameter(Matrix(1, out));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim) : gain(ag::parameter(Matrix(1, dim, 1.0))), bias(ag::parameter(Matrix(1, dim))) {}

ag::Var LayerNorm::operator()(const ag::Var& x) const { return ag::layer_norm(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace fa::nn
