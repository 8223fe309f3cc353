#pragma once

#include <random>
#include <string>

#include "flowadapter/core/autograd.hpp"

namespace fa::nn {

enum class Init { Xavier, Zero };

// y = x W + b, W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, bool with_bias, std::mt19937_64& rng, Init init = Init::Xavier);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  int in_features() const { return weight.rows(); }
  int out_features() const { return weight.cols(); }

  ag::Var weight;
  ag::Var bias;  // undefined when constructed without bias
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;

  ag::Var gain;
  ag::Var bias;
};

Matrix xavier_uniform(int in, int out, std::mt19937_64& rng);
Matrix gaussian(int rows, int cols, double stddev, std::mt19937_64& rng);

}  // namespace fa::nn
