#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flowadapter/core/autograd.hpp"
#include "flowadapter/core/nn.hpp"

// Per-language normalizing flows over sentence-level latent vectors.
//
// Layer "forward" is the generative direction (base space -> latent space).
// FlowStack::forward is the density direction (latent -> base) and applies the
// layer inverses in reverse order; its log-det is that of the latent->base
// Jacobian, so log p(z) = log N(forward(z)) + log_det.

namespace fa::flow {

// A single sentence-level latent (or base-space) vector.
struct LatentVector {
  std::vector<double> values;

  LatentVector() = default;
  explicit LatentVector(std::vector<double> v) : values(std::move(v)) {}
  LatentVector(std::initializer_list<double> v) : values(v) {}

  int dim() const { return static_cast<int>(values.size()); }
  Matrix as_row() const { return Matrix::row_vector(values); }
  static LatentVector from_row(const Matrix& m, int row = 0);
};

// Batched flow output: `out` is (batch x dim), `log_det` is (batch x 1).
struct FlowResult {
  ag::Var out;
  ag::Var log_det;
};

enum class FlowType { RealNVP, Glow };

std::string to_string(FlowType t);
FlowType flow_type_from_string(const std::string& s);

struct FlowConfig {
  FlowType type = FlowType::RealNVP;
  int layers = 3;
  int dim = 32;
  int hidden = 64;
  double s_max = 2.0;
};

// Affine coupling: the passthrough half conditions scale/translate of the other
// half through a shared tanh trunk with separate zero-initialized heads.
class CouplingLayer {
 public:
  CouplingLayer(int dim, int hidden, bool passthrough_first, double s_max, std::mt19937_64& rng);

  FlowResult forward(const ag::Var& z) const;
  FlowResult inverse(const ag::Var& y) const;

  int dim() const { return dim_; }
  bool passthrough_first() const { return passthrough_first_; }
  double s_max() const { return s_max_; }
  void collect(const std::string& prefix, ag::ParamList& out) const;

  nn::Linear trunk_in;
  nn::Linear trunk_hidden;
  nn::Linear scale_head;
  nn::Linear translate_head;

 private:
  std::pair<ag::Var, ag::Var> scale_translate(const ag::Var& conditioner) const;
  void check(const ag::Var& x) const;

  int dim_;
  bool passthrough_first_;
  double s_max_;
};

// Per-dimension affine map y = x * exp(log_scale) + bias.
class ActNorm {
 public:
  explicit ActNorm(int dim);

  FlowResult forward(const ag::Var& x) const;
  FlowResult inverse(const ag::Var& y) const;
  // Sets bias/scale so that inverse() standardizes the given data-side batch.
  void initialize_from(const Matrix& data_side);
  bool initialized() const { return initialized_.value()(0, 0) != 0.0; }
  void set_scale(std::span<const double> scale);
  void collect(const std::string& prefix, ag::ParamList& out) const;
  void collect_buffers(const std::string& prefix, ag::ParamList& out) const;

  ag::Var log_scale;
  ag::Var bias;

 private:
  ag::Var initialized_;  // 1 x 1 flag, not trainable
};

// d x d invertible map W = P L U with fixed permutation P, unit lower-triangular
// L and upper-triangular U whose diagonal is sign * exp(log_s).
class InvertibleLinear {
 public:
  explicit InvertibleLinear(int dim);  // identity

  FlowResult forward(const ag::Var& x) const;
  FlowResult inverse(const ag::Var& y) const;
  ag::Var weight() const;
  double log_abs_det() const;
  // Re-parameterizes from a random orthogonal matrix.
  void randomize_rotation(std::mt19937_64& rng);
  void collect(const std::string& prefix, ag::ParamList& out) const;
  void collect_buffers(const std::string& prefix, ag::ParamList& out) const;

  ag::Var lower;
  ag::Var upper;
  ag::Var log_s;

 private:
  void check_invertible() const;

  int dim_;
  ag::Var permutation_;  // constant permutation matrix
  ag::Var sign_;         // constant 1 x d of +-1
  ag::Var lower_mask_;
  ag::Var upper_mask_;
};

class GlowLayer {
 public:
  GlowLayer(int dim, int hidden, bool passthrough_first, double s_max, std::mt19937_64& rng);

  FlowResult forward(const ag::Var& z) const;
  FlowResult inverse(const ag::Var& y) const;
  void collect(const std::string& prefix, ag::ParamList& out) const;
  void collect_buffers(const std::string& prefix, ag::ParamList& out) const;

  ActNorm actnorm;
  InvertibleLinear linear;
  CouplingLayer coupling;
};

using FlowLayer = std::variant<CouplingLayer, GlowLayer>;

class FlowStack {
 public:
  FlowStack(const FlowConfig& cfg, std::string language, std::mt19937_64& rng);

  // latent -> base
  FlowResult forward(const ag::Var& z) const;
  // base -> latent
  FlowResult inverse(const ag::Var& eps) const;

  // Data-dependent actnorm initialization from a batch of latents (no-op for
  // realNVP stacks and for already-initialized layers).
  void initialize(const Matrix& latents);

  int dim() const { return cfg_.dim; }
  int size() const { return static_cast<int>(layers_.size()); }
  const FlowConfig& config() const { return cfg_; }
  const std::string& language() const { return language_; }
  std::vector<FlowLayer>& layers() { return layers_; }
  const std::vector<FlowLayer>& layers() const { return layers_; }

  void collect(const std::string& prefix, ag::ParamList& out) const;
  void collect_buffers(const std::string& prefix, ag::ParamList& out) const;

 private:
  void check_dim(const ag::Var& x, const char* op) const;

  FlowConfig cfg_;
  std::string language_;
  std::vector<FlowLayer> layers_;
};

// Standard normal base density.
class BaseDistribution {
 public:
  explicit BaseDistribution(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  ag::Var log_density(const ag::Var& eps) const;  // (batch x 1)
  double log_density(const LatentVector& eps) const;

 private:
  int dim_;
};

// Single-vector entry points.
std::pair<LatentVector, double> coupling_forward(const CouplingLayer& layer, const LatentVector& z);
std::pair<LatentVector, double> coupling_inverse(const CouplingLayer& layer, const LatentVector& y);
std::pair<LatentVector, double> glow_forward(const GlowLayer& layer, const LatentVector& z);
std::pair<LatentVector, double> glow_inverse(const GlowLayer& layer, const LatentVector& y);
std::pair<LatentVector, double> stack_forward(const FlowStack& stack, const LatentVector& z);
std::pair<LatentVector, double> stack_inverse(const FlowStack& stack, const LatentVector& eps);

// Batched log-density, (batch x 1).
ag::Var log_prob(const FlowStack& stack, const BaseDistribution& base, const ag::Var& z);
double log_prob(const FlowStack& stack, const BaseDistribution& base, const LatentVector& z);

// Negative mean log-likelihood over the rows of `batch`.
ag::Var mle_loss(const FlowStack& stack, const BaseDistribution& base, const ag::Var& batch);
double mle_loss(const FlowStack& stack, const BaseDistribution& base, std::span<const LatentVector> batch);

// Cross-language latent code transformation: target.inverse(source.forward(z)).
ag::Var transform_latent(const FlowStack& source, const FlowStack& target, const ag::Var& z);
LatentVector transform_latent(const FlowStack& source, const FlowStack& target, const LatentVector& z);

}  // namespace fa::flow
