#pragma once

#include <random>
#include <string>
#include <vector>

#include "flowadapter/core/autograd.hpp"
#include "flowadapter/core/nn.hpp"

namespace fa::sentrep {

// Encoder outputs for a padded batch: `states` is (batch * max_len) x d_model,
// sentence b owns rows [b * max_len, b * max_len + lengths[b]); row b * max_len
// is h_0 (the bos position).
struct EncoderStates {
  ag::Var states;
  int batch = 0;
  int max_len = 0;
  std::vector<int> lengths;

  int dim() const { return states.cols(); }
  void validate() const;
};

// Bias-free linear map d_model -> d_z.
class ProjectionMap {
 public:
  ProjectionMap() = default;
  ProjectionMap(int d_model, int d_z, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x) const { return map(x); }
  int out_dim() const { return map.out_features(); }
  void collect(const std::string& prefix, ag::ParamList& out) const { map.collect(prefix, out); }

  nn::Linear map;
};

// g = sigmoid([s; z] G + b), optional latent projection z' = z P (zero-initialized).
class GateParams {
 public:
  GateParams() = default;
  GateParams(int d_out, int d_z, std::mt19937_64& rng);

  int out_dim() const { return gate.out_features(); }
  int latent_dim() const { return gate.in_features() - gate.out_features(); }
  bool projects_latent() const { return latent_proj.weight.defined(); }
  void collect(const std::string& prefix, ag::ParamList& out) const;

  nn::Linear gate;
  nn::Linear latent_proj;  // undefined when d_z == d_out
};

// z = W (maxpool(H) + meanpool(H) + h_0), one row per sentence.
ag::Var pool_representation(const EncoderStates& h, const ProjectionMap& proj);

// Gate activations for decoder rows `s` and per-row latents `z`.
ag::Var gate_values(const ag::Var& s, const ag::Var& z, const GateParams& params);

// o = (1 - g) * s + g * z'
ag::Var gate_fuse(const ag::Var& s, const ag::Var& z, const GateParams& params);

}  // namespace fa::sentrep
