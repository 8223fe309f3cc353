#include "flowadapter/sentrep/sentrep.hpp"

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"

namespace fa::sentrep {

void EncoderStates::validate() const {
  if (!states.defined() || batch <= 0) throw UsageError("encoder states are empty");
  if (states.rows() != batch * max_len || static_cast<int>(lengths.size()) != batch)
    throw ConfigError("encoder states: layout does not match batch/max_len");
  for (int len : lengths)
    if (len <= 0 || len > max_len) throw UsageError("encoder states: sentence with no states");
}

ProjectionMap::ProjectionMap(int d_model, int d_z, std::mt19937_64& rng) : map(d_model, d_z, false, rng) {}

GateParams::GateParams(int d_out, int d_z, std::mt19937_64& rng) : gate(d_out + d_z, d_out, true, rng) {
  if (d_z != d_out) latent_proj = nn::Linear(d_z, d_out, false, rng, nn::Init::Zero);
}

void GateParams::collect(const std::string& prefix, ag::ParamList& out) const {
  gate.collect(prefix + ".gate", out);
  if (projects_latent()) latent_proj.collect(prefix + ".latent_proj", out);
}

ag::Var pool_representation(const EncoderStates& h, const ProjectionMap& proj) {
  h.validate();
  if (proj.map.in_features() != h.dim()) throw ConfigError("pool_representation: projection input dimension mismatch");
  std::vector<int> first(static_cast<std::size_t>(h.batch));
  for (int b = 0; b < h.batch; ++b) first[b] = b * h.max_len;
  ag::Var pooled = ag::add(ag::add(ag::segment_max(h.states, h.batch, h.max_len, h.lengths),
                                   ag::segment_mean(h.states, h.batch, h.max_len, h.lengths)),
                           ag::gather_rows(h.states, first));
  return proj(pooled);
}

ag::Var gate_values(const ag::Var& s, const ag::Var& z, const GateParams& params) {
  if (s.cols() != params.out_dim() || z.cols() != params.latent_dim() || s.rows() != z.rows())
    throw ConfigError("gate_fuse: expected s " + std::to_string(s.rows()) + "x" + std::to_string(params.out_dim()) +
                      " and z with " + std::to_string(params.latent_dim()) + " columns");
  return ag::sigmoid(params.gate(ag::concat_cols({s, z})));
}

ag::Var gate_fuse(const ag::Var& s, const ag::Var& z, const GateParams& params) {
  ag::Var g = gate_values(s, z, params);
  ag::Var zp = params.projects_latent() ? params.latent_proj(z) : z;
  // (1 - g) * s + g * z'  ==  s + g * (z' - s)
  return ag::add(s, ag::mul(g, ag::sub(zp, s)));
}

}  // namespace fa::sentrep
