#include "flowadapter/flow/flow.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "flowadapter/core/errors.hpp"
#include "flowadapter/core/ops.hpp"

namespace fa::flow {

using ag::Var;

namespace {

Var zeros_column(int rows) { return ag::constant(Matrix(rows, 1)); }

Var broadcast_scalar(const Var& scalar, int rows) { return ag::expand_rows(scalar, rows); }

void require_finite(const Var& v, const std::string& where) {
  if (!v.value().all_finite()) throw NumericError(where + ": non-finite value");
}

Var row_var(const LatentVector& z) { return ag::constant(z.as_row()); }

}  // namespace

LatentVector LatentVector::from_row(const Matrix& m, int row) {
  auto r = m.row(row);
  return LatentVector(std::vector<double>(r.begin(), r.end()));
}

std::string to_string(FlowType t) { return t == FlowType::RealNVP ? "realnvp" : "glow"; }

FlowType flow_type_from_string(const std::string& s) {
  if (s == "realnvp" || s == "scf") return FlowType::RealNVP;
  if (s == "glow") return FlowType::Glow;
  throw ConfigError("unknown flow type '" + s + "' (expected realnvp or glow)");
}

// ---------------------------------------------------------------- coupling

CouplingLayer::CouplingLayer(int dim, int hidden, bool passthrough_first, double s_max, std::mt19937_64& rng)
    : dim_(dim), passthrough_first_(passthrough_first), s_max_(s_max) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("coupling layer needs an even dimension >= 2, got " + std::to_string(dim));
  const int half = dim / 2;
  trunk_in = nn::Linear(half, hidden, true, rng);
  trunk_hidden = nn::Linear(hidden, hidden, true, rng);
  scale_head = nn::Linear(hidden, half, true, rng, nn::Init::Zero);
  translate_head = nn::Linear(hidden, half, true, rng, nn::Init::Zero);
}

void CouplingLayer::check(const Var& x) const {
  if (x.cols() != dim_)
    throw ConfigError("coupling layer: expected dimension " + std::to_string(dim_) + ", got " + std::to_string(x.cols()));
}

std::pair<Var, Var> CouplingLayer::scale_translate(const Var& conditioner) const {
  Var h = ag::tanh(trunk_hidden(ag::tanh(trunk_in(conditioner))));
  Var s = ag::scale(ag::tanh(scale_head(h)), s_max_);
  Var t = translate_head(h);
  return {s, t};
}

FlowResult CouplingLayer::forward(const Var& z) const {
  check(z);
  const int half = dim_ / 2;
  Var first = ag::slice_cols(z, 0, half);
  Var second = ag::slice_cols(z, half, dim_);
  const Var& pass = passthrough_first_ ? first : second;
  const Var& moved = passthrough_first_ ? second : first;
  auto [s, t] = scale_translate(pass);
  Var moved_out = ag::add(ag::mul(moved, ag::exp(s)), t);
  Var out = passthrough_first_ ? ag::concat_cols({pass, moved_out}) : ag::concat_cols({moved_out, pass});
  return {out, ag::row_sum(s)};
}

FlowResult CouplingLayer::inverse(const Var& y) const {
  check(y);
  const int half = dim_ / 2;
  Var first = ag::slice_cols(y, 0, half);
  Var second = ag::slice_cols(y, half, dim_);
  const Var& pass = passthrough_first_ ? first : second;
  const Var& moved = passthrough_first_ ? second : first;
  auto [s, t] = scale_translate(pass);
  Var moved_out = ag::mul(ag::sub(moved, t), ag::exp(ag::scale(s, -1.0)));
  Var out = passthrough_first_ ? ag::concat_cols({pass, moved_out}) : ag::concat_cols({moved_out, pass});
  return {out, ag::scale(ag::row_sum(s), -1.0)};
}

void CouplingLayer::collect(const std::string& prefix, ag::ParamList& out) const {
  trunk_in.collect(prefix + ".trunk_in", out);
  trunk_hidden.collect(prefix + ".trunk_hidden", out);
  scale_head.collect(prefix + ".scale_head", out);
  translate_head.collect(prefix + ".translate_head", out);
}

// ---------------------------------------------------------------- actnorm

ActNorm::ActNorm(int dim)
    : log_scale(ag::parameter(Matrix(1, dim))),
      bias(ag::parameter(Matrix(1, dim))),
      initialized_(ag::constant(Matrix(1, 1))) {}

FlowResult ActNorm::forward(const Var& x) const {
  Var out = ag::add_row(ag::mul_row(x, ag::exp(log_scale)), bias);
  return {out, broadcast_scalar(ag::sum(log_scale), x.rows())};
}

FlowResult ActNorm::inverse(const Var& y) const {
  Var out = ag::mul_row(ag::add_row(y, ag::scale(bias, -1.0)), ag::exp(ag::scale(log_scale, -1.0)));
  return {out, broadcast_scalar(ag::scale(ag::sum(log_scale), -1.0), y.rows())};
}

void ActNorm::initialize_from(const Matrix& data_side) {
  const int n = data_side.rows(), d = data_side.cols();
  if (n == 0) return;
  Matrix& b = bias.mutable_value();
  Matrix& ls = log_scale.mutable_value();
  for (int j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += data_side(i, j);
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (data_side(i, j) - mu) * (data_side(i, j) - mu);
    b(0, j) = mu;
    ls(0, j) = n > 1 ? std::log(std::max(std::sqrt(var / (n - 1)), 1e-4)) : 0.0;
  }
  initialized_.mutable_value()(0, 0) = 1.0;
}

void ActNorm::set_scale(std::span<const double> scale) {
  Matrix& ls = log_scale.mutable_value();
  if (static_cast<int>(scale.size()) != ls.cols()) throw ConfigError("actnorm: scale dimension mismatch");
  for (int j = 0; j < ls.cols(); ++j) {
    if (scale[j] <= 0.0) throw ConfigError("actnorm: scale must be positive");
    ls(0, j) = std::log(scale[j]);
  }
}

void ActNorm::collect(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".log_scale", log_scale});
  out.push_back({prefix + ".bias", bias});
}

void ActNorm::collect_buffers(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".initialized", initialized_});
}

// ------------------------------------------------------- invertible linear

InvertibleLinear::InvertibleLinear(int dim)
    : lower(ag::parameter(Matrix(dim, dim))),
      upper(ag::parameter(Matrix(dim, dim))),
      log_s(ag::parameter(Matrix(1, dim))),
      dim_(dim),
      permutation_(ag::constant(Matrix::identity(dim))),
      sign_(ag::constant(Matrix(1, dim, 1.0))) {
  Matrix lm(dim, dim), um(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      if (j < i) lm(i, j) = 1.0;
      if (j > i) um(i, j) = 1.0;
    }
  lower_mask_ = ag::constant(std::move(lm));
  upper_mask_ = ag::constant(std::move(um));
}

void InvertibleLinear::check_invertible() const {
  if (!log_s.value().all_finite())
    throw NumericError("invertible linear: non-finite log|diag U| (matrix is singular or overflowed)");
}

Var InvertibleLinear::weight() const {
  check_invertible();
  Var eye = ag::constant(Matrix::identity(dim_));
  Var l = ag::add(ag::mul(lower, lower_mask_), eye);
  Var u = ag::add(ag::mul(upper, upper_mask_), ag::diag_embed(ag::mul(sign_, ag::exp(log_s))));
  return ag::matmul(permutation_, ag::matmul(l, u));
}

double InvertibleLinear::log_abs_det() const { return log_s.value().sum(); }

FlowResult InvertibleLinear::forward(const Var& x) const {
  Var out = ag::matmul_nt(x, weight());
  return {out, broadcast_scalar(ag::sum(log_s), x.rows())};
}

FlowResult InvertibleLinear::inverse(const Var& y) const {
  Var out = ag::matmul_nt(y, ag::inverse(weight()));
  return {out, broadcast_scalar(ag::scale(ag::sum(log_s), -1.0), y.rows())};
}

void InvertibleLinear::randomize_rotation(std::mt19937_64& rng) {
  using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::normal_distribution<double> normal(0.0, 1.0);
  EigenMat a(dim_, dim_);
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) a(i, j) = normal(rng);
  EigenMat q = Eigen::HouseholderQR<EigenMat>(a).householderQ();
  Eigen::PartialPivLU<EigenMat> lu(q);  // P q = L U
  EigenMat packed = lu.matrixLU();
  EigenMat p = lu.permutationP().toDenseMatrix().cast<double>();
  EigenMat p_inv = p.transpose();
  Matrix& lo = lower.mutable_value();
  Matrix& up = upper.mutable_value();
  Matrix& ls = log_s.mutable_value();
  Matrix perm(dim_, dim_), sign(1, dim_);
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) {
      lo(i, j) = j < i ? packed(i, j) : 0.0;
      up(i, j) = j > i ? packed(i, j) : 0.0;
      perm(i, j) = p_inv(i, j);
    }
  for (int i = 0; i < dim_; ++i) {
    sign(0, i) = packed(i, i) < 0 ? -1.0 : 1.0;
    ls(0, i) = std::log(std::abs(packed(i, i)));
  }
  permutation_ = ag::constant(std::move(perm));
  sign_ = ag::constant(std::move(sign));
}

void InvertibleLinear::collect(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".lower", lower});
  out.push_back({prefix + ".upper", upper});
  out.push_back({prefix + ".log_s", log_s});
}

void InvertibleLinear::collect_buffers(const std::string& prefix, ag::ParamList& out) const {
  out.push_back({prefix + ".permutation", permutation_});
  out.push_back({prefix + ".sign", sign_});
}

// ------------------------------------------------------------------- glow

GlowLayer::GlowLayer(int dim, int hidden, bool passthrough_first, double s_max, std::mt19937_64& rng)
    : actnorm(dim), linear(dim), coupling(dim, hidden, passthrough_first, s_max, rng) {}

FlowResult GlowLayer::forward(const Var& z) const {
  FlowResult a = actnorm.forward(z);
  FlowResult l = linear.forward(a.out);
  FlowResult c = coupling.forward(l.out);
  return {c.out, ag::add(ag::add(a.log_det, l.log_det), c.log_det)};
}

FlowResult GlowLayer::inverse(const Var& y) const {
  FlowResult c = coupling.inverse(y);
  FlowResult l = linear.inverse(c.out);
  FlowResult a = actnorm.inverse(l.out);
  return {a.out, ag::add(ag::add(c.log_det, l.log_det), a.log_det)};
}

void GlowLayer::collect(const std::string& prefix, ag::ParamList& out) const {
  actnorm.collect(prefix + ".actnorm", out);
  linear.collect(prefix + ".linear", out);
  coupling.collect(prefix + ".coupling", out);
}

void GlowLayer::collect_buffers(const std::string& prefix, ag::ParamList& out) const {
  actnorm.collect_buffers(prefix + ".actnorm", out);
  linear.collect_buffers(prefix + ".linear", out);
}

// ------------------------------------------------------------------ stack

FlowStack::FlowStack(const FlowConfig& cfg, std::string language, std::mt19937_64& rng)
    : cfg_(cfg), language_(std::move(language)) {
  if (cfg.layers < 1) throw ConfigError("flow stack needs at least one layer");
  if (cfg.dim < 2 || cfg.dim % 2 != 0) throw ConfigError("latent dimension must be even, got " + std::to_string(cfg.dim));
  layers_.reserve(static_cast<std::size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i) {
    const bool passthrough_first = (i % 2 == 0);
    if (cfg.type == FlowType::RealNVP)
      layers_.emplace_back(std::in_place_type<CouplingLayer>, cfg.dim, cfg.hidden, passthrough_first, cfg.s_max, rng);
    else
      layers_.emplace_back(std::in_place_type<GlowLayer>, cfg.dim, cfg.hidden, passthrough_first, cfg.s_max, rng);
  }
}

void FlowStack::check_dim(const Var& x, const char* op) const {
  if (x.cols() != cfg_.dim)
    throw ConfigError(std::string(op) + " (" + language_ + "): expected latent dimension " + std::to_string(cfg_.dim) +
                      ", got " + std::to_string(x.cols()));
}

FlowResult FlowStack::forward(const Var& z) const {
  check_dim(z, "stack_forward");
  Var x = z;
  Var log_det = zeros_column(z.rows());
  for (int i = size() - 1; i >= 0; --i) {
    FlowResult r = std::visit([&](const auto& layer) { return layer.inverse(x); }, layers_[i]);
    x = r.out;
    log_det = ag::add(log_det, r.log_det);
    require_finite(x, "flow " + language_ + " layer " + std::to_string(i) + " (latent->base)");
  }
  return {x, log_det};
}

FlowResult FlowStack::inverse(const Var& eps) const {
  check_dim(eps, "stack_inverse");
  Var x = eps;
  Var log_det = zeros_column(eps.rows());
  for (int i = 0; i < size(); ++i) {
    FlowResult r = std::visit([&](const auto& layer) { return layer.forward(x); }, layers_[i]);
    x = r.out;
    log_det = ag::add(log_det, r.log_det);
    require_finite(x, "flow " + language_ + " layer " + std::to_string(i) + " (base->latent)");
  }
  return {x, log_det};
}

void FlowStack::initialize(const Matrix& latents) {
  if (latents.cols() != cfg_.dim) throw ConfigError("flow initialize: latent dimension mismatch");
  ag::NoGradGuard no_grad;
  Var x = ag::constant(latents);
  for (int i = size() - 1; i >= 0; --i) {
    if (auto* glow = std::get_if<GlowLayer>(&layers_[i])) {
      Var v = glow->linear.inverse(glow->coupling.inverse(x).out).out;
      if (!glow->actnorm.initialized()) glow->actnorm.initialize_from(v.value());
      x = glow->actnorm.inverse(v).out;
    } else {
      x = std::get<CouplingLayer>(layers_[i]).inverse(x).out;
    }
  }
}

void FlowStack::collect(const std::string& prefix, ag::ParamList& out) const {
  for (int i = 0; i < size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    std::visit([&](const auto& layer) { layer.collect(p, out); }, layers_[i]);
  }
}

void FlowStack::collect_buffers(const std::string& prefix, ag::ParamList& out) const {
  for (int i = 0; i < size(); ++i)
    if (const auto* glow = std::get_if<GlowLayer>(&layers_[i]))
      glow->collect_buffers(prefix + ".layer" + std::to_string(i), out);
}

// ------------------------------------------------------------------- base

Var BaseDistribution::log_density(const Var& eps) const {
  if (eps.cols() != dim_) throw ConfigError("base density: dimension mismatch");
  const double norm = 0.5 * dim_ * std::log(2.0 * std::numbers::pi);
  return ag::add_scalar(ag::scale(ag::row_sum(ag::square(eps)), -0.5), -norm);
}

double BaseDistribution::log_density(const LatentVector& eps) const {
  ag::NoGradGuard no_grad;
  return log_density(row_var(eps)).value()(0, 0);
}

// ------------------------------------------------------ single-vector API

namespace {

template <typename F>
std::pair<LatentVector, double> apply_single(const LatentVector& z, F&& f) {
  ag::NoGradGuard no_grad;
  FlowResult r = f(row_var(z));
  return {LatentVector::from_row(r.out.value()), r.log_det.value()(0, 0)};
}

}  // namespace

std::pair<LatentVector, double> coupling_forward(const CouplingLayer& layer, const LatentVector& z) {
  return apply_single(z, [&](const Var& v) { return layer.forward(v); });
}

std::pair<LatentVector, double> coupling_inverse(const CouplingLayer& layer, const LatentVector& y) {
  return apply_single(y, [&](const Var& v) { return layer.inverse(v); });
}

std::pair<LatentVector, double> glow_forward(const GlowLayer& layer, const LatentVector& z) {
  return apply_single(z, [&](const Var& v) { return layer.forward(v); });
}

std::pair<LatentVector, double> glow_inverse(const GlowLayer& layer, const LatentVector& y) {
  return apply_single(y, [&](const Var& v) { return layer.inverse(v); });
}

std::pair<LatentVector, double> stack_forward(const FlowStack& stack, const LatentVector& z) {
  return apply_single(z, [&](const Var& v) { return stack.forward(v); });
}

std::pair<LatentVector, double> stack_inverse(const FlowStack& stack, const LatentVector& eps) {
  return apply_single(eps, [&](const Var& v) { return stack.inverse(v); });
}

Var log_prob(const FlowStack& stack, const BaseDistribution& base, const Var& z) {
  if (base.dim() != stack.dim()) throw ConfigError("log_prob: base and flow dimensions differ");
  FlowResult r = stack.forward(z);
  Var lp = ag::add(base.log_density(r.out), r.log_det);
  require_finite(lp, "log_prob (" + stack.language() + ")");
  return lp;
}

double log_prob(const FlowStack& stack, const BaseDistribution& base, const LatentVector& z) {
  ag::NoGradGuard no_grad;
  return log_prob(stack, base, row_var(z)).value()(0, 0);
}

Var mle_loss(const FlowStack& stack, const BaseDistribution& base, const Var& batch) {
  if (!batch.defined() || batch.rows() == 0) throw UsageError("mle_loss: empty batch");
  return ag::scale(ag::mean(log_prob(stack, base, batch)), -1.0);
}

double mle_loss(const FlowStack& stack, const BaseDistribution& base, std::span<const LatentVector> batch) {
  if (batch.empty()) throw UsageError("mle_loss: empty batch");
  const int d = batch.front().dim();
  Matrix m(static_cast<int>(batch.size()), d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].dim() != d) throw UsageError("mle_loss: non-uniform latent dimensions");
    std::copy(batch[i].values.begin(), batch[i].values.end(), m.row(static_cast<int>(i)).begin());
  }
  ag::NoGradGuard no_grad;
  return mle_loss(stack, base, ag::constant(std::move(m))).item();
}

Var transform_latent(const FlowStack& source, const FlowStack& target, const Var& z) {
  if (source.dim() != target.dim())
    throw ConfigError("transform_latent: flow dimensions differ (" + std::to_string(source.dim()) + " vs " +
                      std::to_string(target.dim()) + ")");
  return target.inverse(source.forward(z).out).out;
}

LatentVector transform_latent(const FlowStack& source, const FlowStack& target, const LatentVector& z) {
  ag::NoGradGuard no_grad;
  return LatentVector::from_row(transform_latent(source, target, row_var(z)).value());
}

}  // namespace fa::flow
