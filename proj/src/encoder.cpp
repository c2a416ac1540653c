#include "mp2m/encoder.hpp"

#include <cmath>

#include "mp2m/errors.hpp"

namespace mp2m {

void EncoderConfig::validate() const {
  if (t_obs < 1) throw ArgumentError("t_obs must be >= 1");
  if (d_state < 2 || d_token < 2 || d_cond < 2 || mlp_hidden < 2) {
    throw ArgumentError("encoder dimensions must be >= 2");
  }
  if (d_token % 4 != 0) {
    throw ArgumentError("d_token must be a multiple of 4 (two even sinusoid halves)");
  }
  if (!(lambda_max > 0.0)) throw ArgumentError("lambda_max must be positive");
}

std::vector<double> sinusoid_embed(double p, std::size_t d, double lambda) {
  if (d == 0 || d % 2 != 0) {
    throw ArgumentError("sinusoid_embed: dimension must be even, got " + std::to_string(d));
  }
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d / 2; ++j) {
    const double freq = std::pow(lambda, -static_cast<double>(2 * j) / static_cast<double>(d));
    out[2 * j] = std::sin(p * freq);
    out[2 * j + 1] = std::cos(p * freq);
  }
  return out;
}

std::vector<double> time_embed(int s, int n_steps, std::size_t d, double lambda) {
  if (s < 1 || s > n_steps) {
    throw ArgumentError("time_embed: step " + std::to_string(s) + " outside [1, " +
                        std::to_string(n_steps) + "]");
  }
  return sinusoid_embed(static_cast<double>(s), d, lambda);
}

std::vector<double> target_features(Vec2 target, std::size_t d, double lambda) {
  if (d % 2 != 0) throw ArgumentError("target_features: dimension must be even");
  auto out = sinusoid_embed(target.x, d / 2, lambda);
  auto ys = sinusoid_embed(target.y, d / 2, lambda);
  out.insert(out.end(), ys.begin(), ys.end());
  return out;
}

ad::Tensor motion_features(std::span<const Trajectory> observed) {
  if (observed.empty()) throw ArgumentError("motion_features: no windows");
  const std::size_t t = observed[0].size();
  ad::Tensor out = ad::Tensor::zeros(observed.size(), 4 * t);
  for (std::size_t b = 0; b < observed.size(); ++b) {
    const auto& w = observed[b];
    if (w.size() != t) throw ArgumentError("motion_features: windows differ in length");
    for (std::size_t i = 0; i < t; ++i) {
      out(b, 2 * i) = w[i].x;
      out(b, 2 * i + 1) = w[i].y;
      const Vec2 v = i == 0 ? Vec2{} : w[i] - w[i - 1];
      out(b, 2 * t + 2 * i) = v.x;
      out(b, 2 * t + 2 * i + 1) = v.y;
    }
  }
  return out;
}

ConditionEncoder::ConditionEncoder(EncoderConfig config) : config_(config) {
  config_.validate();
}

void ConditionEncoder::init_params(ad::ParamStore& store, Rng& rng) const {
  const auto& c = config_;
  add_mlp(store, "enc.state", 4 * static_cast<std::size_t>(c.t_obs), c.mlp_hidden,
          c.d_state, rng);
  add_mlp(store, "enc.token", c.d_token, c.mlp_hidden, c.d_token, rng);
  add_linear(store, "enc.fuse", c.d_state + c.d_token, c.d_cond, rng);
  add_linear(store, "enc.endpoint", c.d_state, 2, rng);
}

ad::Var ConditionEncoder::encode_motion_state(ad::Graph& g, ad::ParamStore& store,
                                              const ad::Tensor& features) const {
  if (features.cols() != 4 * static_cast<std::size_t>(config_.t_obs)) {
    throw ArgumentError("encode_motion_state: expected " +
                        std::to_string(4 * config_.t_obs) + " features, got " +
                        std::to_string(features.cols()));
  }
  return mlp(g, store, "enc.state", g.constant(features));
}

ad::Var ConditionEncoder::target_token(ad::Graph& g, ad::ParamStore& store,
                                       std::span<const Vec2> targets) const {
  const std::size_t d = static_cast<std::size_t>(config_.d_token);
  ad::Tensor feats = ad::Tensor::zeros(targets.size(), d);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (!std::isfinite(targets[b].x) || !std::isfinite(targets[b].y)) {
      throw ArgumentError("target_token: non-finite target");
    }
    const auto f = target_features(targets[b], d, config_.lambda_max);
    std::copy(f.begin(), f.end(), feats.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return mlp(g, store, "enc.token", g.constant(std::move(feats)),
             config_.token_activation);
}

ad::Var ConditionEncoder::build_condition(ad::Graph& g, ad::ParamStore& store,
                                          ad::Var state, ad::Var token) const {
  if (state.cols() != static_cast<std::size_t>(config_.d_state) ||
      token.cols() != static_cast<std::size_t>(config_.d_token) ||
      state.rows() != token.rows()) {
    throw ArgumentError("build_condition: expected B x " + std::to_string(config_.d_state) +
                        " state and B x " + std::to_string(config_.d_token) + " token");
  }
  const ad::Var parts[] = {state, token};
  return linear(g, store, "enc.fuse", ad::concat_cols(parts));
}

ad::Var ConditionEncoder::predict_endpoint(ad::Graph& g, ad::ParamStore& store,
                                           ad::Var state) const {
  return linear(g, store, "enc.endpoint", state);
}

}  // namespace mp2m
