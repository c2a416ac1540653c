#pragma once

// Conditioning path of the denoiser: motion-state encoder, sinusoidal target
// token, diffusion-step embedding and their fusion into the condition G.

#include <span>
#include <vector>

#include "mp2m/autodiff.hpp"
#include "mp2m/data.hpp"
#include "mp2m/layers.hpp"
#include "mp2m/rng.hpp"

namespace mp2m {

struct EncoderConfig {
  int t_obs = 8;
  int d_state = 64;
  int d_token = 32;  // even; x and y get d_token / 2 sinusoid dims each
  int d_cond = 64;
  int mlp_hidden = 64;
  double lambda_max = 10000.0;
  Activation token_activation = Activation::kGelu;

  void validate() const;  // throws ArgumentError
};

// out[2j] = sin(p / lambda^(2j/d)), out[2j+1] = cos(p / lambda^(2j/d)).
std::vector<double> sinusoid_embed(double p, std::size_t d, double lambda);

// Sinusoid of the diffusion step s, 1 <= s <= n_steps.
std::vector<double> time_embed(int s, int n_steps, std::size_t d, double lambda);

// Per-coordinate sinusoids of x and y (d / 2 dims each), concatenated.
std::vector<double> target_features(Vec2 target, std::size_t d, double lambda);

// Rows of positions followed by first differences (the first velocity is
// zero), flattened: 4 * t_obs features per observed window.
ad::Tensor motion_features(std::span<const Trajectory> observed);

// Parameter names are prefixed with "enc.".
class ConditionEncoder {
 public:
  explicit ConditionEncoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  // Adds the state MLP, token MLP, fusion layer and the endpoint head used by
  // the no-memory ablation.
  void init_params(ad::ParamStore& store, Rng& rng) const;

  // features: B x (4 * t_obs) from motion_features(); returns B x d_state.
  ad::Var encode_motion_state(ad::Graph& g, ad::ParamStore& store,
                              const ad::Tensor& features) const;
  // B targets -> B x d_token.
  ad::Var target_token(ad::Graph& g, ad::ParamStore& store,
                       std::span<const Vec2> targets) const;
  // affine(concat(state, token)) -> B x d_cond.
  ad::Var build_condition(ad::Graph& g, ad::ParamStore& store, ad::Var state,
                          ad::Var token) const;
  // Linear endpoint regression from the motion state, B x 2.
  ad::Var predict_endpoint(ad::Graph& g, ad::ParamStore& store,
                           ad::Var state) const;

 private:
  EncoderConfig config_;
};

}  // namespace mp2m
