#pragma once

// Transformer noise predictor. Each trajectory becomes a token sequence
// [time, condition, y_1 .. y_T]: the step embedding and G are projected to
// d_model as two prefix tokens, every noisy point is projected to d_model plus
// a fixed sinusoidal position code. Pre-norm self-attention blocks follow and
// a three-layer head (d_model -> d_model -> d_model/2 -> 2) reads the
// trajectory tokens back out as noise.

#include <span>

#include "mp2m/autodiff.hpp"
#include "mp2m/diffusion.hpp"
#include "mp2m/rng.hpp"

namespace mp2m {

struct DenoiserConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int t_pred = 12;
  int d_cond = 64;
  int n_steps = 100;  // diffusion steps S, bounds the time embedding
  double lambda_max = 10000.0;

  void validate() const;  // throws ArgumentError
};

// Parameter names are prefixed with "den.".
class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config);

  const DenoiserConfig& config() const { return config_; }
  void init_params(ad::ParamStore& store, Rng& rng) const;

  // noisy: B*t_pred x 2, steps: B entries, cond: B x d_cond. Returns
  // B*t_pred x 2.
  ad::Var forward(ad::Graph& g, ad::ParamStore& store, ad::Var noisy,
                  std::span<const int> steps, ad::Var cond) const;

  // Binds forward() to `store` as an EpsModel.
  EpsModel bind(ad::ParamStore& store) const;

 private:
  DenoiserConfig config_;
};

}  // namespace mp2m
