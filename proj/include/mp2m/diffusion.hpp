#pragma once

// DDPM machinery: linear variance schedule, forward corruption, posterior
// identities, the noise-prediction loss and the ancestral sampler. Steps s are
// 1-indexed; alpha_bar_0 is taken to be 1.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mp2m/autodiff.hpp"
#include "mp2m/rng.hpp"

namespace mp2m {

struct Schedule {
  std::vector<double> betas;       // betas[s - 1] = beta_s
  std::vector<double> alphas;      // 1 - beta_s
  std::vector<double> alpha_bars;  // prod_{m <= s} alpha_m

  int steps() const { return static_cast<int>(betas.size()); }
  double beta(int s) const { return betas.at(static_cast<std::size_t>(s - 1)); }
  double alpha(int s) const { return alphas.at(static_cast<std::size_t>(s - 1)); }
  double alpha_bar(int s) const {
    return s == 0 ? 1.0 : alpha_bars.at(static_cast<std::size_t>(s - 1));
  }
  void check_step(int s) const;  // throws ArgumentError unless 1 <= s <= S
};

// Linear betas from beta_start to beta_end inclusive.
Schedule make_schedule(int steps = 100, double beta_start = 1e-4,
                       double beta_end = 5e-2);

// sqrt(alpha_bar_s) * y0 + sqrt(1 - alpha_bar_s) * z, elementwise.
std::vector<double> q_sample(std::span<const double> y0, int s,
                             std::span<const double> z, const Schedule& schedule);

// Mean of q(Y^{s-1} | Y^s, Y^0).
std::vector<double> posterior_mean(std::span<const double> y0,
                                   std::span<const double> ys, int s,
                                   const Schedule& schedule);
// (1 - alpha_bar_{s-1}) / (1 - alpha_bar_s) * beta_s.
double posterior_var(int s, const Schedule& schedule);

// (ys - beta_s / sqrt(1 - alpha_bar_s) * eps) / sqrt(alpha_s).
std::vector<double> mu_theta(std::span<const double> ys, int s,
                             std::span<const double> eps_pred,
                             const Schedule& schedule);

// mu_theta + sqrt(beta_s) * z; z is ignored at s = 1.
std::vector<double> ddpm_step(std::span<const double> ys, int s,
                              std::span<const double> eps_pred,
                              std::span<const double> z, const Schedule& schedule);

// Noise predictor eps(Y^s, s, G). `noisy` stacks B trajectories of T rows
// (B*T x 2), `steps` holds one step per trajectory and `cond` is B x d_cond.
using EpsModel = std::function<ad::Var(ad::Graph& g, ad::Var noisy,
                                       std::span<const int> steps, ad::Var cond)>;

// Mean squared error between drawn noise and the model's prediction. For each
// trajectory b a step s_b ~ U{1..S} and then z_b ~ N(0, I) are drawn from rng.
// y0 is B*T x 2, cond is B x d_cond.
ad::Var training_loss(ad::Graph& g, const ad::Tensor& y0, ad::Var cond,
                      const EpsModel& model, const Schedule& schedule, Rng& rng);

// Runs one reverse chain per stream, all batched together: Y^S ~ N(0, I) and
// then ddpm_step for s = S..1, consuming normals from streams[k] only. conds
// is n x d_cond. Returns n * t_pred x 2.
ad::Tensor sample_chains(const EpsModel& model, const ad::Tensor& conds,
                         std::size_t t_pred, const Schedule& schedule,
                         std::span<Rng> streams);

// sample_chains with streams Rng::stream(seed, {k}) for k < n_samples; conds
// holds one row per sample.
ad::Tensor sample(const EpsModel& model, const ad::Tensor& conds,
                  std::size_t t_pred, const Schedule& schedule,
                  std::uint64_t seed, std::size_t n_samples);

}  // namespace mp2m
