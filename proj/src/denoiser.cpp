#include "mp2m/denoiser.hpp"

#include <string>

#include "mp2m/encoder.hpp"
#include "mp2m/errors.hpp"
#include "mp2m/layers.hpp"

namespace mp2m {

void DenoiserConfig::validate() const {
  if (n_layers < 1) throw ArgumentError("n_layers must be >= 1");
  if (d_model < 4 || d_model % 2 != 0) throw ArgumentError("d_model must be even and >= 4");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ArgumentError("d_model must be divisible by n_heads");
  }
  if (d_ff < 1 || t_pred < 1 || d_cond < 1 || n_steps < 1) {
    throw ArgumentError("d_ff, t_pred, d_cond and n_steps must be >= 1");
  }
}

Denoiser::Denoiser(DenoiserConfig config) : config_(config) { config_.validate(); }

void Denoiser::init_params(ad::ParamStore& store, Rng& rng) const {
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  add_linear(store, "den.in", 2, d, rng);
  add_linear(store, "den.time", d, d, rng);
  add_linear(store, "den.cond", static_cast<std::size_t>(config_.d_cond), d, rng);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "den.layer" + std::to_string(l);
    add_layernorm(store, p + ".ln1", d);
    add_linear(store, p + ".q", d, d, rng);
    add_linear(store, p + ".k", d, d, rng);
    add_linear(store, p + ".v", d, d, rng);
    add_linear(store, p + ".o", d, d, rng);
    add_layernorm(store, p + ".ln2", d);
    add_mlp(store, p + ".ff", d, static_cast<std::size_t>(config_.d_ff), d, rng);
  }
  add_layernorm(store, "den.ln_out", d);
  add_linear(store, "den.head1", d, d, rng);
  add_linear(store, "den.head2", d, d / 2, rng);
  add_linear(store, "den.head3", d / 2, 2, rng);
}

ad::Var Denoiser::forward(ad::Graph& g, ad::ParamStore& store, ad::Var noisy,
                          std::span<const int> steps, ad::Var cond) const {
  const std::size_t batch = steps.size();
  const std::size_t t = static_cast<std::size_t>(config_.t_pred);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  if (noisy.rows() != batch * t || noisy.cols() != 2) {
    throw ArgumentError("denoiser: noisy input must be " + std::to_string(batch * t) +
                        " x 2, got " + noisy.value().shape_string());
  }
  if (cond.rows() != batch || cond.cols() != static_cast<std::size_t>(config_.d_cond)) {
    throw ArgumentError("denoiser: condition must be " + std::to_string(batch) + " x " +
                        std::to_string(config_.d_cond));
  }

  ad::Tensor temb = ad::Tensor::zeros(batch, d);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto e = time_embed(steps[b], config_.n_steps, d, config_.lambda_max);
    std::copy(e.begin(), e.end(), temb.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  ad::Tensor pos = ad::Tensor::zeros(batch * t, d);
  for (std::size_t i = 0; i < t; ++i) {
    const auto e = sinusoid_embed(static_cast<double>(i), d, config_.lambda_max);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(e.begin(), e.end(),
                pos.data().begin() + static_cast<std::ptrdiff_t>((b * t + i) * d));
    }
  }

  ad::Var time_tok = linear(g, store, "den.time", g.constant(std::move(temb)));
  ad::Var cond_tok = linear(g, store, "den.cond", cond);
  ad::Var body = ad::add(linear(g, store, "den.in", noisy), g.constant(std::move(pos)));

  // Interleave into per-trajectory sequences [time, cond, body...].
  const std::size_t len = t + 2;
  std::vector<std::size_t> order(batch * len);
  for (std::size_t b = 0; b < batch; ++b) {
    order[b * len] = b;
    order[b * len + 1] = batch + b;
    for (std::size_t i = 0; i < t; ++i) order[b * len + 2 + i] = 2 * batch + b * t + i;
  }
  const ad::Var parts[] = {time_tok, cond_tok, body};
  ad::Var x = ad::gather_rows(ad::concat_rows(parts), std::move(order));

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "den.layer" + std::to_string(l);
    ad::Var h = layernorm(g, store, p + ".ln1", x);
    ad::Var a = ad::attention(linear(g, store, p + ".q", h), linear(g, store, p + ".k", h),
                              linear(g, store, p + ".v", h), batch,
                              static_cast<std::size_t>(config_.n_heads));
    x = ad::add(x, linear(g, store, p + ".o", a));
    h = layernorm(g, store, p + ".ln2", x);
    x = ad::add(x, mlp(g, store, p + ".ff", h));
  }
  x = layernorm(g, store, "den.ln_out", x);

  std::vector<std::size_t> traj_rows(batch * t);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < t; ++i) traj_rows[b * t + i] = b * len + 2 + i;
  }
  ad::Var y = ad::gather_rows(x, std::move(traj_rows));
  y = ad::gelu(linear(g, store, "den.head1", y));
  y = ad::gelu(linear(g, store, "den.head2", y));
  return linear(g, store, "den.head3", y);
}

EpsModel Denoiser::bind(ad::ParamStore& store) const {
  return [this, &store](ad::Graph& g, ad::Var noisy, std::span<const int> steps,
                        ad::Var cond) { return forward(g, store, noisy, steps, cond); };
}

}  // namespace mp2m
