#include "mp2m/diffusion.hpp"

#include <cmath>

#include "mp2m/errors.hpp"

namespace mp2m {

void Schedule::check_step(int s) const {
  if (s < 1 || s > steps()) {
    throw ArgumentError("diffusion step " + std::to_string(s) + " outside [1, " +
                        std::to_string(steps()) + "]");
  }
}

Schedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ArgumentError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) ||
      (steps > 1 && !(beta_start < beta_end)) || (steps == 1 && beta_start > beta_end)) {
    throw ArgumentError("schedule requires 0 < beta_start < beta_end < 1");
  }
  Schedule sch;
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double b = steps == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * i / (steps - 1);
    sch.betas.push_back(b);
    sch.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    sch.alpha_bars.push_back(prod);
  }
  return sch;
}

namespace {

void same_size(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw ArgumentError(std::string(op) + ": size mismatch " + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()));
  }
}

}  // namespace

std::vector<double> q_sample(std::span<const double> y0, int s,
                             std::span<const double> z, const Schedule& schedule) {
  schedule.check_step(s);
  same_size(y0, z, "q_sample");
  const double a = std::sqrt(schedule.alpha_bar(s));
  const double b = std::sqrt(1.0 - schedule.alpha_bar(s));
  std::vector<double> out(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) out[i] = a * y0[i] + b * z[i];
  return out;
}

std::vector<double> posterior_mean(std::span<const double> y0,
                                   std::span<const double> ys, int s,
                                   const Schedule& schedule) {
  schedule.check_step(s);
  same_size(y0, ys, "posterior_mean");
  const double ab = schedule.alpha_bar(s);
  const double ab_prev = schedule.alpha_bar(s - 1);
  const double c0 = std::sqrt(ab_prev) * schedule.beta(s) / (1.0 - ab);
  const double cs = std::sqrt(schedule.alpha(s)) * (1.0 - ab_prev) / (1.0 - ab);
  std::vector<double> out(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) out[i] = c0 * y0[i] + cs * ys[i];
  return out;
}

double posterior_var(int s, const Schedule& schedule) {
  schedule.check_step(s);
  return (1.0 - schedule.alpha_bar(s - 1)) / (1.0 - schedule.alpha_bar(s)) *
         schedule.beta(s);
}

std::vector<double> mu_theta(std::span<const double> ys, int s,
                             std::span<const double> eps_pred,
                             const Schedule& schedule) {
  schedule.check_step(s);
  same_size(ys, eps_pred, "mu_theta");
  const double c = schedule.beta(s) / std::sqrt(1.0 - schedule.alpha_bar(s));
  const double inv = 1.0 / std::sqrt(schedule.alpha(s));
  std::vector<double> out(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) out[i] = inv * (ys[i] - c * eps_pred[i]);
  return out;
}

std::vector<double> ddpm_step(std::span<const double> ys, int s,
                              std::span<const double> eps_pred,
                              std::span<const double> z, const Schedule& schedule) {
  auto out = mu_theta(ys, s, eps_pred, schedule);
  if (s > 1) {
    same_size(ys, z, "ddpm_step");
    const double sd = std::sqrt(schedule.beta(s));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sd * z[i];
  }
  return out;
}

ad::Var training_loss(ad::Graph& g, const ad::Tensor& y0, ad::Var cond,
                      const EpsModel& model, const Schedule& schedule, Rng& rng) {
  const std::size_t batch = cond.rows();
  if (batch == 0) throw ArgumentError("training_loss: empty batch");
  if (y0.cols() != 2 || y0.rows() % batch != 0) {
    throw ArgumentError("training_loss: y0 must be B*T x 2 with B = " +
                        std::to_string(batch));
  }
  const std::size_t per = y0.size() / batch;
  std::vector<int> steps(batch);
  ad::Tensor noise(y0.shape());
  ad::Tensor noisy(y0.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    steps[b] = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    for (std::size_t i = 0; i < per; ++i) noise[b * per + i] = rng.normal();
    const auto ys = q_sample(y0.data().subspan(b * per, per), steps[b],
                             noise.data().subspan(b * per, per), schedule);
    std::copy(ys.begin(), ys.end(), noisy.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  ad::Var eps = model(g, g.constant(std::move(noisy)), steps, cond);
  return ad::mse(eps, g.constant(std::move(noise)));
}

ad::Tensor sample_chains(const EpsModel& model, const ad::Tensor& conds,
                         std::size_t t_pred, const Schedule& schedule,
                         std::span<Rng> streams) {
  const std::size_t n = streams.size();
  if (conds.rows() != n) {
    throw ArgumentError("sample_chains: " + std::to_string(conds.rows()) +
                        " conditions for " + std::to_string(n) + " chains");
  }
  const std::size_t per = 2 * t_pred;
  ad::Tensor y = ad::Tensor::zeros(n * t_pred, 2);
  if (n == 0) return y;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < per; ++i) y[k * per + i] = streams[k].normal();
  }
  std::vector<double> z(per);
  for (int s = schedule.steps(); s >= 1; --s) {
    ad::Tensor eps;
    {
      ad::Graph g;
      const std::vector<int> steps(n, s);
      eps = model(g, g.constant(y), steps, g.constant(conds)).value();
    }
    if (eps.size() != y.size()) throw StateError("noise model returned a wrong shape");
    for (std::size_t k = 0; k < n; ++k) {
      if (s > 1) {
        for (auto& v : z) v = streams[k].normal();
      }
      const auto next = ddpm_step(y.data().subspan(k * per, per), s,
                                  eps.data().subspan(k * per, per), z, schedule);
      std::copy(next.begin(), next.end(), y.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
  }
  return y;
}

ad::Tensor sample(const EpsModel& model, const ad::Tensor& conds, std::size_t t_pred,
                  const Schedule& schedule, std::uint64_t seed, std::size_t n_samples) {
  std::vector<Rng> streams;
  streams.reserve(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) streams.push_back(Rng::stream(seed, {k}));
  return sample_chains(model, conds, t_pred, schedule, streams);
}

}  // namespace mp2m
