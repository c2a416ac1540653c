#include <doctest.h>

#include <cmath>

#include "mp2m/denoiser.hpp"
#include "mp2m/diffusion.hpp"
#include "mp2m/errors.hpp"

using namespace mp2m;
using namespace mp2m::ad;

namespace {

std::vector<double> normals(Rng& rng, std::size_t n, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = s * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("single-step schedule") {
  const auto s = make_schedule(1);
  REQUIRE(s.steps() == 1);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("two-step schedule") {
  const auto s = make_schedule(2, 0.1, 0.3);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.63).epsilon(1e-15));
}

TEST_CASE("default schedule invariants and alpha_bar oracle") {
  const auto s = make_schedule();
  REQUIRE(s.steps() == 100);
  long double prod = 1.0L;
  for (int i = 1; i <= 100; ++i) {
    const long double beta = 1e-4L + (5e-2L - 1e-4L) * (i - 1) / 99.0L;
    CHECK(s.beta(i) == doctest::Approx(double(beta)).epsilon(1e-14));
    prod *= 1.0L - beta;
    CHECK(s.alpha_bar(i) == doctest::Approx(double(prod)).epsilon(1e-12));
    CHECK((s.beta(i) > 0 && s.beta(i) < 1));
    if (i > 1) {
      CHECK(s.beta(i) > s.beta(i - 1));
      CHECK(s.alpha_bar(i) < s.alpha_bar(i - 1));
    }
  }
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(100) == doctest::Approx(5e-2).epsilon(1e-15));
  CHECK(std::abs(s.alpha_bar(100) - double(prod)) / double(prod) < 0.05);
  CHECK(double(prod) == doctest::Approx(0.078).epsilon(0.05));
}

TEST_CASE("schedule argument checks") {
  CHECK_THROWS_AS(make_schedule(0), ArgumentError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.1), ArgumentError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.1), ArgumentError);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ArgumentError);
  const auto s = make_schedule();
  const std::vector<double> y(4, 1.0);
  CHECK_THROWS_AS(q_sample(y, 0, y, s), ArgumentError);
  CHECK_THROWS_AS(q_sample(y, 101, y, s), ArgumentError);
  CHECK_THROWS_AS(posterior_mean(y, y, 0, s), ArgumentError);
}

TEST_CASE("q_sample with zero and antithetic noise") {
  const auto sch = make_schedule();
  Rng rng(1);
  const auto y0 = normals(rng, 24);
  const auto z = normals(rng, 24);
  std::vector<double> neg(z);
  for (auto& v : neg) v = -v;
  const std::vector<double> zero(24, 0.0);
  for (int s : {1, 37, 100}) {
    const auto a = q_sample(y0, s, zero, sch);
    const auto p = q_sample(y0, s, z, sch);
    const auto m = q_sample(y0, s, neg, sch);
    for (std::size_t i = 0; i < 24; ++i) {
      CHECK(a[i] == std::sqrt(sch.alpha_bar(s)) * y0[i]);
      CHECK(0.5 * (p[i] + m[i]) == doctest::Approx(a[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("q_sample variance at the last step") {
  const auto sch = make_schedule();
  Rng rng(2);
  const std::vector<double> y0{0.8};
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> z{rng.normal()};
    const double y = q_sample(y0, 100, z, sch)[0];
    sum += y;
    sq += y * y;
  }
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(var - (1 - sch.alpha_bar(100))) / (1 - sch.alpha_bar(100)) < 0.03);
}

TEST_CASE("q_sample perturbs less as beta_start shrinks") {
  Rng rng(3);
  const auto y0 = normals(rng, 10);
  const auto z = normals(rng, 10);
  double prev = 1e300;
  for (double b0 : {1e-2, 1e-3, 1e-4}) {
    const auto ys = q_sample(y0, 1, z, make_schedule(100, b0, 5e-2));
    double d = 0;
    for (int i = 0; i < 10; ++i) d += (ys[i] - y0[i]) * (ys[i] - y0[i]);
    CHECK(std::sqrt(d) < prev);
    prev = std::sqrt(d);
  }
}

TEST_CASE("posterior mean collapses for noise-free Ys and at s = 1") {
  const auto sch = make_schedule();
  Rng rng(4);
  const auto y0 = normals(rng, 6);
  const std::vector<double> zero(6, 0.0);
  for (int s : {2, 50, 100}) {
    const auto ys = q_sample(y0, s, zero, sch);
    const auto mu = posterior_mean(y0, ys, s, sch);
    for (int i = 0; i < 6; ++i) CHECK(mu[i] == doctest::Approx(std::sqrt(sch.alpha_bar(s - 1)) * y0[i]).epsilon(1e-12));
  }
  const auto ys = q_sample(y0, 1, normals(rng, 6), sch);
  const auto mu = posterior_mean(y0, ys, 1, sch);
  for (int i = 0; i < 6; ++i) CHECK(mu[i] == doctest::Approx(y0[i]).epsilon(1e-12));
}

TEST_CASE("posterior variance formula") {
  const auto sch = make_schedule();
  for (int s : {2, 10, 100}) {
    const double ref = (1 - sch.alpha_bar(s - 1)) / (1 - sch.alpha_bar(s)) * sch.beta(s);
    CHECK(posterior_var(s, sch) == doctest::Approx(ref).epsilon(1e-15));
  }
  CHECK(posterior_var(1, sch) == 0.0);
}

TEST_CASE("posterior mean equals the eps-parameterized mean under true noise") {
  const auto sch = make_schedule();
  Rng rng(5);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto y0 = normals(rng, 24, 3.0);
    const auto z = normals(rng, 24);
    const int s = static_cast<int>(rng.uniform_int(1, 100));
    const auto ys = q_sample(y0, s, z, sch);
    const auto a = posterior_mean(y0, ys, s, sch);
    const auto b = mu_theta(ys, s, z, sch);
    for (int i = 0; i < 24; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("mu_theta and ddpm_step edge cases") {
  const auto sch = make_schedule();
  Rng rng(6);
  const auto ys = normals(rng, 4);
  const std::vector<double> zero(4, 0.0);
  const auto m = mu_theta(ys, 30, zero, sch);
  const auto st = ddpm_step(ys, 30, zero, zero, sch);
  for (int i = 0; i < 4; ++i) {
    CHECK(m[i] == doctest::Approx(ys[i] / std::sqrt(sch.alpha(30))).epsilon(1e-15));
    CHECK(st[i] == m[i]);
  }
  const auto tiny = make_schedule(10, 1e-12, 2e-12);
  const auto eps = normals(rng, 4);
  const auto t = mu_theta(ys, 5, eps, tiny);
  for (int i = 0; i < 4; ++i) CHECK(t[i] == doctest::Approx(ys[i]).epsilon(1e-5));
  // no injected noise at the final step
  const auto big = normals(rng, 4, 100.0);
  CHECK(ddpm_step(ys, 1, eps, big, sch) == ddpm_step(ys, 1, eps, zero, sch));
  CHECK(ddpm_step(ys, 2, eps, big, sch) != ddpm_step(ys, 2, eps, zero, sch));
}

namespace {

// Noise predictor that knows the clean sample: eps = (ys - sqrt(ab) y0) / sqrt(1 - ab).
EpsModel perfect(const Schedule& sch, std::vector<double> y0, double offset = 0.0) {
  return [&sch, y0, offset](Graph& g, Var noisy, std::span<const int> steps, Var) {
    Tensor out = noisy.value();
    const std::size_t per = y0.size();
    for (std::size_t b = 0; b < steps.size(); ++b) {
      const double ab = sch.alpha_bar(steps[b]);
      for (std::size_t i = 0; i < per; ++i) {
        const double ys = out[b * per + i];
        out[b * per + i] = (ys - std::sqrt(ab) * y0[i]) / std::sqrt(1 - ab) + offset;
      }
    }
    return g.constant(out);
  };
}

}  // namespace

TEST_CASE("perfect noise prediction concentrates chains near the clean sample") {
  const auto sch = make_schedule();
  const std::vector<double> y0{1.3, -0.4};
  const std::size_t n = 1000;
  std::vector<Rng> streams;
  for (std::size_t k = 0; k < n; ++k) streams.push_back(Rng::stream(17, {k}));
  const Tensor y = sample_chains(perfect(sch, y0), Tensor::zeros(n, 1), 1, sch, streams);
  double err = 0;
  for (std::size_t k = 0; k < n; ++k) err += (std::abs(y(k, 0) - y0[0]) + std::abs(y(k, 1) - y0[1])) / 2;
  CHECK(err / n < 0.1);
}

TEST_CASE("training loss of stub models") {
  const auto sch = make_schedule();
  Rng rng(7);
  const std::size_t b = 5, t = 3;
  Tensor y0 = Tensor::zeros(b * t, 2);
  for (auto& v : y0.values()) v = rng.normal();
  // The stub sees all b trajectories; pass the clean data per trajectory by
  // treating every trajectory as the same shape and using row offsets.
  auto stub = [&](double c) -> EpsModel {
    return [&, c](Graph& g, Var noisy, std::span<const int> steps, Var) {
      Tensor out = noisy.value();
      for (std::size_t j = 0; j < steps.size(); ++j) {
        const double ab = sch.alpha_bar(steps[j]);
        for (std::size_t i = 0; i < 2 * t; ++i) {
          const std::size_t at = j * 2 * t + i;
          out[at] = (out[at] - std::sqrt(ab) * y0[at]) / std::sqrt(1 - ab) + c;
        }
      }
      return g.constant(out);
    };
  };
  Graph g;
  const Var cond = g.constant(Tensor::zeros(b, 1));
  Rng r1(8);
  CHECK(training_loss(g, y0, cond, stub(0.0), sch, r1).value()[0] < 1e-20);
  Rng r2(8);
  CHECK(training_loss(g, y0, cond, stub(0.5), sch, r2).value()[0] == doctest::Approx(0.25).epsilon(1e-9));
  Rng r3(8);
  CHECK_THROWS_AS(training_loss(g, Tensor::zeros(0, 2), g.constant(Tensor::zeros(0, 1)), stub(0), sch, r3),
                  ArgumentError);
}

namespace {

struct TinyDenoiser {
  DenoiserConfig cfg;
  Denoiser den;
  ParamStore params;
  Schedule sch;
  TinyDenoiser() : cfg(make()), den(cfg), sch(make_schedule(cfg.n_steps)) {
    Rng rng(9);
    den.init_params(params, rng);
  }
  static DenoiserConfig make() {
    DenoiserConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 16;
    c.t_pred = 4;
    c.d_cond = 3;
    c.n_steps = 20;
    return c;
  }
};

}  // namespace

TEST_CASE("training loss gradient through a tiny denoiser") {
  TinyDenoiser m;
  Rng data(10);
  Tensor y0 = Tensor::zeros(2 * 4, 2);
  for (auto& v : y0.values()) v = data.normal();
  Tensor cond = Tensor::zeros(2, 3);
  for (auto& v : cond.values()) v = data.normal();
  const EpsModel eps = m.den.bind(m.params);
  const auto r = grad_check([&](Graph& g) {
    Rng rng(11);  // same draws on every call
    return training_loss(g, y0, g.constant(cond), eps, m.sch, rng);
  }, m.params);
  INFO("max rel error " << r.max_rel_error);
  CHECK(r.passed);
}

TEST_CASE("sampling is deterministic, prefix-stable and finite") {
  TinyDenoiser m;
  const EpsModel eps = m.den.bind(m.params);
  Tensor conds = Tensor::zeros(20, 3);
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t j = 0; j < 3; ++j) conds(k, j) = 0.1 * double(j + 1);
  const Tensor a = sample(eps, conds, 4, m.sch, 5, 20);
  const Tensor b = sample(eps, conds, 4, m.sch, 5, 20);
  CHECK(a == b);
  CHECK(a.shape() == std::vector<std::size_t>{80, 2});
  CHECK(a.all_finite());
  Tensor one = Tensor::zeros(1, 3);
  for (std::size_t j = 0; j < 3; ++j) one(0, j) = conds(0, j);
  const Tensor first = sample(eps, one, 4, m.sch, 5, 1);
  for (std::size_t i = 0; i < 8; ++i) CHECK(first[i] == a[i]);
  CHECK(sample(eps, conds, 4, m.sch, 6, 20) != a);
}

TEST_CASE("a thousand seeded chains stay finite") {
  TinyDenoiser m;
  const EpsModel eps = m.den.bind(m.params);
  Tensor conds = Tensor::zeros(1000, 3);
  Rng rng(12);
  for (auto& v : conds.values()) v = rng.normal();
  CHECK(sample(eps, conds, 4, m.sch, 99, 1000).all_finite());
}
