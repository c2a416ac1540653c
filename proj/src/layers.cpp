#include "mp2m/layers.hpp"

#include <cmath>

namespace mp2m {

ad::Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Tensor t = ad::Tensor::zeros(rows, cols);
  for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * a;
  return t;
}

void add_linear(ad::ParamStore& store, const std::string& prefix, std::size_t in,
                std::size_t out, Rng& rng) {
  store.add(prefix + ".w", xavier_uniform(in, out, rng));
  store.add(prefix + ".b", ad::Tensor::zeros(1, out));
}

ad::Var linear(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
               ad::Var x) {
  return ad::affine(x, g.param(store, prefix + ".w"), g.param(store, prefix + ".b"));
}

void add_layernorm(ad::ParamStore& store, const std::string& prefix, std::size_t n) {
  store.add(prefix + ".gamma", ad::Tensor::filled(1, n, 1.0));
  store.add(prefix + ".beta", ad::Tensor::zeros(1, n));
}

ad::Var layernorm(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
                  ad::Var x) {
  return ad::layernorm(x, g.param(store, prefix + ".gamma"),
                       g.param(store, prefix + ".beta"));
}

void add_mlp(ad::ParamStore& store, const std::string& prefix, std::size_t in,
             std::size_t hidden, std::size_t out, Rng& rng) {
  add_linear(store, prefix + ".fc1", in, hidden, rng);
  add_linear(store, prefix + ".fc2", hidden, out, rng);
}

ad::Var mlp(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
            ad::Var x, Activation act) {
  ad::Var h = linear(g, store, prefix + ".fc1", x);
  if (act == Activation::kGelu) h = ad::gelu(h);
  return linear(g, store, prefix + ".fc2", h);
}

}  // namespace mp2m
