#pragma once

// Parameter initialization and small composite layers shared by the encoder
// and the denoiser.

#include <string>

#include "mp2m/autodiff.hpp"
#include "mp2m/rng.hpp"

namespace mp2m {

enum class Activation { kGelu, kIdentity };

// Uniform(-a, a) with a = sqrt(6 / (rows + cols)).
ad::Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// `<prefix>.w` (in x out) and `<prefix>.b` (1 x out, zeros).
void add_linear(ad::ParamStore& store, const std::string& prefix, std::size_t in,
                std::size_t out, Rng& rng);
ad::Var linear(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
               ad::Var x);

// `<prefix>.gamma` (ones) and `<prefix>.beta` (zeros).
void add_layernorm(ad::ParamStore& store, const std::string& prefix, std::size_t n);
ad::Var layernorm(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
                  ad::Var x);

// Two linear layers `<prefix>.fc1`, `<prefix>.fc2` with an activation between.
void add_mlp(ad::ParamStore& store, const std::string& prefix, std::size_t in,
             std::size_t hidden, std::size_t out, Rng& rng);
ad::Var mlp(ad::Graph& g, ad::ParamStore& store, const std::string& prefix,
            ad::Var x, Activation act = Activation::kGelu);

}  // namespace mp2m
