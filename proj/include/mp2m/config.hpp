#pragma once

// Flat `key = value` configuration shared by the command line, config files
// and checkpoint headers. Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mp2m/denoiser.hpp"
#include "mp2m/encoder.hpp"

namespace mp2m {

struct ModelConfig {
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  int diffusion_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 5e-2;
  bool use_memory = true;

  // Copies shared dimensions (t_obs, t_pred, d_cond, S, lambda) into the
  // sub-configs and validates them.
  void sync(int t_obs, int t_pred);
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  AdamHyper adam;
  int batch_size = 64;
  int steps = 2000;
  std::uint64_t seed = 0;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables clipping

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t bank_k = 32;

  // Throws ArgumentError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  // Every key with its current value. `exact` writes doubles as hex floats.
  std::vector<std::pair<std::string, std::string>> entries(bool exact = false) const;
  static const std::vector<std::string>& keys();
};

// Parses `key = value` lines with `#` comments.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

}  // namespace mp2m
