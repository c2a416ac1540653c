#pragma once

// Model assembly (encoder + denoiser + schedule), Adam, the training loop and
// checkpoints.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mp2m/autodiff.hpp"
#include "mp2m/config.hpp"
#include "mp2m/data.hpp"
#include "mp2m/diffusion.hpp"
#include "mp2m/memory_bank.hpp"

namespace mp2m {

class TrajectoryModel {
 public:
  // `config` must already be synced to the data's window lengths.
  explicit TrajectoryModel(const ModelConfig& config);
  TrajectoryModel(const TrajectoryModel&) = delete;
  TrajectoryModel& operator=(const TrajectoryModel&) = delete;

  void init_params(Rng& rng);

  const ModelConfig& config() const { return config_; }
  const ConditionEncoder& encoder() const { return encoder_; }
  const Denoiser& denoiser() const { return denoiser_; }
  const Schedule& schedule() const { return schedule_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // Condition rows for normalized observed windows guided by `targets`.
  ad::Var condition(ad::Graph& g, std::span<const Trajectory> observed,
                    std::span<const Vec2> targets);
  // Same, but the target token comes from the endpoint head (no-memory
  // ablation). `endpoint` receives the head's B x 2 output.
  ad::Var condition_without_memory(ad::Graph& g, std::span<const Trajectory> observed,
                                   ad::Var* endpoint);
  EpsModel eps_model();

 private:
  ModelConfig config_;
  ConditionEncoder encoder_;
  Denoiser denoiser_;
  Schedule schedule_;
  ad::ParamStore params_;
};

struct AdamState {
  long long t = 0;
  std::map<std::string, ad::Tensor> m;
  std::map<std::string, ad::Tensor> v;
};

// One bias-corrected Adam update of w in place; t is the 1-based step.
void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamHyper& hyper, long long t);
// Increments state.t and applies adam_update to every parameter using its
// accumulated grad. Moment tensors are created on first use.
void adam_step(ad::ParamStore& params, AdamState& state, const AdamHyper& hyper);
// Rescales all grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(ad::ParamStore& params, double max_norm);

struct Checkpoint {
  std::string kind = "diffusion";  // "oracle" echoes the ground truth
  RunConfig config;
  int t_obs = 8;
  int t_pred = 12;
  std::uint64_t bank_hash = 0;
  long long step = 0;
  ad::ParamStore params;
  AdamState adam;
  std::string rng_state;
};

// `mp2m-ckpt v1` text file: kind, step, bank hash, window lengths, the full
// config, generator state, parameters and Adam moments. Doubles are hex.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Checkpoint whose predictions are the ground truth itself.
Checkpoint make_oracle_checkpoint(const MemoryBank& bank);

class Trainer {
 public:
  // Fresh parameters drawn from config.train.seed. Throws StateError when the
  // data windows do not match the bank.
  Trainer(std::span<const Sample> train_set, const MemoryBank& bank,
          const RunConfig& config);
  // Continues from a checkpoint produced by checkpoint().
  Trainer(std::span<const Sample> train_set, const MemoryBank& bank,
          const Checkpoint& resume);

  // One optimizer step; returns the noise-prediction loss of the minibatch.
  double step();
  std::vector<double> run(int n_steps);

  Checkpoint checkpoint() const;
  TrajectoryModel& model() { return *model_; }
  long long steps_done() const { return step_; }

 private:
  void prepare(std::span<const Sample> train_set, const MemoryBank& bank);

  RunConfig config_;
  std::uint64_t bank_hash_ = 0;
  std::unique_ptr<TrajectoryModel> model_;
  AdamState adam_;
  Rng rng_;
  long long step_ = 0;
  int t_obs_ = 0;
  int t_pred_ = 0;

  std::vector<Trajectory> observed_;  // normalized
  std::vector<double> futures_;       // normalized, n * t_pred * 2
  std::vector<Vec2> endpoints_;       // ground-truth final positions
  std::vector<Vec2> priors_;          // addressed target means
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

TrainResult train(std::span<const Sample> train_set, const MemoryBank& bank,
                  const RunConfig& config);

// Rebuilds a model from checkpoint parameters.
std::unique_ptr<TrajectoryModel> load_model(const Checkpoint& ckpt);

}  // namespace mp2m
