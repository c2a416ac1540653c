#pragma once

// Displacement metrics, batched prediction, reports and SVG plots.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mp2m/data.hpp"
#include "mp2m/memory_bank.hpp"
#include "mp2m/trainer.hpp"

namespace mp2m {

// Mean L2 distance over steps; ArgumentError on shape mismatch.
double ade(std::span<const Vec2> pred, std::span<const Vec2> gt);
// L2 distance at the last step.
double fde(std::span<const Vec2> pred, std::span<const Vec2> gt);

struct MinDisplacement {
  double ade = 0.0;
  double fde = 0.0;
};
// Independent minima of ade and fde over the candidates; ArgumentError if
// there are none.
MinDisplacement best_of_k(std::span<const Trajectory> preds, std::span<const Vec2> gt);

struct PredictOptions {
  std::size_t k = 20;
  std::uint64_t seed = 0;
  int workers = 1;
  std::size_t chunk = 8;  // samples per batched sampling call
};

// K candidate futures per sample, in world coordinates. Candidate k of sample
// i depends only on (seed, i, k), so outputs do not depend on `workers` or
// `chunk`, and the first K' candidates of a K run equal a K' run.
// Throws StateError when the checkpoint was built for another bank.
std::vector<std::vector<Trajectory>> predict(const Checkpoint& ckpt, const MemoryBank& bank,
                                             std::span<const Sample> samples,
                                             const PredictOptions& options);

struct EvalReport {
  std::string split;
  std::size_t k = 0;
  double ade = 0.0;
  double fde = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<double> sample_ade;
  std::vector<double> sample_fde;
};

// Best-of-K scores of the first k candidates per sample (all when k == 0).
EvalReport score(std::span<const Sample> samples,
                 std::span<const std::vector<Trajectory>> preds, std::size_t k = 0);

EvalReport evaluate(const Checkpoint& ckpt, const MemoryBank& bank,
                    std::span<const Sample> samples, const std::string& split,
                    const PredictOptions& options);

// {"split", "K", "ade", "fde", "n", "seed"}
std::string report_json(const EvalReport& report);
std::string report_json(std::span<const EvalReport> reports);

// Prediction file: `mp2m-pred v1`, `t_obs`, `t_pred`, `K`, `samples N`, then
// per sample `sample <scene> <agent>`, `observed ...`, `future ...` and K
// `candidate ...` lines, all values in %.17g.
struct PredictionSet {
  std::vector<Sample> samples;
  std::vector<std::vector<Trajectory>> candidates;
};
void write_predictions(std::ostream& out, const PredictionSet& set);
PredictionSet read_predictions(std::istream& in);
void save_predictions(const PredictionSet& set, const std::string& path);
PredictionSet load_predictions(const std::string& path);

// One SVG polyline per trajectory: past in dark blue, ground truth in red,
// candidates dashed light blue. A star marks the true endpoint.
std::string plot_svg(const Sample& sample, std::span<const Trajectory> preds);
void emit_plot(const Sample& sample, std::span<const Trajectory> preds,
               const std::string& path);

}  // namespace mp2m
