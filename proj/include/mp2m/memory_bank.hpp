#pragma once

// Motion-pattern priors memory: k-means over normalized full trajectories,
// per-cluster Gaussian statistics, and Gaussian NLL addressing.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mp2m/data.hpp"

namespace mp2m {

struct KMeansOptions {
  std::size_t k = 32;
  std::uint64_t seed = 0;
  int max_iter = 100;
  double tol = 1e-6;
};

struct KMeansResult {
  std::vector<std::size_t> assignments;      // one per point
  std::vector<std::vector<double>> centroids;
  std::vector<double> sse_history;           // within-cluster SSE per iteration
  int iterations = 0;
};

// Lloyd iterations with farthest-point seeding. The first seed is drawn from
// the seeded generator; ties in distance resolve to the lowest index. A
// cluster that empties is re-seeded with the point farthest from its current
// centroid; when every point sits on a centroid the cluster stays empty.
KMeansResult kmeans(std::span<const std::vector<double>> points,
                    const KMeansOptions& options);

double squared_distance(std::span<const double> a, std::span<const double> b);

struct MotionPattern {
  Trajectory mu;   // t_obs + t_pred rows
  Trajectory var;  // per-step, per-coordinate variance (m^2)
  std::size_t member_count = 0;
};

struct TargetDistribution {
  Vec2 mean;
  Vec2 cov_diag;
};

struct MemoryBank {
  std::vector<MotionPattern> patterns;
  std::vector<TargetDistribution> targets;
  int t_obs = 8;
  int t_pred = 12;
  double eps = 1e-6;

  std::size_t size() const { return patterns.size(); }
  bool operator==(const MemoryBank& other) const;
};

// Clusters the normalized full trajectories of `samples` (which must all be
// tagged Split::kTrain) and summarizes each non-empty cluster. The resulting
// bank may hold fewer than k patterns when clusters end up empty.
MemoryBank build_bank(std::span<const Sample> samples, std::size_t k,
                      std::uint64_t seed, double eps = 1e-6);

// Mean over all entries of 0.5 * (log(max(v, eps)) + (x - mu)^2 / max(v, eps)).
double nll_score(std::span<const Vec2> x, std::span<const Vec2> mu,
                 std::span<const Vec2> var, double eps);

struct Address {
  std::size_t pattern = 0;
  TargetDistribution target;
  double score = 0.0;
};

// Pattern whose observed prefix minimizes the NLL of `observed` (already
// normalized); ties go to the lowest index.
Address address(const MemoryBank& bank, std::span<const Vec2> observed);

// Text format, see docs in README:
//   mp2m-bank v1
//   K <k>
//   t_obs <n>
//   t_pred <n>
//   eps <hex>
//   then per pattern: `pattern <i> members <n>`, `mu <2T values>`,
//   `var <2T values>`, `target <mx> <my> <vx> <vy>`
void write_bank(std::ostream& out, const MemoryBank& bank);
MemoryBank read_bank(std::istream& in);
void save_bank(const MemoryBank& bank, const std::string& path);
MemoryBank load_bank(const std::string& path);

// Hash of the serialized bank; checkpoints record it to detect mismatches.
std::uint64_t bank_hash(const MemoryBank& bank);

}  // namespace mp2m
