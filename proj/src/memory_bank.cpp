#include "mp2m/memory_bank.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mp2m/errors.hpp"
#include "mp2m/rng.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

std::size_t nearest(std::span<const double> p,
                    const std::vector<std::vector<double>>& centroids,
                    double* dist_out) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans(std::span<const std::vector<double>> points,
                    const KMeansOptions& options) {
  const std::size_t n = points.size();
  const std::size_t k = options.k;
  if (k == 0) throw ArgumentError("k must be >= 1");
  if (k > n) {
    throw ArgumentError("k (" + std::to_string(k) +
                        ") exceeds the number of trajectories (" +
                        std::to_string(n) + ")");
  }
  const std::size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ArgumentError("trajectories differ in length");
  }

  KMeansResult res;
  Rng rng(options.seed);
  const auto first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(n) - 1));
  res.centroids.push_back(points[first]);
  std::vector<double> min_d(n);
  for (std::size_t i = 0; i < n; ++i) min_d[i] = squared_distance(points[i], points[first]);
  while (res.centroids.size() < k) {
    std::size_t far = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (min_d[i] > min_d[far]) far = i;
    }
    res.centroids.push_back(points[far]);
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(points[i], points[far]));
    }
  }

  res.assignments.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(k);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      res.assignments[i] = nearest(points[i], res.centroids, &dist[i]);
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] < 2 || dist[i] <= 0.0) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) continue;
      --counts[res.assignments[far]];
      res.assignments[far] = c;
      dist[far] = 0.0;
      counts[c] = 1;
      res.centroids[c] = points[far];
    }

    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = next[res.assignments[i]];
      for (std::size_t d = 0; d < dim; ++d) acc[d] += points[i][d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        next[c] = res.centroids[c];
        continue;
      }
      for (auto& v : next[c]) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(squared_distance(next[c], res.centroids[c])));
    }
    res.centroids = std::move(next);

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sse += squared_distance(points[i], res.centroids[res.assignments[i]]);
    }
    res.sse_history.push_back(sse);
    res.iterations = iter + 1;
    if (shift < options.tol) break;
  }
  return res;
}

bool MemoryBank::operator==(const MemoryBank& o) const {
  if (t_obs != o.t_obs || t_pred != o.t_pred || eps != o.eps ||
      patterns.size() != o.patterns.size() || targets.size() != o.targets.size()) {
    return false;
  }
  for (std::size_t k = 0; k < patterns.size(); ++k) {
    const auto& a = patterns[k];
    const auto& b = o.patterns[k];
    if (a.mu != b.mu || a.var != b.var || a.member_count != b.member_count) return false;
    if (targets[k].mean != o.targets[k].mean ||
        targets[k].cov_diag != o.targets[k].cov_diag) {
      return false;
    }
  }
  return true;
}

MemoryBank build_bank(std::span<const Sample> samples, std::size_t k,
                      std::uint64_t seed, double eps) {
  if (samples.empty()) throw ArgumentError("cannot build a bank from no samples");
  if (!(eps > 0.0)) throw ArgumentError("eps must be positive");
  const std::size_t t_obs = samples[0].t_obs();
  const std::size_t t_pred = samples[0].t_pred();
  std::vector<std::vector<double>> points;
  points.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.split != Split::kTrain) {
      throw ArgumentError("memory banks are built from training samples only (agent " +
                          std::to_string(s.agent_id) + " is tagged '" +
                          std::string(to_string(s.split)) + "')");
    }
    if (s.t_obs() != t_obs || s.t_pred() != t_pred) {
      throw ArgumentError("samples differ in window lengths");
    }
    points.push_back(normalize(s).first.flatten());
  }
  KMeansOptions opts;
  opts.k = k;
  opts.seed = seed;
  const auto km = kmeans(points, opts);

  const std::size_t len = t_obs + t_pred;
  MemoryBank bank;
  bank.t_obs = static_cast<int>(t_obs);
  bank.t_pred = static_cast<int>(t_pred);
  bank.eps = eps;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (km.assignments[i] == c) members.push_back(i);
    }
    if (members.empty()) continue;
    const double m = static_cast<double>(members.size());
    const double dof = members.size() > 1 ? m - 1.0 : 1.0;

    MotionPattern pat;
    pat.member_count = members.size();
    pat.mu.assign(len, Vec2{});
    pat.var.assign(len, Vec2{});
    for (auto i : members) {
      for (std::size_t t = 0; t < len; ++t) {
        pat.mu[t].x += points[i][2 * t];
        pat.mu[t].y += points[i][2 * t + 1];
      }
    }
    for (auto& v : pat.mu) v = v * (1.0 / m);
    for (auto i : members) {
      for (std::size_t t = 0; t < len; ++t) {
        const double dx = points[i][2 * t] - pat.mu[t].x;
        const double dy = points[i][2 * t + 1] - pat.mu[t].y;
        pat.var[t].x += dx * dx;
        pat.var[t].y += dy * dy;
      }
    }
    for (auto& v : pat.var) v = v * (1.0 / dof);
    if (members.size() == 1) {
      for (auto& v : pat.var) v = Vec2{};
    }

    TargetDistribution tgt;
    tgt.mean = pat.mu[len - 1];
    tgt.cov_diag = pat.var[len - 1];
    bank.patterns.push_back(std::move(pat));
    bank.targets.push_back(tgt);
  }
  return bank;
}

double nll_score(std::span<const Vec2> x, std::span<const Vec2> mu,
                 std::span<const Vec2> var, double eps) {
  if (x.size() != mu.size() || x.size() != var.size()) {
    throw ArgumentError("nll_score: shape mismatch (" + std::to_string(x.size()) +
                        ", " + std::to_string(mu.size()) + ", " +
                        std::to_string(var.size()) + ")");
  }
  if (!(eps > 0.0)) throw ArgumentError("nll_score: eps must be positive");
  if (x.empty()) throw ArgumentError("nll_score: empty window");
  double total = 0.0;
  auto term = [eps](double xv, double m, double v) {
    const double vv = std::max(v, eps);
    const double r = xv - m;
    return 0.5 * (std::log(vv) + r * r / vv);
  };
  for (std::size_t t = 0; t < x.size(); ++t) {
    total += term(x[t].x, mu[t].x, var[t].x);
    total += term(x[t].y, mu[t].y, var[t].y);
  }
  return total / static_cast<double>(2 * x.size());
}

Address address(const MemoryBank& bank, std::span<const Vec2> observed) {
  if (bank.patterns.empty()) throw StateError("address: memory bank is empty");
  if (observed.size() != static_cast<std::size_t>(bank.t_obs)) {
    throw ArgumentError("address: observed window has " +
                        std::to_string(observed.size()) + " points, bank expects " +
                        std::to_string(bank.t_obs));
  }
  Address best;
  best.score = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < bank.patterns.size(); ++k) {
    const auto& p = bank.patterns[k];
    const double s = nll_score(observed, std::span(p.mu).first(observed.size()),
                               std::span(p.var).first(observed.size()), bank.eps);
    if (s < best.score) {
      best.score = s;
      best.pattern = k;
    }
  }
  best.target = bank.targets[best.pattern];
  return best;
}

namespace {

std::vector<double> flat(const Trajectory& t) {
  std::vector<double> out;
  out.reserve(2 * t.size());
  for (const auto& p : t) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

Trajectory unflat(const std::vector<double>& v) {
  Trajectory t;
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) t.push_back({v[i], v[i + 1]});
  return t;
}

}  // namespace

void write_bank(std::ostream& out, const MemoryBank& bank) {
  std::string s = "mp2m-bank v1\n";
  s += "K " + std::to_string(bank.size()) + "\n";
  s += "t_obs " + std::to_string(bank.t_obs) + "\n";
  s += "t_pred " + std::to_string(bank.t_pred) + "\n";
  s += "eps " + format_hex(bank.eps) + "\n";
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const auto& p = bank.patterns[k];
    const auto& t = bank.targets[k];
    s += "pattern " + std::to_string(k) + " members " +
         std::to_string(p.member_count) + "\n";
    s += "mu ";
    append_doubles(s, flat(p.mu));
    s += "\nvar ";
    append_doubles(s, flat(p.var));
    s += "\ntarget ";
    const double tv[4] = {t.mean.x, t.mean.y, t.cov_diag.x, t.cov_diag.y};
    append_doubles(s, tv);
    s += "\n";
  }
  out << s;
}

MemoryBank read_bank(std::istream& in) {
  RecordReader r(in, "bank");
  r.expect_header("mp2m-bank", "v1");
  MemoryBank bank;
  try {
    const long long k = parse_int(r.expect_key("K", 1)[0]);
    bank.t_obs = static_cast<int>(parse_int(r.expect_key("t_obs", 1)[0]));
    bank.t_pred = static_cast<int>(parse_int(r.expect_key("t_pred", 1)[0]));
    bank.eps = parse_double(r.expect_key("eps", 1)[0]);
    if (k < 1) r.fail("K must be >= 1");
    if (bank.t_obs < 1 || bank.t_pred < 1) r.fail("window lengths must be >= 1");
    if (!(bank.eps > 0.0)) r.fail("eps must be positive");
    const std::size_t width = 2 * static_cast<std::size_t>(bank.t_obs + bank.t_pred);
    for (long long i = 0; i < k; ++i) {
      auto head = r.expect_line();
      if (head.size() != 4 || head[0] != "pattern" || head[2] != "members" ||
          parse_int(head[1]) != i) {
        r.fail("expected 'pattern " + std::to_string(i) + " members <n>'");
      }
      MotionPattern p;
      const long long members = parse_int(head[3]);
      if (members < 1) r.fail("member count must be >= 1");
      p.member_count = static_cast<std::size_t>(members);
      p.mu = unflat(parse_doubles(r.expect_key("mu", width)));
      p.var = unflat(parse_doubles(r.expect_key("var", width)));
      for (const auto& v : p.var) {
        if (!(v.x >= 0.0) || !(v.y >= 0.0)) r.fail("negative variance");
      }
      auto tv = parse_doubles(r.expect_key("target", 4));
      if (!(tv[2] >= 0.0) || !(tv[3] >= 0.0)) r.fail("negative target variance");
      bank.patterns.push_back(std::move(p));
      bank.targets.push_back({{tv[0], tv[1]}, {tv[2], tv[3]}});
    }
    std::vector<std::string_view> extra;
    if (r.next(extra)) r.fail("trailing data after the last pattern");
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  return bank;
}

void save_bank(const MemoryBank& bank, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_bank(f, bank);
  if (!f) throw DataError("write to '" + path + "' failed");
}

MemoryBank load_bank(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return read_bank(f);
}

std::uint64_t bank_hash(const MemoryBank& bank) {
  std::ostringstream os;
  write_bank(os, bank);
  return fnv1a(os.str());
}

}  // namespace mp2m
