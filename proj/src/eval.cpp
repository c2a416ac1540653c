#include "mp2m/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mp2m/errors.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m {

namespace {

void check_shapes(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.size() != gt.size() || gt.empty()) {
    throw ArgumentError("displacement: prediction has " + std::to_string(pred.size()) +
                        " steps, ground truth " + std::to_string(gt.size()));
  }
}

// Neumaier-compensated mean.
double stable_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double sum = 0.0;
  double c = 0.0;
  for (double x : v) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return (sum + c) / static_cast<double>(v.size());
}

}  // namespace

double ade(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  check_shapes(pred, gt);
  std::vector<double> d(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) d[t] = norm(pred[t] - gt[t]);
  return stable_mean(d);
}

double fde(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  check_shapes(pred, gt);
  return norm(pred.back() - gt.back());
}

MinDisplacement best_of_k(std::span<const Trajectory> preds, std::span<const Vec2> gt) {
  if (preds.empty()) throw ArgumentError("best_of_k: K must be at least 1");
  MinDisplacement best{ade(preds[0], gt), fde(preds[0], gt)};
  for (std::size_t k = 1; k < preds.size(); ++k) {
    best.ade = std::min(best.ade, ade(preds[k], gt));
    best.fde = std::min(best.fde, fde(preds[k], gt));
  }
  return best;
}

// ---- prediction -----------------------------------------------------------

namespace {

// Samples [begin, end) -> out[begin..end).
void predict_chunk(TrajectoryModel& model, const MemoryBank& bank,
                   std::span<const Sample> samples, std::size_t begin, std::size_t end,
                   const PredictOptions& options, std::vector<std::vector<Trajectory>>& out) {
  const std::size_t k_count = options.k;
  const std::size_t t_pred = static_cast<std::size_t>(bank.t_pred);
  const std::size_t n = (end - begin) * k_count;
  std::vector<Trajectory> observed;
  std::vector<Vec2> targets;
  std::vector<NormTransform> transforms;
  std::vector<Rng> streams;
  observed.reserve(n);
  targets.reserve(n);
  streams.reserve(n);
  for (std::size_t i = begin; i < end; ++i) {
    auto [norm_sample, tf] = normalize(samples[i]);
    transforms.push_back(tf);
    const Address addr = address(bank, norm_sample.observed);
    for (std::size_t k = 0; k < k_count; ++k) {
      Rng rng = Rng::stream(options.seed, {i, k});
      // The first two normals always belong to the target draw so the
      // stream layout is the same with and without memory.
      const double zx = rng.normal();
      const double zy = rng.normal();
      Vec2 target = addr.target.mean;
      if (k > 0) {
        target.x += std::sqrt(std::max(addr.target.cov_diag.x, 0.0)) * zx;
        target.y += std::sqrt(std::max(addr.target.cov_diag.y, 0.0)) * zy;
      }
      observed.push_back(norm_sample.observed);
      targets.push_back(target);
      streams.push_back(std::move(rng));
    }
  }

  ad::Tensor conds;
  {
    ad::Graph g;
    conds = model.config().use_memory
                ? model.condition(g, observed, targets).value()
                : model.condition_without_memory(g, observed, nullptr).value();
  }
  const ad::Tensor y =
      sample_chains(model.eps_model(), conds, t_pred, model.schedule(), streams);

  for (std::size_t i = begin; i < end; ++i) {
    auto& cands = out[i];
    cands.resize(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::size_t row = ((i - begin) * k_count + k) * t_pred;
      Trajectory t(t_pred);
      for (std::size_t s = 0; s < t_pred; ++s) t[s] = {y(row + s, 0), y(row + s, 1)};
      cands[k] = transforms[i - begin].invert(t);
    }
  }
}

}  // namespace

std::vector<std::vector<Trajectory>> predict(const Checkpoint& ckpt, const MemoryBank& bank,
                                             std::span<const Sample> samples,
                                             const PredictOptions& options) {
  if (options.k == 0) throw ArgumentError("predict: K must be at least 1");
  if (options.workers < 1) throw ArgumentError("predict: workers must be at least 1");
  if (ckpt.bank_hash != bank_hash(bank)) {
    throw StateError("checkpoint was built for a different memory bank");
  }
  if (ckpt.t_obs != bank.t_obs || ckpt.t_pred != bank.t_pred) {
    throw StateError("checkpoint and bank disagree on window lengths");
  }
  for (const auto& s : samples) {
    validate(s);
    if (static_cast<int>(s.t_obs()) != bank.t_obs || static_cast<int>(s.t_pred()) != bank.t_pred) {
      throw StateError("sample windows do not match the bank's (" + std::to_string(bank.t_obs) +
                       ", " + std::to_string(bank.t_pred) + ")");
    }
  }

  std::vector<std::vector<Trajectory>> out(samples.size());
  if (ckpt.kind == "oracle") {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out[i].assign(options.k, samples[i].future);
    }
    return out;
  }

  auto model = load_model(ckpt);
  const std::size_t chunk = std::max<std::size_t>(options.chunk, 1);
  const std::size_t n_chunks = (samples.size() + chunk - 1) / chunk;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        predict_chunk(*model, bank, samples, c * chunk,
                      std::min(samples.size(), (c + 1) * chunk), options, out);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_chunks);
        return;
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(options.workers), std::max<std::size_t>(n_chunks, 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

// ---- reports --------------------------------------------------------------

EvalReport score(std::span<const Sample> samples,
                 std::span<const std::vector<Trajectory>> preds, std::size_t k) {
  if (samples.size() != preds.size()) {
    throw ArgumentError("score: " + std::to_string(preds.size()) + " prediction sets for " +
                        std::to_string(samples.size()) + " samples");
  }
  EvalReport r;
  r.n = samples.size();
  r.k = k;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::span<const Trajectory> cands = preds[i];
    if (k > 0) {
      if (cands.size() < k) throw ArgumentError("score: fewer than K candidates");
      cands = cands.first(k);
    }
    if (i == 0 && k == 0) r.k = cands.size();
    if (cands.size() != r.k) throw ArgumentError("score: samples have differing K");
    const auto m = best_of_k(cands, samples[i].future);
    r.sample_ade.push_back(m.ade);
    r.sample_fde.push_back(m.fde);
  }
  r.ade = stable_mean(r.sample_ade);
  r.fde = stable_mean(r.sample_fde);
  return r;
}

EvalReport evaluate(const Checkpoint& ckpt, const MemoryBank& bank,
                    std::span<const Sample> samples, const std::string& split,
                    const PredictOptions& options) {
  if (samples.empty()) throw StateError("no samples to evaluate in split '" + split + "'");
  const auto preds = predict(ckpt, bank, samples, options);
  EvalReport r = score(samples, preds, options.k);
  r.split = split;
  r.seed = options.seed;
  return r;
}

namespace {

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["K"] = r.k;
  j["ade"] = r.ade;
  j["fde"] = r.fde;
  j["n"] = r.n;
  j["seed"] = r.seed;
  return j;
}

}  // namespace

std::string report_json(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

std::string report_json(std::span<const EvalReport> reports) {
  nlohmann::ordered_json j;
  j["reports"] = nlohmann::ordered_json::array();
  std::vector<double> a, f;
  for (const auto& r : reports) {
    j["reports"].push_back(to_json(r));
    a.push_back(r.ade);
    f.push_back(r.fde);
  }
  j["mean_ade"] = stable_mean(a);
  j["mean_fde"] = stable_mean(f);
  return j.dump(2) + "\n";
}

// ---- prediction files -----------------------------------------------------

namespace {

void append_traj(std::string& out, const char* key, const Trajectory& t) {
  out += key;
  for (const auto& p : t) {
    out += ' ';
    out += format_g(p.x);
    out += ' ';
    out += format_g(p.y);
  }
  out += '\n';
}

Trajectory read_traj(RecordReader& r, std::string_view key, std::size_t n) {
  const auto f = r.expect_key(key, 2 * n);
  Trajectory t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = {parse_double(f[2 * i]), parse_double(f[2 * i + 1])};
  return t;
}

}  // namespace

void write_predictions(std::ostream& out, const PredictionSet& set) {
  if (set.samples.size() != set.candidates.size()) {
    throw ArgumentError("write_predictions: one candidate set per sample is required");
  }
  const std::size_t t_obs = set.samples.empty() ? 0 : set.samples[0].t_obs();
  const std::size_t t_pred = set.samples.empty() ? 0 : set.samples[0].t_pred();
  const std::size_t k = set.candidates.empty() ? 0 : set.candidates[0].size();
  std::string s = "mp2m-pred v1\n";
  s += "t_obs " + std::to_string(t_obs) + "\n";
  s += "t_pred " + std::to_string(t_pred) + "\n";
  s += "K " + std::to_string(k) + "\n";
  s += "samples " + std::to_string(set.samples.size()) + "\n";
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const Sample& smp = set.samples[i];
    if (smp.t_obs() != t_obs || smp.t_pred() != t_pred || set.candidates[i].size() != k) {
      throw ArgumentError("write_predictions: samples differ in shape");
    }
    s += "sample " + (smp.scene_id.empty() ? std::string("-") : smp.scene_id) + " " +
         std::to_string(smp.agent_id) + "\n";
    append_traj(s, "observed", smp.observed);
    append_traj(s, "future", smp.future);
    for (const auto& c : set.candidates[i]) {
      if (c.size() != t_pred) throw ArgumentError("write_predictions: candidate length");
      append_traj(s, "candidate", c);
    }
  }
  out << s;
}

PredictionSet read_predictions(std::istream& in) {
  RecordReader r(in, "predictions");
  r.expect_header("mp2m-pred", "v1");
  PredictionSet set;
  try {
    const auto t_obs = static_cast<std::size_t>(parse_int(r.expect_key("t_obs", 1)[0]));
    const auto t_pred = static_cast<std::size_t>(parse_int(r.expect_key("t_pred", 1)[0]));
    const auto k = static_cast<std::size_t>(parse_int(r.expect_key("K", 1)[0]));
    const auto n = static_cast<std::size_t>(parse_int(r.expect_key("samples", 1)[0]));
    for (std::size_t i = 0; i < n; ++i) {
      const auto head = r.expect_key("sample", 2);
      Sample s;
      s.scene_id = head[0] == "-" ? "" : std::string(head[0]);
      s.agent_id = parse_int(head[1]);
      s.observed = read_traj(r, "observed", t_obs);
      s.future = read_traj(r, "future", t_pred);
      std::vector<Trajectory> cands;
      for (std::size_t c = 0; c < k; ++c) cands.push_back(read_traj(r, "candidate", t_pred));
      set.samples.push_back(std::move(s));
      set.candidates.push_back(std::move(cands));
    }
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  std::vector<std::string_view> extra;
  if (r.next(extra)) r.fail("trailing data");
  return set;
}

void save_predictions(const PredictionSet& set, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_predictions(f, set);
  if (!f) throw DataError("write to '" + path + "' failed");
}

PredictionSet load_predictions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return read_predictions(f);
}

// ---- plots ----------------------------------------------------------------

std::string plot_svg(const Sample& sample, std::span<const Trajectory> preds) {
  constexpr double kSize = 480.0;
  constexpr double kPad = 24.0;
  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  auto grow = [&](const Trajectory& t) {
    for (const auto& p : t) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw ArgumentError("plot: non-finite coordinate");
      }
      lo_x = std::min(lo_x, p.x);
      lo_y = std::min(lo_y, p.y);
      hi_x = std::max(hi_x, p.x);
      hi_y = std::max(hi_y, p.y);
    }
  };
  grow(sample.observed);
  grow(sample.future);
  for (const auto& t : preds) grow(t);
  if (lo_x > hi_x) lo_x = hi_x = lo_y = hi_y = 0.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double scale = (kSize - 2 * kPad) / span;
  // SVG y grows downwards; flip so the plot reads like a map.
  auto px = [&](Vec2 p) {
    return Vec2{kPad + (p.x - lo_x) * scale, kSize - kPad - (p.y - lo_y) * scale};
  };
  auto points = [&](const Trajectory& t, std::string& out) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Vec2 q = px(t[i]);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", q.x, q.y);
      out += buf;
    }
  };

  std::string s =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" "
      "viewBox=\"0 0 480 480\">\n"
      "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  for (const auto& t : preds) {
    s += "<polyline class=\"pred\" fill=\"none\" stroke=\"#8ec5ff\" stroke-width=\"1.5\" "
         "stroke-dasharray=\"5,3\" points=\"";
    points(t, s);
    s += "\"/>\n";
  }
  // The future starts where the past ends so the two lines join up.
  Trajectory gt;
  if (!sample.observed.empty()) gt.push_back(sample.observed.back());
  gt.insert(gt.end(), sample.future.begin(), sample.future.end());
  s += "<polyline class=\"gt\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"";
  points(gt, s);
  s += "\"/>\n";
  s += "<polyline class=\"past\" fill=\"none\" stroke=\"#0b2e6b\" stroke-width=\"2\" points=\"";
  points(sample.observed, s);
  s += "\"/>\n";
  if (!sample.future.empty()) {
    const Vec2 c = px(sample.future.back());
    std::string star;
    for (int i = 0; i < 10; ++i) {
      const double r = i % 2 == 0 ? 7.0 : 3.0;
      const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", c.x + r * std::cos(a),
                    c.y + r * std::sin(a));
      star += buf;
    }
    s += "<polygon class=\"target\" fill=\"#d62728\" points=\"" + star + "\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

void emit_plot(const Sample& sample, std::span<const Trajectory> preds,
               const std::string& path) {
  const std::string svg = plot_svg(sample, preds);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << svg;
  if (!f) throw DataError("write to '" + path + "' failed");
}

}  // namespace mp2m
