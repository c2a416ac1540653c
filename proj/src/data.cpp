#include "mp2m/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mp2m/errors.hpp"
#include "mp2m/rng.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m {

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kTest:
      return "test";
    case Split::kUnspecified:
      break;
  }
  return "none";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "none") return Split::kUnspecified;
  throw ArgumentError("unknown split '" + std::string(s) + "'");
}

std::vector<double> Sample::flatten() const {
  std::vector<double> out;
  out.reserve(2 * (observed.size() + future.size()));
  for (const auto& p : observed) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  for (const auto& p : future) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

void validate(const Sample& s) {
  if (s.observed.empty() || s.future.empty()) {
    throw DataError("sample has an empty observed or future window");
  }
  for (const auto* traj : {&s.observed, &s.future}) {
    for (const auto& p : *traj) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw DataError("sample of agent " + std::to_string(s.agent_id) +
                        " has non-finite coordinates");
      }
    }
  }
}

ColumnMap ColumnMap::parse(std::string_view spec) {
  std::vector<int> idx;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    auto tok = spec.substr(start, end - start);
    try {
      long long v = parse_int(tok);
      if (v < 0) throw ArgumentError("negative column index");
      idx.push_back(static_cast<int>(v));
    } catch (const FormatError&) {
      throw ArgumentError("bad column map '" + std::string(spec) + "'");
    }
    start = end + 1;
  }
  if (idx.size() != 4) {
    throw ArgumentError("column map needs 4 indices (frame,agent,x,y)");
  }
  ColumnMap m;
  m.frame = idx[0];
  m.agent = idx[1];
  m.x = idx[2];
  m.y = idx[3];
  return m;
}

std::vector<RawTrack> parse_track_file(std::string_view text,
                                       const ColumnMap& columns) {
  const int needed =
      std::max({columns.frame, columns.agent, columns.x, columns.y}) + 1;
  std::map<long long, RawTrack> by_agent;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    auto fields = split_ws(line);
    if (fields.empty() || fields[0].starts_with('#')) continue;
    if (static_cast<int>(fields.size()) < needed) {
      throw ParseError(line_no, "expected at least " + std::to_string(needed) +
                                    " columns, found " +
                                    std::to_string(fields.size()));
    }
    TrackPoint pt;
    long long agent = 0;
    try {
      // Some exports write integral ids as floats ("780.0").
      double f = parse_double(fields[columns.frame]);
      double a = parse_double(fields[columns.agent]);
      if (f != std::floor(f) || a != std::floor(a)) {
        throw FormatError("frame and agent ids must be integral");
      }
      pt.frame = static_cast<long long>(f);
      agent = static_cast<long long>(a);
      pt.x = parse_double(fields[columns.x]) * columns.unit_scale;
      pt.y = parse_double(fields[columns.y]) * columns.unit_scale;
    } catch (const FormatError& e) {
      throw ParseError(line_no, e.what());
    }
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y)) {
      throw ParseError(line_no, "non-finite coordinate");
    }
    auto& track = by_agent[agent];
    track.agent_id = agent;
    if (!track.points.empty() && track.points.back().frame >= pt.frame) {
      throw DataError("line " + std::to_string(line_no) + ": frame " +
                      std::to_string(pt.frame) + " of agent " +
                      std::to_string(agent) +
                      " does not increase (previous frame " +
                      std::to_string(track.points.back().frame) + ")");
    }
    track.points.push_back(pt);
  }
  std::vector<RawTrack> out;
  out.reserve(by_agent.size());
  for (auto& [id, track] : by_agent) out.push_back(std::move(track));
  return out;
}

long long infer_frame_step(std::span<const RawTrack> tracks) {
  std::map<long long, std::size_t> counts;
  for (const auto& t : tracks) {
    for (std::size_t i = 1; i < t.points.size(); ++i) {
      ++counts[t.points[i].frame - t.points[i - 1].frame];
    }
  }
  long long best = 1;
  std::size_t best_count = 0;
  for (auto [step, count] : counts) {
    if (count > best_count) {
      best = step;
      best_count = count;
    }
  }
  return best;
}

std::vector<RawTrack> split_at_gaps(std::span<const RawTrack> tracks,
                                    long long frame_step) {
  if (frame_step <= 0) throw ArgumentError("frame_step must be positive");
  std::vector<RawTrack> out;
  for (const auto& t : tracks) {
    RawTrack cur{t.agent_id, {}};
    for (const auto& p : t.points) {
      if (!cur.points.empty() &&
          p.frame - cur.points.back().frame != frame_step) {
        out.push_back(std::move(cur));
        cur = RawTrack{t.agent_id, {}};
      }
      cur.points.push_back(p);
    }
    if (!cur.points.empty()) out.push_back(std::move(cur));
  }
  return out;
}

std::size_t window_count(std::size_t length, const WindowConfig& config) {
  const std::size_t span = static_cast<std::size_t>(config.t_obs + config.t_pred);
  if (length < span) return 0;
  return (length - span) / static_cast<std::size_t>(config.stride) + 1;
}

std::vector<Sample> extract_windows(std::span<const RawTrack> tracks,
                                    const WindowConfig& config,
                                    std::string_view scene_id, Split split) {
  if (config.t_obs < 1 || config.t_pred < 1 || config.stride < 1) {
    throw ArgumentError("t_obs, t_pred and stride must be >= 1");
  }
  const long long step =
      config.frame_step > 0 ? config.frame_step : infer_frame_step(tracks);
  const auto pieces = split_at_gaps(tracks, step);
  const std::size_t span = static_cast<std::size_t>(config.t_obs + config.t_pred);
  std::vector<Sample> out;
  for (const auto& piece : pieces) {
    const std::size_t n = window_count(piece.points.size(), config);
    for (std::size_t w = 0; w < n; ++w) {
      const std::size_t start = w * static_cast<std::size_t>(config.stride);
      Sample s;
      s.agent_id = piece.agent_id;
      s.scene_id = std::string(scene_id);
      s.split = split;
      for (std::size_t i = 0; i < span; ++i) {
        const auto& p = piece.points[start + i];
        Vec2 v{p.x, p.y};
        if (i < static_cast<std::size_t>(config.t_obs)) {
          s.observed.push_back(v);
        } else {
          s.future.push_back(v);
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

Trajectory NormTransform::apply(const Trajectory& t) const {
  Trajectory out;
  out.reserve(t.size());
  for (const auto& p : t) out.push_back(p + translation);
  return out;
}

Trajectory NormTransform::invert(const Trajectory& t) const {
  Trajectory out;
  out.reserve(t.size());
  for (const auto& p : t) out.push_back(p - translation);
  return out;
}

Sample NormTransform::apply(const Sample& s) const {
  Sample out = s;
  out.observed = apply(s.observed);
  out.future = apply(s.future);
  return out;
}

Sample NormTransform::invert(const Sample& s) const {
  Sample out = s;
  out.observed = invert(s.observed);
  out.future = invert(s.future);
  return out;
}

std::pair<Sample, NormTransform> normalize(const Sample& s) {
  if (s.observed.empty()) throw ArgumentError("sample has no observed points");
  NormTransform tf{Vec2{-s.observed.back().x, -s.observed.back().y}};
  return {tf.apply(s), tf};
}

Sample denormalize(const Sample& s, const NormTransform& transform) {
  return transform.invert(s);
}

std::vector<Trajectory> synth_templates(const SynthConfig& config) {
  if (config.n_patterns < 2) throw ArgumentError("n_patterns must be >= 2");
  if (config.t_obs < 1 || config.t_pred < 1) {
    throw ArgumentError("t_obs and t_pred must be >= 1");
  }
  constexpr double kTurnRate = 0.12;  // rad per frame for curved patterns
  const int len = config.t_obs + config.t_pred;
  std::vector<Trajectory> out;
  for (int p = 0; p < config.n_patterns; ++p) {
    const double heading0 = 2.0 * std::numbers::pi * p / config.n_patterns;
    double turn = 0.0;
    if (p % 2 == 1) turn = (p % 4 == 1) ? kTurnRate : -kTurnRate;
    Trajectory t;
    Vec2 pos{0.0, 0.0};
    for (int i = 0; i < len; ++i) {
      t.push_back(pos);
      const double h = heading0 + turn * i;
      pos = pos + Vec2{std::cos(h), std::sin(h)} * config.speed;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Sample> synth_generate(const SynthConfig& config) {
  if (config.noise_std < 0.0) throw ArgumentError("noise_std must be >= 0");
  if (config.n_per_pattern < 0) throw ArgumentError("n_per_pattern must be >= 0");
  const auto templates = synth_templates(config);
  Rng rng(config.seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(config.n_patterns) * config.n_per_pattern);
  long long agent = 0;
  for (int p = 0; p < config.n_patterns; ++p) {
    for (int k = 0; k < config.n_per_pattern; ++k) {
      Sample s;
      s.agent_id = agent++;
      s.scene_id = "synth";
      s.pattern_label = p;
      s.split = config.split;
      for (int i = 0; i < config.t_obs + config.t_pred; ++i) {
        Vec2 v = templates[p][i];
        v.x += config.noise_std * rng.normal();
        v.y += config.noise_std * rng.normal();
        (i < config.t_obs ? s.observed : s.future).push_back(v);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string format_track_file(std::span<const RawTrack> tracks) {
  struct Row {
    long long frame, agent;
    double x, y;
  };
  std::vector<Row> rows;
  for (const auto& t : tracks) {
    for (const auto& p : t.points) rows.push_back({p.frame, t.agent_id, p.x, p.y});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.agent < b.agent;
  });
  std::string out;
  for (const auto& r : rows) {
    out += std::to_string(r.frame) + ' ' + std::to_string(r.agent) + ' ' +
           format_g(r.x) + ' ' + format_g(r.y) + '\n';
  }
  return out;
}

std::vector<RawTrack> to_tracks(std::span<const Sample> samples,
                                long long first_frame, long long first_agent) {
  std::vector<RawTrack> out;
  long long agent = first_agent;
  for (const auto& s : samples) {
    RawTrack t{agent++, {}};
    long long f = first_frame;
    for (const auto* traj : {&s.observed, &s.future}) {
      for (const auto& p : *traj) t.points.push_back({f++, p.x, p.y});
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_dataset(std::ostream& out, std::span<const Sample> samples,
                   int t_obs, int t_pred) {
  out << "mp2m-dataset v1\n";
  out << "t_obs " << t_obs << "\n";
  out << "t_pred " << t_pred << "\n";
  out << "samples " << samples.size() << "\n";
  for (const auto& s : samples) {
    if (static_cast<int>(s.t_obs()) != t_obs ||
        static_cast<int>(s.t_pred()) != t_pred) {
      throw ArgumentError("sample window lengths differ from the dataset header");
    }
    std::string scene = s.scene_id.empty() ? "-" : s.scene_id;
    for (char& c : scene) {
      if (c == ' ' || c == '\t' || c == ',') c = '_';
    }
    std::string line = scene + ' ' + std::to_string(s.agent_id) + ' ' +
                       std::to_string(s.pattern_label.value_or(-1)) + ' ' +
                       std::string(to_string(s.split));
    for (const auto& v : s.flatten()) {
      line += ' ';
      line += format_g(v);
    }
    out << line << '\n';
  }
}

std::vector<Sample> read_dataset(std::istream& in) {
  RecordReader r(in, "dataset");
  r.expect_header("mp2m-dataset", "v1");
  std::vector<Sample> out;
  try {
    const int t_obs = static_cast<int>(parse_int(r.expect_key("t_obs", 1)[0]));
    const int t_pred = static_cast<int>(parse_int(r.expect_key("t_pred", 1)[0]));
    const long long n = parse_int(r.expect_key("samples", 1)[0]);
    if (t_obs < 1 || t_pred < 1 || n < 0) r.fail("invalid header values");
    const std::size_t width = 4 + 2 * static_cast<std::size_t>(t_obs + t_pred);
    for (long long i = 0; i < n; ++i) {
      auto f = r.expect_line();
      if (f.size() != width) {
        r.fail("expected " + std::to_string(width) + " fields, found " +
               std::to_string(f.size()));
      }
      Sample s;
      s.scene_id = f[0] == "-" ? "" : std::string(f[0]);
      s.agent_id = parse_int(f[1]);
      const long long label = parse_int(f[2]);
      if (label >= 0) s.pattern_label = static_cast<int>(label);
      s.split = parse_split(f[3]);
      for (int t = 0; t < t_obs + t_pred; ++t) {
        Vec2 v{parse_double(f[4 + 2 * t]), parse_double(f[5 + 2 * t])};
        (t < t_obs ? s.observed : s.future).push_back(v);
      }
      validate(s);
      out.push_back(std::move(s));
    }
    std::vector<std::string_view> extra;
    if (r.next(extra)) r.fail("trailing data after the declared sample count");
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  return out;
}

void save_dataset(const std::string& path, std::span<const Sample> samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  const int t_obs = samples.empty() ? 8 : static_cast<int>(samples[0].t_obs());
  const int t_pred = samples.empty() ? 12 : static_cast<int>(samples[0].t_pred());
  write_dataset(f, samples, t_obs, t_pred);
  if (!f) throw DataError("write to '" + path + "' failed");
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return read_dataset(f);
}

}  // namespace mp2m
