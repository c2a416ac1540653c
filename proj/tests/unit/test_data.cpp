#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mp2m/data.hpp"
#include "mp2m/errors.hpp"
#include "mp2m/rng.hpp"

using namespace mp2m;

TEST_CASE("minimal track file") {
  const auto tracks = parse_track_file("1 7 0.0 0.0\n2 7 1.0 0.0");
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].agent_id == 7);
  REQUIRE(tracks[0].points.size() == 2);
  CHECK(tracks[0].points[1].frame == 2);
  CHECK(tracks[0].points[1].x == 1.0);
}

TEST_CASE("empty and comment-only input") {
  CHECK(parse_track_file("").empty());
  CHECK(parse_track_file("# nothing\n\n").empty());
}

TEST_CASE("tracks are grouped by agent and ordered") {
  const auto tracks = parse_track_file("1 5 0 0\n1 2 9 9\n2 5 1 0\n2 2 8 8\n");
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].agent_id == 2);
  CHECK(tracks[1].agent_id == 5);
  CHECK(tracks[1].points[1].x == 1.0);
}

TEST_CASE("malformed line reports its line number") {
  try {
    parse_track_file("1 1 0 0\n# c\n2 1 zero 0\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_track_file("1 1 0\n"), ParseError);
}

TEST_CASE("non-monotone frames are a data error") {
  CHECK_THROWS_AS(parse_track_file("2 1 0 0\n1 1 1 1\n"), DataError);
  CHECK_THROWS_AS(parse_track_file("1 1 0 0\n1 1 1 1\n"), DataError);
}

TEST_CASE("column remapping and unit scale") {
  ColumnMap cols = ColumnMap::parse("0,1,2,4");
  cols.unit_scale = 0.5;
  const auto tracks = parse_track_file("10 3 2.0 99 4.0\n", cols);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].points[0].x == 1.0);
  CHECK(tracks[0].points[0].y == 2.0);
  CHECK_THROWS_AS(ColumnMap::parse("0,1,2"), ArgumentError);
}

TEST_CASE("window count formula") {
  const WindowConfig w;  // 8 + 12
  CHECK(window_count(20, w) == 1);
  CHECK(window_count(19, w) == 0);
  CHECK(window_count(25, w) == 6);
  WindowConfig s = w;
  s.stride = 2;
  // floor((25 - 20) / 2) + 1
  CHECK(window_count(25, s) == 3);
}

namespace {

std::vector<RawTrack> line_track(long long agent, long long first, long long n, long long step = 1) {
  RawTrack t;
  t.agent_id = agent;
  for (long long i = 0; i < n; ++i) t.points.push_back({first + i * step, double(i), double(agent)});
  return {t};
}

}  // namespace

TEST_CASE("three agents over 25 frames match the hand count") {
  // Agent 1 spans 25 frames, agent 2 spans 20, agent 3 spans 10.
  std::vector<RawTrack> tracks;
  for (auto& t : line_track(1, 0, 25)) tracks.push_back(t);
  for (auto& t : line_track(2, 3, 20)) tracks.push_back(t);
  for (auto& t : line_track(3, 15, 10)) tracks.push_back(t);
  const std::string text = format_track_file(tracks);
  const auto parsed = parse_track_file(text);
  REQUIRE(parsed.size() == 3);
  const auto samples = extract_windows(parsed, WindowConfig{});
  // 6 + 1 + 0
  CHECK(samples.size() == 7);
  for (const auto& s : samples) {
    CHECK(s.t_obs() == 8);
    CHECK(s.t_pred() == 12);
    // every point of a window carries its own agent's y
    for (const auto& p : s.observed) CHECK(p.y == double(s.agent_id));
    for (const auto& p : s.future) CHECK(p.y == double(s.agent_id));
  }
}

TEST_CASE("frame gaps split tracks") {
  // 12 frames, gap, 20 frames: only the second piece fits a window.
  RawTrack t;
  t.agent_id = 4;
  for (int i = 0; i < 12; ++i) t.points.push_back({i, double(i), 0});
  for (int i = 0; i < 20; ++i) t.points.push_back({100 + i, double(i), 1});
  const std::vector<RawTrack> tracks{t};
  const auto pieces = split_at_gaps(tracks, 1);
  REQUIRE(pieces.size() == 2);
  const auto samples = extract_windows(tracks, WindowConfig{});
  REQUIRE(samples.size() == 1);
  for (const auto& p : samples[0].observed) CHECK(p.y == 1.0);
}

TEST_CASE("frame step is inferred for datasets that count in tens") {
  const auto tracks = line_track(1, 0, 21, 10);
  CHECK(infer_frame_step(tracks) == 10);
  WindowConfig w;
  w.frame_step = 0;
  CHECK(extract_windows(tracks, w).size() == 2);
  w.frame_step = 1;  // every step looks like a gap
  CHECK(extract_windows(tracks, w).empty());
}

TEST_CASE("normalize moves the last observation to the origin") {
  Sample s;
  for (int i = 0; i < 8; ++i) s.observed.push_back({3.0 - (7 - i), 4.0});
  for (int i = 0; i < 12; ++i) s.future.push_back({3.0 + i + 1, 4.0});
  auto [n, tf] = normalize(s);
  CHECK(n.observed.back() == Vec2{0, 0});
  CHECK(tf.translation == Vec2{-3, -4});
  CHECK(n.future[0] == Vec2{1, 0});

  Sample origin = n;
  auto [n2, tf2] = normalize(origin);
  CHECK(tf2.translation == Vec2{0, 0});
  CHECK(n2.observed == origin.observed);
}

TEST_CASE("normalize round trip on random samples") {
  Rng rng(5);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Sample s;
    for (int i = 0; i < 8; ++i) s.observed.push_back({rng.normal() * 50, rng.normal() * 50});
    for (int i = 0; i < 12; ++i) s.future.push_back({rng.normal() * 50, rng.normal() * 50});
    auto [n, tf] = normalize(s);
    const Sample back = denormalize(n, tf);
    for (int i = 0; i < 8; ++i) worst = std::max(worst, norm(back.observed[i] - s.observed[i]));
    for (int i = 0; i < 12; ++i) worst = std::max(worst, norm(back.future[i] - s.future[i]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("noise-free synthetic samples equal their templates") {
  SynthConfig c;
  c.noise_std = 0.0;
  c.n_per_pattern = 3;
  const auto templates = synth_templates(c);
  const auto samples = synth_generate(c);
  REQUIRE(samples.size() == 24);
  for (const auto& s : samples) {
    REQUIRE(s.pattern_label.has_value());
    const auto& t = templates[static_cast<std::size_t>(*s.pattern_label)];
    for (int i = 0; i < 8; ++i) CHECK(s.observed[i] == t[i]);
    for (int i = 0; i < 12; ++i) CHECK(s.future[i] == t[8 + i]);
  }
}

TEST_CASE("synthetic generation is a pure function of its config") {
  SynthConfig c;
  c.seed = 9;
  std::ostringstream a, b;
  write_dataset(a, synth_generate(c), 8, 12);
  write_dataset(b, synth_generate(c), 8, 12);
  CHECK(a.str() == b.str());
  c.seed = 10;
  std::ostringstream d;
  write_dataset(d, synth_generate(c), 8, 12);
  CHECK(a.str() != d.str());
}

TEST_CASE("synthetic headings are spread by at least 2 pi / P") {
  SynthConfig c;
  const auto templates = synth_templates(c);
  std::vector<double> headings;
  for (const auto& t : templates) headings.push_back(std::atan2(t[1].y - t[0].y, t[1].x - t[0].x));
  for (std::size_t a = 0; a < headings.size(); ++a) {
    for (std::size_t b = a + 1; b < headings.size(); ++b) {
      double d = std::abs(headings[a] - headings[b]);
      d = std::min(d, 2 * M_PI - d);
      CHECK(d >= 2 * M_PI / c.n_patterns - 1e-9);
    }
  }
}

TEST_CASE("nearest template recovers every synthetic label") {
  SynthConfig c;
  c.seed = 21;
  const auto templates = synth_templates(c);
  const auto samples = synth_generate(c);
  std::size_t correct = 0;
  for (const auto& s : samples) {
    int best = -1;
    double best_d = 1e300;
    for (std::size_t p = 0; p < templates.size(); ++p) {
      double d = 0;
      for (int i = 0; i < 8; ++i) d += std::pow(norm(s.observed[i] - templates[p][i]), 2);
      for (int i = 0; i < 12; ++i) d += std::pow(norm(s.future[i] - templates[p][8 + i]), 2);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(p);
      }
    }
    correct += best == *s.pattern_label;
  }
  CHECK(correct == samples.size());
}

TEST_CASE("dataset file round trip") {
  SynthConfig c;
  c.n_per_pattern = 5;
  c.split = Split::kTest;
  auto samples = synth_generate(c);
  samples[0].scene_id = "zara01";
  std::ostringstream out;
  write_dataset(out, samples, 8, 12);
  std::istringstream in(out.str());
  const auto back = read_dataset(in);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].observed == samples[i].observed);
    CHECK(back[i].future == samples[i].future);
    CHECK(back[i].pattern_label == samples[i].pattern_label);
    CHECK(back[i].scene_id == samples[i].scene_id);
    CHECK(back[i].split == Split::kTest);
  }
  std::ostringstream again;
  write_dataset(again, back, 8, 12);
  CHECK(again.str() == out.str());
}

TEST_CASE("dataset reader rejects a wrong header") {
  std::istringstream in("mp2m-dataset v9\n");
  CHECK_THROWS_AS(read_dataset(in), FormatError);
}

TEST_CASE("validate rejects non-finite coordinates") {
  Sample s;
  s.observed = {{0, 0}};
  s.future = {{NAN, 0}};
  CHECK_THROWS_AS(validate(s), DataError);
}
