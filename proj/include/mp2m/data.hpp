#pragma once

// Track ingestion, fixed-length windowing, translation normalization and the
// labeled synthetic generator.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mp2m {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

double norm(Vec2 v);

// Ordered 2D positions in meters, one per frame.
using Trajectory = std::vector<Vec2>;

struct TrackPoint {
  long long frame = 0;
  double x = 0.0;
  double y = 0.0;
};

struct RawTrack {
  long long agent_id = 0;
  std::vector<TrackPoint> points;  // strictly increasing frames
};

// Provenance of a sample. Memory banks may only be built from kTrain.
enum class Split { kUnspecified, kTrain, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view s);

struct Sample {
  Trajectory observed;  // t_obs rows
  Trajectory future;    // t_pred rows
  long long agent_id = 0;
  std::string scene_id;
  std::optional<int> pattern_label;
  Split split = Split::kUnspecified;

  std::size_t t_obs() const { return observed.size(); }
  std::size_t t_pred() const { return future.size(); }
  // observed followed by future, flattened as x0 y0 x1 y1 ...
  std::vector<double> flatten() const;
};

// Throws DataError on empty windows or non-finite coordinates.
void validate(const Sample& s);

// Column layout of a raw track file. The canonical layout is
// `frame agent x y`; other ETH/UCY exports are read by remapping columns.
struct ColumnMap {
  int frame = 0;
  int agent = 1;
  int x = 2;
  int y = 3;
  double unit_scale = 1.0;  // multiplies x and y (e.g. pixels -> meters)

  // Parses "frame,agent,x,y" column indices, e.g. "0,1,2,4".
  static ColumnMap parse(std::string_view spec);
};

// Lines of whitespace separated columns; `#` starts a comment line. Records of
// one agent must appear with strictly increasing frame ids. Tracks are
// returned ordered by agent id.
std::vector<RawTrack> parse_track_file(std::string_view text,
                                       const ColumnMap& columns = {});

// Most common positive frame difference within tracks (1 when undetermined).
long long infer_frame_step(std::span<const RawTrack> tracks);

// Splits tracks wherever consecutive frames differ by more than frame_step.
std::vector<RawTrack> split_at_gaps(std::span<const RawTrack> tracks,
                                    long long frame_step);

struct WindowConfig {
  int t_obs = 8;
  int t_pred = 12;
  int stride = 1;
  long long frame_step = 1;  // <= 0 infers it from the data
};

// Sliding windows of t_obs + t_pred contiguous frames. Tracks are split at
// frame gaps first, so a window never spans a gap or two agents.
std::vector<Sample> extract_windows(std::span<const RawTrack> tracks,
                                    const WindowConfig& config,
                                    std::string_view scene_id = "",
                                    Split split = Split::kUnspecified);

// Number of windows a contiguous track of `length` frames yields.
std::size_t window_count(std::size_t length, const WindowConfig& config);

struct NormTransform {
  Vec2 translation;  // added to raw coordinates

  Sample apply(const Sample& s) const;
  Sample invert(const Sample& s) const;
  Trajectory invert(const Trajectory& t) const;
  Trajectory apply(const Trajectory& t) const;
};

// Translates so the last observed position is the origin.
std::pair<Sample, NormTransform> normalize(const Sample& s);
Sample denormalize(const Sample& s, const NormTransform& transform);

struct SynthConfig {
  int n_patterns = 8;
  int n_per_pattern = 100;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  int t_obs = 8;
  int t_pred = 12;
  double speed = 0.4;  // meters per frame
  Split split = Split::kUnspecified;
};

// Noise-free full trajectories (t_obs + t_pred points) for each pattern.
// Pattern p heads at 2*pi*p/n_patterns; odd patterns curve, alternating
// left and right.
std::vector<Trajectory> synth_templates(const SynthConfig& config);

// n_per_pattern noisy copies of every template, grouped by pattern, with
// i.i.d. N(0, noise_std^2) added to each coordinate.
std::vector<Sample> synth_generate(const SynthConfig& config);

// Renders tracks in the canonical raw `frame agent x y` layout, sorted by
// frame then agent like the ETH/UCY exports.
std::string format_track_file(std::span<const RawTrack> tracks);

// One track per sample (observed then future) with frames starting at
// `first_frame`; agent ids are assigned consecutively from `first_agent`.
std::vector<RawTrack> to_tracks(std::span<const Sample> samples,
                                long long first_frame = 0,
                                long long first_agent = 1);

// Canonical dataset file: header `mp2m-dataset v1`, `t_obs`, `t_pred`,
// `samples N`, then one record per line:
//   scene agent label split x_0 y_0 ... x_{T-1} y_{T-1}
// with label -1 when absent and the observed window first.
void write_dataset(std::ostream& out, std::span<const Sample> samples,
                   int t_obs, int t_pred);
std::vector<Sample> read_dataset(std::istream& in);

void save_dataset(const std::string& path, std::span<const Sample> samples);
std::vector<Sample> load_dataset(const std::string& path);

}  // namespace mp2m
