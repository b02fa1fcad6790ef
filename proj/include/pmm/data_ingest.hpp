#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pmm {

enum class Unit { meters, pixels };

std::string unit_name(Unit u);
Unit unit_from_name(const std::string& s);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  double norm() const { return std::hypot(x, y); }
};

Vec2 rotate(Vec2 p, double angle);

struct TrackPoint {
  long long frame = 0;
  Vec2 pos;
};

/// One agent's observed positions on the downsampled frame grid.
struct RawTrack {
  long long agent_id = 0;
  std::vector<TrackPoint> frames;  // strictly increasing frame indices
  std::string label;               // SDD only
  Unit unit = Unit::meters;
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// ETH/UCY rows: `frame_id agent_id x y`, whitespace separated, meters.
std::vector<RawTrack> parse_ethucy(const std::string& text);

/// SDD rows: `track_id xmin ymin xmax ymax frame lost occluded generated label`.
/// Position is the bounding-box center; lost rows dropped; frames kept only on
/// the stride-12 grid (30 Hz video sampled every 0.4 s).
std::vector<RawTrack> parse_sdd(const std::string& text);

inline constexpr int kSddFrameStride = 12;

struct NeighborView {
  long long agent_id = 0;
  Vec2 position;              // raw position at t=0, scene frame
  std::vector<Vec2> history;  // T' points, translated so this agent's t=0 is the origin
};

/// One training/evaluation sample: a primary agent with full history+future
/// spans and the neighbor set visible at t=0.
struct ObservationWindow {
  std::string scene;
  long long agent_id = 0;
  long long anchor_frame = 0;  // the t=0 frame
  Unit unit = Unit::meters;
  std::vector<Vec2> history;  // T' points, own t=0 at the origin
  std::vector<Vec2> future;   // T points, offsets from own t=0 position
  Vec2 pseudo_velocity;       // history[T'-1] - history[T'-2]
  Vec2 position;              // raw position at t=0, scene frame
  std::vector<NeighborView> neighbors;  // sorted by agent_id
};

struct WindowParams {
  int history_len = 8;
  int future_len = 12;
  double max_dist = 10.0;
  int anchor_stride = 1;
};

/// Cut all eligible (agent, anchor) windows from one scene's tracks. Tracks
/// must share one uniformly spaced frame grid. Agents lacking a full 20-frame
/// span simply contribute no window; agents lacking the full observation
/// span are not eligible as neighbors.
std::vector<ObservationWindow> build_windows(const std::vector<RawTrack>& tracks,
                                             const WindowParams& params,
                                             const std::string& scene_name = "");

/// Rotate every coordinate of the window (history, future, neighbor
/// histories, pseudo-velocity, raw positions) by the same angle about the
/// origin. Pairwise geometry is preserved.
ObservationWindow augment_rotation(const ObservationWindow& w, double angle);

inline const std::vector<std::string> kEthUcyScenes = {"eth", "hotel", "univ", "zara1",
                                                       "zara2"};

/// Scene-video names of the fixed SDD test partition (the split distributed
/// with the TrajNet benchmark preprocessing, used by most reported baselines).
const std::vector<std::string>& sdd_test_scenes();

struct SplitResult {
  std::vector<ObservationWindow> train;
  std::vector<ObservationWindow> test;
};

/// ETH/UCY leave-one-out: train on four scenes, test on the held-out one.
/// Throws on an unknown holdout name.
SplitResult leave_one_out_split(const std::map<std::string, std::vector<ObservationWindow>>& by_scene,
                                const std::string& held_out_scene);

/// SDD: fixed train/test partition by scene-video name.
SplitResult sdd_split(const std::map<std::string, std::vector<ObservationWindow>>& by_scene);

/// Hold out the trailing fraction of each scene's windows (ordered by anchor
/// frame) for model selection. Scene-time blocks, not a random shuffle.
void split_validation_tail(const std::vector<ObservationWindow>& windows, double fraction,
                           std::vector<ObservationWindow>& train_out,
                           std::vector<ObservationWindow>& val_out);

// --- window cache (JSON lines, versioned header) ----------------------------

struct CacheParams {
  std::string dataset;  // "ethucy" | "sdd" | free-form
  WindowParams window;
};

void write_window_cache(std::ostream& os, const CacheParams& params,
                        const std::vector<ObservationWindow>& windows);
/// Throws if the header version or preprocessing parameters do not match.
std::vector<ObservationWindow> read_window_cache(std::istream& is,
                                                 const CacheParams& expected);
/// Reads whatever parameters the cache was built with.
std::vector<ObservationWindow> read_window_cache(std::istream& is, CacheParams* params_out);

}  // namespace pmm
