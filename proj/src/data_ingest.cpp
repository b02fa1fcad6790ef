#include "pmm/data_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "nlohmann/json.hpp"

namespace pmm {

using json = nlohmann::json;

std::string unit_name(Unit u) { return u == Unit::meters ? "meters" : "pixels"; }

Unit unit_from_name(const std::string& s) {
  if (s == "meters") return Unit::meters;
  if (s == "pixels") return Unit::pixels;
  throw std::invalid_argument("unknown unit: " + s);
}

Vec2 rotate(Vec2 p, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool parse_double(const std::string& tok, double& out) {
  try {
    size_t used = 0;
    out = std::stod(tok, &used);
    return used == tok.size();
  } catch (...) {
    return false;
  }
}

/// Numeric token that must denote an integer (ETH/UCY files often format
/// frame and agent ids as "841.0").
bool parse_integral(const std::string& tok, long long& out) {
  double d = 0.0;
  if (!parse_double(tok, d)) return false;
  double r = std::round(d);
  if (std::abs(d - r) > 1e-9) return false;
  out = static_cast<long long>(r);
  return true;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream iss(line);
  std::string t;
  while (iss >> t) toks.push_back(t);
  return toks;
}

std::vector<RawTrack> tracks_from_map(std::map<long long, RawTrack>&& by_id) {
  std::vector<RawTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, tr] : by_id) {
    std::sort(tr.frames.begin(), tr.frames.end(),
              [](const TrackPoint& a, const TrackPoint& b) { return a.frame < b.frame; });
    tracks.push_back(std::move(tr));
  }
  return tracks;
}

}  // namespace

std::vector<RawTrack> parse_ethucy(const std::string& text) {
  std::map<long long, RawTrack> by_id;
  std::set<std::pair<long long, long long>> seen;  // (frame, agent)
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 columns, got " +
                       std::to_string(toks.size()));
    }
    long long frame = 0, agent = 0;
    double x = 0.0, y = 0.0;
    if (!parse_integral(toks[0], frame) || !parse_integral(toks[1], agent) ||
        !parse_double(toks[2], x) || !parse_double(toks[3], y)) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed row");
    }
    if (!seen.insert({frame, agent}).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate (frame " +
                       std::to_string(frame) + ", agent " + std::to_string(agent) + ")");
    }
    RawTrack& tr = by_id[agent];
    tr.agent_id = agent;
    tr.unit = Unit::meters;
    tr.frames.push_back({frame, {x, y}});
  }
  return tracks_from_map(std::move(by_id));
}

std::vector<RawTrack> parse_sdd(const std::string& text) {
  std::map<long long, RawTrack> by_id;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() < 10) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 10 columns, got " +
                       std::to_string(toks.size()));
    }
    long long track_id = 0, frame = 0, lost = 0;
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    bool ok = parse_integral(toks[0], track_id) && parse_double(toks[1], xmin) &&
              parse_double(toks[2], ymin) && parse_double(toks[3], xmax) &&
              parse_double(toks[4], ymax) && parse_integral(toks[6], lost);
    if (!ok) throw ParseError("line " + std::to_string(line_no) + ": malformed row");
    if (!parse_integral(toks[5], frame)) {
      throw ParseError("line " + std::to_string(line_no) + ": non-integer frame '" +
                       toks[5] + "'");
    }
    if (xmax < xmin || ymax < ymin) {
      throw ParseError("line " + std::to_string(line_no) + ": inverted bounding box");
    }
    if (lost == 1) continue;
    if (frame % kSddFrameStride != 0) continue;
    // label is everything from column 10 on, quotes stripped
    std::string label = toks[9];
    for (size_t i = 10; i < toks.size(); ++i) label += " " + toks[i];
    label.erase(std::remove(label.begin(), label.end(), '"'), label.end());

    RawTrack& tr = by_id[track_id];
    tr.agent_id = track_id;
    tr.unit = Unit::pixels;
    tr.label = label;
    tr.frames.push_back({frame, {(xmin + xmax) / 2.0, (ymin + ymax) / 2.0}});
  }
  return tracks_from_map(std::move(by_id));
}

std::vector<ObservationWindow> build_windows(const std::vector<RawTrack>& tracks,
                                             const WindowParams& params,
                                             const std::string& scene_name) {
  const int t_hist = params.history_len;
  const int t_fut = params.future_len;
  const int span = t_hist + t_fut;

  // Common frame grid across the scene; must be uniformly spaced.
  std::set<long long> frame_set;
  for (const auto& tr : tracks)
    for (const auto& p : tr.frames) frame_set.insert(p.frame);
  std::vector<long long> grid(frame_set.begin(), frame_set.end());
  if (grid.size() >= 2) {
    long long step = grid[1] - grid[0];
    for (size_t i = 1; i + 1 < grid.size(); ++i) {
      if (grid[i + 1] - grid[i] != step) {
        throw std::invalid_argument("non-uniform frame grid in scene '" + scene_name +
                                    "': gap " + std::to_string(grid[i + 1] - grid[i]) +
                                    " vs step " + std::to_string(step));
      }
    }
  }
  std::map<long long, int> grid_index;
  for (size_t i = 0; i < grid.size(); ++i) grid_index[grid[i]] = static_cast<int>(i);

  // Per track: grid index -> position.
  struct Indexed {
    const RawTrack* track;
    std::map<int, Vec2> at;
  };
  std::vector<Indexed> idx;
  idx.reserve(tracks.size());
  for (const auto& tr : tracks) {
    Indexed e{&tr, {}};
    for (const auto& p : tr.frames) e.at[grid_index.at(p.frame)] = p.pos;
    idx.push_back(std::move(e));
  }
  std::sort(idx.begin(), idx.end(), [](const Indexed& a, const Indexed& b) {
    return a.track->agent_id < b.track->agent_id;
  });

  auto has_range = [](const Indexed& e, int g0, int g1) {
    for (int g = g0; g <= g1; ++g)
      if (!e.at.count(g)) return false;
    return true;
  };

  std::vector<ObservationWindow> windows;
  int n_grid = static_cast<int>(grid.size());
  for (int anchor = t_hist - 1; anchor + t_fut < n_grid; ++anchor) {
    if ((anchor - (t_hist - 1)) % params.anchor_stride != 0) continue;
    for (const auto& e : idx) {
      if (!has_range(e, anchor - t_hist + 1, anchor + t_fut)) continue;
      Vec2 origin = e.at.at(anchor);
      ObservationWindow w;
      w.scene = scene_name;
      w.agent_id = e.track->agent_id;
      w.anchor_frame = grid[anchor];
      w.unit = e.track->unit;
      w.position = origin;
      for (int g = anchor - t_hist + 1; g <= anchor; ++g)
        w.history.push_back(e.at.at(g) - origin);
      for (int g = anchor + 1; g <= anchor + t_fut; ++g)
        w.future.push_back(e.at.at(g) - origin);
      w.pseudo_velocity = w.history[t_hist - 1] - w.history[t_hist - 2];
      for (const auto& o : idx) {
        if (o.track->agent_id == e.track->agent_id) continue;
        if (!has_range(o, anchor - t_hist + 1, anchor)) continue;
        Vec2 opos = o.at.at(anchor);
        if ((opos - origin).norm() > params.max_dist) continue;
        NeighborView nb;
        nb.agent_id = o.track->agent_id;
        nb.position = opos;
        for (int g = anchor - t_hist + 1; g <= anchor; ++g)
          nb.history.push_back(o.at.at(g) - opos);
        w.neighbors.push_back(std::move(nb));
      }
      windows.push_back(std::move(w));
    }
  }
  (void)span;
  return windows;
}

ObservationWindow augment_rotation(const ObservationWindow& w, double angle) {
  ObservationWindow out = w;
  for (auto& p : out.history) p = rotate(p, angle);
  for (auto& p : out.future) p = rotate(p, angle);
  out.pseudo_velocity = rotate(out.pseudo_velocity, angle);
  out.position = rotate(out.position, angle);
  for (auto& nb : out.neighbors) {
    nb.position = rotate(nb.position, angle);
    for (auto& p : nb.history) p = rotate(p, angle);
  }
  return out;
}

const std::vector<std::string>& sdd_test_scenes() {
  static const std::vector<std::string> scenes = {
      "coupa_0", "coupa_1", "gates_2",  "hyang_0", "hyang_1", "hyang_3",
      "hyang_8", "little_0", "little_1", "little_2", "little_3", "nexus_5",
      "nexus_6", "quad_0",   "quad_1",   "quad_2",   "quad_3"};
  return scenes;
}

SplitResult leave_one_out_split(
    const std::map<std::string, std::vector<ObservationWindow>>& by_scene,
    const std::string& held_out_scene) {
  std::string holdout = lower(held_out_scene);
  if (std::find(kEthUcyScenes.begin(), kEthUcyScenes.end(), holdout) ==
      kEthUcyScenes.end()) {
    throw std::invalid_argument("unknown ETH/UCY scene '" + held_out_scene +
                                "' (expected one of eth, hotel, univ, zara1, zara2)");
  }
  SplitResult res;
  for (const auto& [scene, windows] : by_scene) {
    auto& dst = (lower(scene) == holdout) ? res.test : res.train;
    dst.insert(dst.end(), windows.begin(), windows.end());
  }
  return res;
}

SplitResult sdd_split(const std::map<std::string, std::vector<ObservationWindow>>& by_scene) {
  const auto& test_list = sdd_test_scenes();
  SplitResult res;
  for (const auto& [scene, windows] : by_scene) {
    bool is_test = std::find(test_list.begin(), test_list.end(), lower(scene)) !=
                   test_list.end();
    auto& dst = is_test ? res.test : res.train;
    dst.insert(dst.end(), windows.begin(), windows.end());
  }
  return res;
}

void split_validation_tail(const std::vector<ObservationWindow>& windows, double fraction,
                           std::vector<ObservationWindow>& train_out,
                           std::vector<ObservationWindow>& val_out) {
  std::map<std::string, std::vector<ObservationWindow>> by_scene;
  for (const auto& w : windows) by_scene[w.scene].push_back(w);
  for (auto& [scene, ws] : by_scene) {
    std::stable_sort(ws.begin(), ws.end(),
                     [](const ObservationWindow& a, const ObservationWindow& b) {
                       return a.anchor_frame < b.anchor_frame;
                     });
    size_t n_val = static_cast<size_t>(ws.size() * fraction);
    size_t n_train = ws.size() - n_val;
    for (size_t i = 0; i < ws.size(); ++i)
      (i < n_train ? train_out : val_out).push_back(ws[i]);
  }
}

// --- cache -------------------------------------------------------------------

namespace {

constexpr int kCacheVersion = 1;

json vec2_json(Vec2 p) { return json::array({p.x, p.y}); }
Vec2 vec2_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json points_json(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (auto p : pts) arr.push_back(vec2_json(p));
  return arr;
}

std::vector<Vec2> points_from(const json& j) {
  std::vector<Vec2> pts;
  for (const auto& e : j) pts.push_back(vec2_from(e));
  return pts;
}

json params_json(const CacheParams& p) {
  return json{{"dataset", p.dataset},
              {"history_len", p.window.history_len},
              {"future_len", p.window.future_len},
              {"max_dist", p.window.max_dist},
              {"anchor_stride", p.window.anchor_stride}};
}

CacheParams params_from(const json& j) {
  CacheParams p;
  p.dataset = j.at("dataset").get<std::string>();
  p.window.history_len = j.at("history_len").get<int>();
  p.window.future_len = j.at("future_len").get<int>();
  p.window.max_dist = j.at("max_dist").get<double>();
  p.window.anchor_stride = j.at("anchor_stride").get<int>();
  return p;
}

}  // namespace

void write_window_cache(std::ostream& os, const CacheParams& params,
                        const std::vector<ObservationWindow>& windows) {
  json header{{"format", "pmm-windows"}, {"version", kCacheVersion},
              {"params", params_json(params)}, {"count", windows.size()}};
  os << header.dump() << "\n";
  for (const auto& w : windows) {
    json nbs = json::array();
    for (const auto& nb : w.neighbors) {
      nbs.push_back(json{{"agent_id", nb.agent_id},
                         {"position", vec2_json(nb.position)},
                         {"history", points_json(nb.history)}});
    }
    json rec{{"scene", w.scene},
             {"agent_id", w.agent_id},
             {"anchor_frame", w.anchor_frame},
             {"unit", unit_name(w.unit)},
             {"history", points_json(w.history)},
             {"future", points_json(w.future)},
             {"pseudo_velocity", vec2_json(w.pseudo_velocity)},
             {"position", vec2_json(w.position)},
             {"neighbors", nbs}};
    os << rec.dump() << "\n";
  }
}

std::vector<ObservationWindow> read_window_cache(std::istream& is, CacheParams* params_out) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("window cache: empty stream");
  json header = json::parse(line);
  if (header.value("format", "") != "pmm-windows") {
    throw std::runtime_error("window cache: not a pmm-windows file");
  }
  if (header.value("version", -1) != kCacheVersion) {
    throw std::runtime_error("window cache: unsupported version");
  }
  if (params_out) *params_out = params_from(header.at("params"));
  std::vector<ObservationWindow> windows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    ObservationWindow w;
    w.scene = rec.at("scene").get<std::string>();
    w.agent_id = rec.at("agent_id").get<long long>();
    w.anchor_frame = rec.at("anchor_frame").get<long long>();
    w.unit = unit_from_name(rec.at("unit").get<std::string>());
    w.history = points_from(rec.at("history"));
    w.future = points_from(rec.at("future"));
    w.pseudo_velocity = vec2_from(rec.at("pseudo_velocity"));
    w.position = vec2_from(rec.at("position"));
    for (const auto& nj : rec.at("neighbors")) {
      NeighborView nb;
      nb.agent_id = nj.at("agent_id").get<long long>();
      nb.position = vec2_from(nj.at("position"));
      nb.history = points_from(nj.at("history"));
      w.neighbors.push_back(std::move(nb));
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<ObservationWindow> read_window_cache(std::istream& is,
                                                 const CacheParams& expected) {
  CacheParams got;
  auto windows = read_window_cache(is, &got);
  if (params_json(got) != params_json(expected)) {
    throw std::runtime_error(
        "window cache was built with different preprocessing parameters (" +
        params_json(got).dump() + " vs requested " + params_json(expected).dump() +
        "); re-run prepare");
  }
  return windows;
}

}  // namespace pmm
