#include "replan/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan {

using nlohmann::json;

std::vector<Vec2> ScenarioLog::target_future() const {
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(future_len));
  for (int t = 1; t <= future_len; ++t) {
    const AgentState& s = state(target_index, t);
    out.push_back({s.pose.x, s.pose.y});
  }
  return out;
}

void validate_scenario(const ScenarioLog& s) {
  const auto fail = [&](const std::string& what) {
    throw DataError("scenario '" + s.id + "': " + what);
  };
  if (!(s.dt > 0.0)) fail("dt must be positive");
  if (s.history_len < 1) fail("history_len must be >= 1");
  if (s.future_len < 1) fail("future_len must be >= 1");
  if (!(s.lane_half_width > 0.0)) fail("lane_half_width must be positive");
  if (s.tracks.empty()) fail("no tracks");
  if (s.target_index < 0 || s.target_index >= static_cast<int>(s.tracks.size()))
    fail("target_index out of range");
  if (s.lanes.empty()) fail("no lanes");
  for (const auto& lane : s.lanes)
    if (lane.size() < 2) fail("lane with fewer than 2 points");
  const auto want = static_cast<std::size_t>(s.tick_count());
  for (const auto& tr : s.tracks) {
    if (tr.states.size() != want)
      fail("track '" + tr.id + "' has " + std::to_string(tr.states.size()) + " states, expected " +
           std::to_string(want));
    if (!(tr.length > 0.0) || !(tr.width > 0.0)) fail("track '" + tr.id + "' non-positive extent");
    for (const auto& st : tr.states) {
      if (!std::isfinite(st.pose.x) || !std::isfinite(st.pose.y) || !std::isfinite(st.pose.yaw) ||
          !std::isfinite(st.speed))
        fail("track '" + tr.id + "' has a non-finite state");
      if (st.pose.yaw <= -kPi - 1e-12 || st.pose.yaw > kPi + 1e-12)
        fail("track '" + tr.id + "' yaw outside (-pi, pi]");
      if (st.speed < 0.0) fail("track '" + tr.id + "' negative speed");
    }
  }
}

ScenarioLog rigid_transform(const ScenarioLog& s, double tx, double ty, double theta) {
  const double c = std::cos(theta), sn = std::sin(theta);
  const auto map = [&](const Vec2& p) -> Vec2 {
    return {c * p.x - sn * p.y + tx, sn * p.x + c * p.y + ty};
  };
  ScenarioLog out = s;
  for (auto& lane : out.lanes)
    for (auto& p : lane) p = map(p);
  for (auto& tr : out.tracks)
    for (auto& st : tr.states) {
      const Vec2 p = map({st.pose.x, st.pose.y});
      st.pose.x = p.x;
      st.pose.y = p.y;
      st.pose.yaw = normalize_angle(st.pose.yaw + theta);
    }
  return out;
}

Profile profile_from_string(const std::string& name) {
  if (name == "straight") return Profile::kStraight;
  if (name == "curve") return Profile::kCurve;
  if (name == "merge") return Profile::kMerge;
  if (name == "intersection") return Profile::kIntersection;
  if (name == "dense_intersection") return Profile::kDenseIntersection;
  throw DataError("unknown profile '" + name + "'");
}

std::string to_string(Profile p) {
  switch (p) {
    case Profile::kStraight: return "straight";
    case Profile::kCurve: return "curve";
    case Profile::kMerge: return "merge";
    case Profile::kIntersection: return "intersection";
    case Profile::kDenseIntersection: return "dense_intersection";
  }
  throw std::invalid_argument("bad profile enum");
}

namespace {

constexpr double kHeadingHoldSpeed = 0.1;  // m/s, below this the heading is held

struct SceneTemplate {
  std::vector<LanePath> paths;
  std::vector<int> target_paths;  // paths the target may be placed on
  Vec2 conflict;                  // shared conflict point; ref arclengths anchor here
  int n_lo = 2, n_hi = 5;         // neighbor count range
};

Polyline straight_line(Vec2 a, Vec2 b, double step) {
  Polyline out;
  const double len = norm(b - a);
  const int n = std::max(2, static_cast<int>(std::ceil(len / step)) + 1);
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    out.push_back(a + t * (b - a));
  }
  return out;
}

// Clockwise or counter-clockwise arc around `center` from angle a0 to a1.
Polyline arc(Vec2 center, double radius, double a0, double a1, int n) {
  Polyline out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = a0 + (a1 - a0) * static_cast<double>(i) / (n - 1);
    out.push_back({center.x + radius * std::cos(t), center.y + radius * std::sin(t)});
  }
  return out;
}

Polyline concat(std::initializer_list<Polyline> parts) {
  Polyline out;
  for (const auto& p : parts)
    for (const auto& v : p) {
      if (!out.empty() && norm(v - out.back()) < 1e-9) continue;
      out.push_back(v);
    }
  return out;
}

Polyline cubic_bezier(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, int n) {
  Polyline out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    const double u = 1.0 - t;
    const double w0 = u * u * u, w1 = 3 * u * u * t, w2 = 3 * u * t * t, w3 = t * t * t;
    out.push_back({w0 * p0.x + w1 * p1.x + w2 * p2.x + w3 * p3.x,
                   w0 * p0.y + w1 * p1.y + w2 * p2.y + w3 * p3.y});
  }
  return out;
}

SceneTemplate make_template(Profile profile, Rng& rng) {
  SceneTemplate t;
  switch (profile) {
    case Profile::kStraight: {
      for (int i = 0; i < 3; ++i)
        t.paths.emplace_back(straight_line({-150, 3.5 * i}, {150, 3.5 * i}, 10.0));
      t.target_paths = {0, 1, 2};
      t.conflict = {0, 3.5};
      t.n_lo = 2;
      t.n_hi = 5;
      break;
    }
    case Profile::kCurve: {
      const double radius = rng.uniform(60.0, 90.0);
      const Vec2 center{0.0, radius};
      // theta measured from straight-down; theta=0 puts the lane through the
      // origin heading +x.
      const double span = 100.0 / radius;  // +-100 m of arc
      for (int i = 0; i < 2; ++i)
        t.paths.emplace_back(
            arc(center, radius + 3.5 * i, -kPi / 2 - span, -kPi / 2 + span, 48));
      t.target_paths = {0, 1};
      t.conflict = {0, 0};
      t.n_lo = 2;
      t.n_hi = 5;
      break;
    }
    case Profile::kMerge: {
      t.paths.emplace_back(straight_line({-160, 0}, {160, 0}, 10.0));
      t.paths.emplace_back(concat({
          straight_line({-160, -22}, {-60, -22}, 10.0),
          cubic_bezier({-60, -22}, {-25, -22}, {-10, 0}, {20, 0}, 20),
          straight_line({20, 0}, {160, 0}, 10.0),
      }));
      t.target_paths = {0, 1};
      t.conflict = {10, 0};
      t.n_lo = 2;
      t.n_hi = 6;
      break;
    }
    case Profile::kIntersection:
    case Profile::kDenseIntersection: {
      // Four through lanes crossing at the origin plus two protected turns.
      t.paths.emplace_back(straight_line({-150, 0}, {150, 0}, 10.0));      // eastbound
      t.paths.emplace_back(straight_line({150, 3.5}, {-150, 3.5}, 10.0));  // westbound
      t.paths.emplace_back(straight_line({3.5, -150}, {3.5, 150}, 10.0));  // northbound
      t.paths.emplace_back(straight_line({0, 150}, {0, -150}, 10.0));      // southbound
      // eastbound -> northbound left turn, radius 14
      t.paths.emplace_back(concat({
          straight_line({-150, 0}, {-10.5, 0}, 10.0),
          arc({-10.5, 14.0}, 14.0, -kPi / 2, 0.0, 14),
          straight_line({3.5, 14.0}, {3.5, 150}, 10.0),
      }));
      // westbound -> southbound left turn, radius 14
      t.paths.emplace_back(concat({
          straight_line({150, 3.5}, {-14, 3.5}, 10.0),
          arc({-14.0, -10.5}, 14.0, kPi / 2, 0.0, 14),
          straight_line({0, -10.5}, {0, -150}, 10.0),
      }));
      t.target_paths = {0, 2, 4, 5};
      t.conflict = {1.75, 1.75};
      if (profile == Profile::kDenseIntersection) {
        t.n_lo = 6;
        t.n_hi = 12;
      } else {
        t.n_lo = 2;
        t.n_hi = 8;
      }
      break;
    }
  }
  return t;
}

struct TrackPlan {
  int path = 0;
  std::vector<AgentState> states;
  double length = 4.6, width = 2.0;
};

// Samples a lane-following track anchored so the agent passes the path's
// conflict arclength at tick `anchor_tick`. Returns nothing if the motion
// would run off either end of the path.
std::optional<std::vector<AgentState>> sample_track(Rng& rng, const LanePath& path,
                                                    double ref_arclength, int anchor_tick,
                                                    const GeneratorConfig& cfg) {
  const int total = cfg.history_len + 1 + cfg.future_len;
  const int anchor = cfg.history_len + anchor_tick;
  const double va = rng.uniform(cfg.speed_lo, cfg.speed_hi);
  const double vb = std::clamp(va + rng.uniform(-2.5, 2.5), 3.0, cfg.speed_hi + 1.0);
  const double amp = rng.uniform(0.0, cfg.wobble_max);
  const double period = rng.uniform(6.0, 16.0);  // s
  const double phase = rng.uniform(0.0, kTwoPi);

  std::vector<double> speed(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k)
    speed[static_cast<std::size_t>(k)] = va + (vb - va) * static_cast<double>(k) / (total - 1);

  std::vector<double> s(static_cast<std::size_t>(total));
  s[static_cast<std::size_t>(anchor)] = ref_arclength;
  for (int k = anchor + 1; k < total; ++k)
    s[static_cast<std::size_t>(k)] =
        s[static_cast<std::size_t>(k - 1)] + speed[static_cast<std::size_t>(k - 1)] * cfg.dt;
  for (int k = anchor - 1; k >= 0; --k)
    s[static_cast<std::size_t>(k)] =
        s[static_cast<std::size_t>(k + 1)] - speed[static_cast<std::size_t>(k)] * cfg.dt;

  for (double sk : s)
    if (sk < 1.0 || sk > path.length() - 1.0) return std::nullopt;

  std::vector<Vec2> pos(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k) {
    const double sk = s[static_cast<std::size_t>(k)];
    const Vec2 tan = path.tangent_at(sk);
    const Vec2 nrm{-tan.y, tan.x};
    const double lat = amp * std::sin(kTwoPi * (k * cfg.dt) / period + phase);
    pos[static_cast<std::size_t>(k)] = path.point_at(sk) + lat * nrm;
  }

  std::vector<AgentState> states(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k) {
    auto& st = states[static_cast<std::size_t>(k)];
    st.pose.x = pos[static_cast<std::size_t>(k)].x;
    st.pose.y = pos[static_cast<std::size_t>(k)].y;
    if (k == 0) {
      st.pose.yaw = normalize_angle(path.heading_at(s[0]));
      st.speed = speed[0];
    } else {
      const Vec2 d = pos[static_cast<std::size_t>(k)] - pos[static_cast<std::size_t>(k - 1)];
      st.speed = norm(d) / cfg.dt;
      st.pose.yaw = st.speed >= kHeadingHoldSpeed
                        ? normalize_angle(std::atan2(d.y, d.x))
                        : states[static_cast<std::size_t>(k - 1)].pose.yaw;
    }
  }
  return states;
}

bool tracks_clear(const AgentTrack& a, const AgentTrack& b, double clearance) {
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    if (obb_margin(a.box_at(static_cast<int>(k)), b.box_at(static_cast<int>(k))) >= -clearance)
      return false;
  }
  return true;
}

}  // namespace

ScenarioLog generate_scenario(Profile profile, const GeneratorConfig& cfg, std::uint64_t seed,
                              int index) {
  for (int scene_try = 0; scene_try < cfg.scene_tries; ++scene_try) {
    Rng rng(Rng::mix(Rng::mix(seed, static_cast<std::uint64_t>(index)),
                     static_cast<std::uint64_t>(scene_try)));
    SceneTemplate tmpl = make_template(profile, rng);

    std::vector<double> refs;
    refs.reserve(tmpl.paths.size());
    for (const auto& p : tmpl.paths)
      refs.push_back(distance_to_polyline(tmpl.conflict, p.points()).arclength);

    ScenarioLog log;
    log.dt = cfg.dt;
    log.history_len = cfg.history_len;
    log.future_len = cfg.future_len;
    log.lane_half_width = cfg.lane_half_width;
    log.target_index = 0;
    for (const auto& p : tmpl.paths) log.lanes.push_back(p.points());

    // Target first: anchored to cross the conflict zone mid-future so the
    // interesting interactions happen inside the prediction horizon.
    const int tpath =
        tmpl.target_paths[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tmpl.target_paths.size()) - 1))];
    const int target_tc = static_cast<int>(rng.uniform_int(2, 9));
    auto target_states = sample_track(rng, tmpl.paths[static_cast<std::size_t>(tpath)],
                                      refs[static_cast<std::size_t>(tpath)], target_tc, cfg);
    if (!target_states) continue;
    AgentTrack target;
    target.id = "target";
    target.length = rng.uniform(4.2, 5.0);
    target.width = rng.uniform(1.8, 2.1);
    target.states = std::move(*target_states);
    log.tracks.push_back(std::move(target));

    const int n = static_cast<int>(rng.uniform_int(tmpl.n_lo, tmpl.n_hi));
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool placed = false;
      for (int a_try = 0; a_try < cfg.agent_tries && !placed; ++a_try) {
        const int path =
            static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(tmpl.paths.size()) - 1));
        const int tc =
            std::clamp(target_tc + static_cast<int>(rng.uniform_int(-6, 6)), -3, cfg.future_len - 1);
        auto states = sample_track(rng, tmpl.paths[static_cast<std::size_t>(path)],
                                   refs[static_cast<std::size_t>(path)], tc, cfg);
        if (!states) continue;
        AgentTrack cand;
        cand.id = "agent" + std::to_string(i + 1);
        cand.length = rng.uniform(4.2, 5.0);
        cand.width = rng.uniform(1.8, 2.1);
        cand.states = std::move(*states);
        bool clear = true;
        for (const auto& other : log.tracks)
          if (!tracks_clear(cand, other, cfg.clearance)) {
            clear = false;
            break;
          }
        if (!clear) continue;
        log.tracks.push_back(std::move(cand));
        placed = true;
      }
      if (!placed) ok = false;
    }
    if (!ok) continue;

    // Target future must stay on-road (wobble is well inside the half-width,
    // but the check guards template mistakes).
    bool onroad = true;
    for (const auto& p : log.target_future())
      if (is_offroad(p, log.lanes, log.lane_half_width)) {
        onroad = false;
        break;
      }
    if (!onroad) continue;

    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s-s%llu-%05d", to_string(profile).c_str(),
                  static_cast<unsigned long long>(seed), index);
    log.id = buf;
    validate_scenario(log);
    return log;
  }
  throw GenerationError("generation for profile '" + to_string(profile) +
                        "' exhausted retries (seed " + std::to_string(seed) + ", index " +
                        std::to_string(index) + ")");
}

std::vector<ScenarioLog> generate_corpus(Profile profile, const GeneratorConfig& cfg,
                                         std::uint64_t seed, int count) {
  std::vector<ScenarioLog> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_scenario(profile, cfg, seed, i));
  return out;
}

namespace {

json state_to_json(const AgentState& s) {
  return json::array({s.pose.x, s.pose.y, s.pose.yaw, s.speed});
}

json scenario_to_json(const ScenarioLog& s) {
  json j;
  j["record"] = "scenario";
  j["id"] = s.id;
  j["target_index"] = s.target_index;
  json lanes = json::array();
  for (const auto& lane : s.lanes) {
    json pts = json::array();
    for (const auto& p : lane) pts.push_back(json::array({p.x, p.y}));
    lanes.push_back(std::move(pts));
  }
  j["lanes"] = std::move(lanes);
  json tracks = json::array();
  for (const auto& tr : s.tracks) {
    json t;
    t["id"] = tr.id;
    t["length"] = tr.length;
    t["width"] = tr.width;
    json states = json::array();
    for (const auto& st : tr.states) states.push_back(state_to_json(st));
    t["states"] = std::move(states);
    tracks.push_back(std::move(t));
  }
  j["tracks"] = std::move(tracks);
  return j;
}

double require_number(const json& j, const char* field, const std::string& where) {
  if (!j.contains(field))
    throw DataError(where + ": missing field '" + std::string(field) + "'");
  if (!j[field].is_number())
    throw DataError(where + ": field '" + std::string(field) + "' must be a number");
  return j[field].get<double>();
}

}  // namespace

void save_corpus(const std::filesystem::path& path, const std::vector<ScenarioLog>& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  if (corpus.empty()) return;  // empty corpus round-trips to an empty file
  const ScenarioLog& first = corpus.front();
  for (const auto& s : corpus)
    if (s.dt != first.dt || s.history_len != first.history_len ||
        s.future_len != first.future_len || s.lane_half_width != first.lane_half_width)
      throw DataError("corpus mixes scenario timebases; split it into separate files");
  json header;
  header["record"] = "header";
  header["format_version"] = kScenarioFormatVersion;
  header["dt"] = first.dt;
  header["history_len"] = first.history_len;
  header["future_len"] = first.future_len;
  header["lane_half_width"] = first.lane_half_width;
  out << header.dump() << "\n";
  for (const auto& s : corpus) out << scenario_to_json(s).dump() << "\n";
}

std::vector<ScenarioLog> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenario file '" + path.string() + "'");
  std::string line;
  std::vector<ScenarioLog> out;
  int line_no = 0;
  double dt = 0.0, half_width = 0.0;
  int history_len = 0, future_len = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.filename().string() + " line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    const std::string record = j.value("record", "");
    if (!have_header) {
      if (record != "header") throw DataError(where + ": expected header record first");
      if (!j.contains("format_version"))
        throw DataError(where + ": missing field 'format_version'");
      const int version = j["format_version"].get<int>();
      if (version != kScenarioFormatVersion)
        throw DataError(where + ": unsupported format_version " + std::to_string(version) +
                        " (expected " + std::to_string(kScenarioFormatVersion) + ")");
      dt = require_number(j, "dt", where);
      history_len = static_cast<int>(require_number(j, "history_len", where));
      future_len = static_cast<int>(require_number(j, "future_len", where));
      half_width = require_number(j, "lane_half_width", where);
      have_header = true;
      continue;
    }
    if (record != "scenario") throw DataError(where + ": unknown record '" + record + "'");
    ScenarioLog s;
    s.dt = dt;
    s.history_len = history_len;
    s.future_len = future_len;
    s.lane_half_width = half_width;
    try {
      s.id = j.at("id").get<std::string>();
      s.target_index = j.at("target_index").get<int>();
      for (const auto& lane : j.at("lanes")) {
        Polyline pl;
        for (const auto& p : lane) pl.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        s.lanes.push_back(std::move(pl));
      }
      for (const auto& t : j.at("tracks")) {
        AgentTrack tr;
        tr.id = t.at("id").get<std::string>();
        tr.length = t.at("length").get<double>();
        tr.width = t.at("width").get<double>();
        for (const auto& st : t.at("states")) {
          AgentState a;
          a.pose.x = st.at(0).get<double>();
          a.pose.y = st.at(1).get<double>();
          a.pose.yaw = st.at(2).get<double>();
          a.speed = st.at(3).get<double>();
          tr.states.push_back(a);
        }
        s.tracks.push_back(std::move(tr));
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    try {
      validate_scenario(s);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace replan
