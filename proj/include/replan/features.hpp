#pragma once

#include <algorithm>
#include <vector>

#include "replan/scalar.hpp"
#include "replan/scenario.hpp"

namespace replan {

struct FeatureConfig {
  int k_hist = 4;         // history displacement vectors
  int lane_points = 10;   // nearest resampled lane points kept
  int n_near = 8;         // nearest neighbors kept
  double lane_sample_spacing = 5.0;  // m

  // [k_hist displacements | lane_points x (offset, tangent) | n_near x (relpos, relvel)]
  int dim() const { return 2 * k_hist + 4 * lane_points + 4 * n_near; }
};

// Per-scene precomputation shared by every feature build: lane centerlines
// resampled at fixed arclength spacing (endpoints included).
struct SceneCache {
  struct LaneSample {
    Vec2 point;
    Vec2 tangent;
    int lane;
    int index;
  };
  std::vector<LaneSample> lane_samples;

  static SceneCache build(const ScenarioLog& scene, const FeatureConfig& fc) {
    SceneCache cache;
    for (std::size_t li = 0; li < scene.lanes.size(); ++li) {
      const LanePath path(scene.lanes[li]);
      const int n = std::max(2, static_cast<int>(path.length() / fc.lane_sample_spacing) + 1);
      for (int i = 0; i < n; ++i) {
        const double s = std::min(path.length(), i * fc.lane_sample_spacing);
        cache.lane_samples.push_back(
            {path.point_at(s), path.tangent_at(s), static_cast<int>(li), i});
      }
    }
    return cache;
  }
};

// Fixed input scaling keeping each feature family roughly O(1) so the tanh
// trunk operates away from saturation: per-tick displacements span a few
// meters, lane offsets a few tens of meters, neighbor offsets up to ~50 m,
// relative speeds ~10 m/s. Constants, not statistics: the same divisor is
// applied to every scene, so determinism and frame invariance are untouched.
inline constexpr double kHistDispScale = 1.0 / 5.0;
inline constexpr double kLaneOffsetScale = 1.0 / 20.0;
inline constexpr double kNeighborPosScale = 1.0 / 50.0;
inline constexpr double kNeighborVelScale = 1.0 / 10.0;

// The predicting agent's carried state as seen by the feature builder: world
// pose, the k_hist+1 most recent positions (oldest first, last == current),
// and the current velocity vector. Under the differentiable wiring these are
// tape values carrying gradient paths back into earlier execution steps.
template <class S>
struct TargetViewT {
  PoseT<S> pose;
  std::vector<Vec2T<S>> recent;
  Vec2T<S> vel;
};
using TargetView = TargetViewT<double>;

// Target-centric feature vector for a prediction query at `tick`. Neighbor
// state comes from the log at that tick (neighbors replay the log exactly);
// everything is expressed in the frame of `view.pose`. Selection decisions
// (nearest lanes/neighbors) read plain values only, so both scalar
// instantiations pick identical elements.
template <class S, class Ops>
std::vector<S> build_features(const ScenarioLog& scene, const SceneCache& cache,
                              const FeatureConfig& fc, const TargetViewT<S>& view, int tick,
                              const Ops& ops) {
  if (static_cast<int>(view.recent.size()) != fc.k_hist + 1)
    throw std::invalid_argument("feature build expects k_hist+1 recent positions");
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(fc.dim()));
  const S c = cos(view.pose.yaw);
  const S s = sin(view.pose.yaw);
  const auto to_frame = [&](const Vec2T<S>& v) -> Vec2T<S> {
    return {c * v.x + s * v.y, c * v.y - s * v.x};
  };
  const S zero = ops.lift(0.0);

  // History: per-tick displacement vectors, oldest first.
  for (int k = 0; k < fc.k_hist; ++k) {
    const auto& a = view.recent[static_cast<std::size_t>(k)];
    const auto& b = view.recent[static_cast<std::size_t>(k + 1)];
    const Vec2T<S> d = to_frame({b.x - a.x, b.y - a.y});
    out.push_back(d.x * kHistDispScale);
    out.push_back(d.y * kHistDispScale);
  }

  // Lanes: nearest resampled points by distance to the query pose, ties by
  // (lane, index); offset + tangent, rotated into the target frame.
  const double px = to_value(view.pose.x), py = to_value(view.pose.y);
  std::vector<std::size_t> order(cache.lane_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto dist2 = [&](const SceneCache::LaneSample& ls) {
    const double dx = ls.point.x - px, dy = ls.point.y - py;
    return dx * dx + dy * dy;
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &la = cache.lane_samples[a], &lb = cache.lane_samples[b];
    const double da = dist2(la), db = dist2(lb);
    if (da != db) return da < db;
    if (la.lane != lb.lane) return la.lane < lb.lane;
    return la.index < lb.index;
  });
  const std::size_t n_lane = std::min<std::size_t>(order.size(), static_cast<std::size_t>(fc.lane_points));
  for (std::size_t i = 0; i < n_lane; ++i) {
    const auto& ls = cache.lane_samples[order[i]];
    const Vec2T<S> off = to_frame({ops.lift(ls.point.x) - view.pose.x,
                                   ops.lift(ls.point.y) - view.pose.y});
    const Vec2T<S> tan = to_frame({ops.lift(ls.tangent.x), ops.lift(ls.tangent.y)});
    out.push_back(off.x * kLaneOffsetScale);
    out.push_back(off.y * kLaneOffsetScale);
    out.push_back(tan.x);  // tangents are unit vectors already
    out.push_back(tan.y);
  }
  for (std::size_t i = n_lane; i < static_cast<std::size_t>(fc.lane_points); ++i)
    for (int k = 0; k < 4; ++k) out.push_back(zero);

  // Neighbors: nearest by current distance, ties by track index; relative
  // position and relative velocity in the target frame. Velocities use
  // logged per-tick displacements.
  struct NeighborRef {
    double d2;
    int track;
  };
  std::vector<NeighborRef> neigh;
  for (int ti = 0; ti < static_cast<int>(scene.tracks.size()); ++ti) {
    if (ti == scene.target_index) continue;
    const AgentState& st = scene.state(ti, tick);
    const double dx = st.pose.x - px, dy = st.pose.y - py;
    neigh.push_back({dx * dx + dy * dy, ti});
  }
  std::sort(neigh.begin(), neigh.end(), [](const NeighborRef& a, const NeighborRef& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    return a.track < b.track;
  });
  const std::size_t n_nb = std::min<std::size_t>(neigh.size(), static_cast<std::size_t>(fc.n_near));
  for (std::size_t i = 0; i < n_nb; ++i) {
    const int ti = neigh[i].track;
    const AgentState& now = scene.state(ti, tick);
    const AgentState& prev = scene.state(ti, tick - 1);
    const Vec2T<S> rel = to_frame({ops.lift(now.pose.x) - view.pose.x,
                                   ops.lift(now.pose.y) - view.pose.y});
    const double vx = (now.pose.x - prev.pose.x) / scene.dt;
    const double vy = (now.pose.y - prev.pose.y) / scene.dt;
    const Vec2T<S> rvel = to_frame({ops.lift(vx) - view.vel.x, ops.lift(vy) - view.vel.y});
    out.push_back(rel.x * kNeighborPosScale);
    out.push_back(rel.y * kNeighborPosScale);
    out.push_back(rvel.x * kNeighborVelScale);
    out.push_back(rvel.y * kNeighborVelScale);
  }
  for (std::size_t i = n_nb; i < static_cast<std::size_t>(fc.n_near); ++i)
    for (int k = 0; k < 4; ++k) out.push_back(zero);

  return out;
}

// View of the target straight from the log at tick 0 (the open-loop query).
// Keeps the k_hist+1 most recent logged positions; k_hist must not exceed
// the scenario's history_len.
template <class S, class Ops>
TargetViewT<S> log_target_view(const ScenarioLog& scene, int k_hist, const Ops& ops) {
  if (k_hist > scene.history_len)
    throw std::invalid_argument("feature history exceeds scenario history_len");
  TargetViewT<S> view;
  const int ti = scene.target_index;
  for (int t = -k_hist; t <= 0; ++t) {
    const AgentState& st = scene.state(ti, t);
    view.recent.push_back({ops.lift(st.pose.x), ops.lift(st.pose.y)});
  }
  const AgentState& now = scene.state(ti, 0);
  const AgentState& prev = scene.state(ti, -1);
  view.pose = {ops.lift(now.pose.x), ops.lift(now.pose.y), ops.lift(now.pose.yaw)};
  view.vel = {ops.lift((now.pose.x - prev.pose.x) / scene.dt),
              ops.lift((now.pose.y - prev.pose.y) / scene.dt)};
  return view;
}

}  // namespace replan
