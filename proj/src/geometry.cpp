#include "replan/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace replan {

Pose2D apply_delta(const Pose2D& pose, const Delta& d) {
  for (double v : {pose.x, pose.y, pose.yaw, d.dx, d.dy, d.dyaw})
    if (!std::isfinite(v)) throw std::invalid_argument("apply_delta: non-finite input");
  return apply_delta_s<double>(pose, d, DoubleOps{});
}

std::vector<Delta> waypoints_to_deltas(const Pose2D& start, std::span<const Vec2> waypoints,
                                       double dt, double v_min) {
  for (double v : {start.x, start.y, start.yaw})
    if (!std::isfinite(v)) throw std::invalid_argument("waypoints_to_deltas: non-finite pose");
  for (const auto& wp : waypoints)
    if (!std::isfinite(wp.x) || !std::isfinite(wp.y))
      throw std::invalid_argument("waypoints_to_deltas: non-finite waypoint");
  return waypoints_to_deltas_s<double>(start, waypoints, dt, v_min, DoubleOps{});
}

namespace {

struct BoxFrame {
  Vec2 ax, ay;  // unit axes
  double hl, hw;
};

BoxFrame frame_of(const OrientedBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {{c, s}, {-s, c}, 0.5 * b.length, 0.5 * b.width};
}

// Signed clearance along one axis: negative means the projections overlap.
double axis_separation(const Vec2& axis, const Vec2& d, const BoxFrame& a, const BoxFrame& b) {
  const double dist = std::fabs(dot(d, axis));
  const double ra = a.hl * std::fabs(dot(a.ax, axis)) + a.hw * std::fabs(dot(a.ay, axis));
  const double rb = b.hl * std::fabs(dot(b.ax, axis)) + b.hw * std::fabs(dot(b.ay, axis));
  return dist - (ra + rb);
}

}  // namespace

double obb_margin(const OrientedBox& a, const OrientedBox& b) {
  if (a.length < 0 || a.width < 0 || b.length < 0 || b.width < 0)
    throw std::invalid_argument("obb: negative extent");
  const BoxFrame fa = frame_of(a), fb = frame_of(b);
  const Vec2 d = b.center - a.center;
  const Vec2 axes[4] = {fa.ax, fa.ay, fb.ax, fb.ay};
  // SAT: separated iff some axis has positive clearance. The signed margin is
  // the max clearance over axes; negated it is the min penetration depth.
  double max_sep = -std::numeric_limits<double>::infinity();
  for (const auto& axis : axes) max_sep = std::max(max_sep, axis_separation(axis, d, fa, fb));
  return -max_sep;
}

bool obb_overlap(const OrientedBox& a, const OrientedBox& b) { return obb_margin(a, b) >= 0.0; }

PolylineHit distance_to_polyline(const Vec2& p, const Polyline& line) {
  if (line.size() < 2) throw std::invalid_argument("polyline needs at least 2 points");
  PolylineHit best{std::numeric_limits<double>::infinity(), 0.0, line.front()};
  double arc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 a = line[i], b = line[i + 1];
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    const Vec2 q = a + t * ab;
    const double d = norm(p - q);
    const double seg_len = std::sqrt(len2);
    if (d < best.distance) best = {d, arc + t * seg_len, q};  // strict: ties keep lower arclength
    arc += seg_len;
  }
  return best;
}

bool is_offroad(const Vec2& p, std::span<const Polyline> lanes, double half_width) {
  if (lanes.empty()) throw std::invalid_argument("is_offroad: no lanes");
  double min_d = std::numeric_limits<double>::infinity();
  for (const auto& lane : lanes) min_d = std::min(min_d, distance_to_polyline(p, lane).distance);
  return min_d - half_width > 0.0;  // boundary counts as on-road
}

LanePath::LanePath(Polyline pts) : pts_(std::move(pts)) {
  if (pts_.size() < 2) throw std::invalid_argument("lane path needs at least 2 points");
  cum_.reserve(pts_.size());
  cum_.push_back(0.0);
  for (std::size_t i = 1; i < pts_.size(); ++i) {
    const double d = norm(pts_[i] - pts_[i - 1]);
    if (d <= 0.0) throw std::invalid_argument("lane path has duplicate consecutive points");
    cum_.push_back(cum_.back() + d);
  }
}

std::size_t LanePath::segment_index(double s) const {
  // last segment whose start arclength is <= s
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
  const auto idx = static_cast<std::size_t>(it - cum_.begin());
  if (idx == 0) return 0;
  return std::min(idx - 1, pts_.size() - 2);
}

Vec2 LanePath::point_at(double s) const {
  const double sc = std::clamp(s, 0.0, length());
  const std::size_t i = segment_index(sc);
  const double seg = cum_[i + 1] - cum_[i];
  const double t = (sc - cum_[i]) / seg;
  return pts_[i] + t * (pts_[i + 1] - pts_[i]);
}

Vec2 LanePath::tangent_at(double s) const {
  const double sc = std::clamp(s, 0.0, length());
  const std::size_t i = segment_index(sc);
  const Vec2 d = pts_[i + 1] - pts_[i];
  const double n = norm(d);
  return {d.x / n, d.y / n};
}

double LanePath::heading_at(double s) const {
  const Vec2 t = tangent_at(s);
  return std::atan2(t.y, t.x);
}

}  // namespace replan
