#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "replan/scalar.hpp"

namespace replan {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

template <class S>
struct Vec2T {
  S x, y;
};
using Vec2 = Vec2T<double>;

// Planar pose; yaw normalised to (-pi, pi].
template <class S>
struct PoseT {
  S x, y, yaw;
};
using Pose2D = PoseT<double>;

// Body-frame increment for one tick: forward/left displacement plus yaw change.
template <class S>
struct DeltaT {
  S dx, dy, dyaw;
};
using Delta = DeltaT<double>;

struct OrientedBox {
  Vec2 center;
  double length;  // m, along yaw
  double width;   // m, across yaw
  double yaw;     // rad
};

using Polyline = std::vector<Vec2>;

inline double norm(const Vec2& v) { return std::hypot(v.x, v.y); }
inline Vec2 operator+(const Vec2& a, const Vec2& b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, const Vec2& a) { return {s * a.x, s * a.y}; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

// Wraps to (-pi, pi]. Exact IEEE remainder keeps the mapping bit-stable.
inline double normalize_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("normalize_angle: non-finite angle");
  double r = std::remainder(a, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  return r;
}

// Scalar-generic wrap: subtracts the value-level multiple of 2*pi as a lifted
// constant, so the derivative through the wrap is exactly 1 and the wrapped
// value is continuous across the branch (mod the circle).
template <class S, class Ops>
S normalize_angle_s(S a, const Ops& ops) {
  const double k = std::nearbyint(to_value(a) / kTwoPi);
  S r = (k == 0.0) ? a : a + ops.lift(-k * kTwoPi);
  if (to_value(r) <= -kPi) r = r + ops.lift(kTwoPi);
  return r;
}

// Rotate v by angle (counter-clockwise).
template <class S>
Vec2T<S> rotate(const Vec2T<S>& v, const S& c, const S& s) {
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// World pose of a body-frame delta applied to `pose`: translate by the delta
// rotated into the world, then turn.
template <class S, class Ops>
PoseT<S> apply_delta_s(const PoseT<S>& pose, const DeltaT<S>& d, const Ops& ops) {
  const S c = cos(pose.yaw);
  const S s = sin(pose.yaw);
  const Vec2T<S> w = rotate(Vec2T<S>{d.dx, d.dy}, c, s);
  return {pose.x + w.x, pose.y + w.y, normalize_angle_s<S>(pose.yaw + d.dyaw, ops)};
}

// Double-precision entry point with input validation.
Pose2D apply_delta(const Pose2D& pose, const Delta& d);

// Converts a world-frame waypoint chain into per-tick body-frame deltas such
// that re-applying them reproduces the waypoint positions (to roundoff).
// Heading update: a tick slower than v_min holds the previous heading (the
// displacement direction is noise at standstill); otherwise the new heading
// is the displacement direction. The speed gate reads plain values only, so
// both scalar instantiations take identical branches.
template <class S, class Ops>
std::vector<DeltaT<S>> waypoints_to_deltas_s(const PoseT<S>& start,
                                             std::span<const Vec2T<S>> waypoints, double dt,
                                             double v_min, const Ops& ops) {
  if (dt <= 0.0) throw std::invalid_argument("waypoints_to_deltas: dt must be positive");
  std::vector<DeltaT<S>> out;
  out.reserve(waypoints.size());
  S px = start.x, py = start.y, pyaw = start.yaw;
  for (const auto& wp : waypoints) {
    const S gx = wp.x - px;
    const S gy = wp.y - py;
    const double speed = std::hypot(to_value(gx), to_value(gy)) / dt;
    S heading = pyaw;
    if (speed >= v_min) heading = atan2(gy, gx);
    const S c = cos(pyaw);
    const S s = sin(pyaw);
    // world->body rotation of the displacement
    const S dx = c * gx + s * gy;
    const S dy = c * gy - s * gx;
    const S dyaw = heading - pyaw;
    out.push_back({dx, dy, dyaw});
    px = wp.x;
    py = wp.y;
    pyaw = normalize_angle_s<S>(heading, ops);
  }
  return out;
}

std::vector<Delta> waypoints_to_deltas(const Pose2D& start, std::span<const Vec2> waypoints,
                                       double dt, double v_min);

// Separating-axis test over both boxes' axes. Touching edges/corners count
// as overlap (the projection comparison is strict on the separation side).
bool obb_overlap(const OrientedBox& a, const OrientedBox& b);

// Signed SAT margin: > 0 penetration depth proxy (overlap), < 0 distance
// proxy along the most separating axis, == 0 exactly touching. Used by tests
// to exclude marginal cases from sampling comparisons.
double obb_margin(const OrientedBox& a, const OrientedBox& b);

struct PolylineHit {
  double distance;   // m, to the nearest point on the polyline
  double arclength;  // m, along the polyline at the nearest point
  Vec2 point;        // the nearest point itself
};

// Exhaustive per-segment scan; ties resolve to the smaller arclength.
PolylineHit distance_to_polyline(const Vec2& p, const Polyline& line);

// A point is on-road if some lane centerline is within half_width of it
// (boundary inclusive: distance == half_width is on-road).
bool is_offroad(const Vec2& p, std::span<const Polyline> lanes, double half_width);

// Arclength-parameterised polyline: point/tangent lookup used by the
// generator and by lane feature resampling.
class LanePath {
 public:
  explicit LanePath(Polyline pts);

  double length() const { return cum_.back(); }
  const Polyline& points() const { return pts_; }

  Vec2 point_at(double s) const;     // clamped to [0, length]
  Vec2 tangent_at(double s) const;   // unit tangent of the containing segment
  double heading_at(double s) const;

 private:
  std::size_t segment_index(double s) const;

  Polyline pts_;
  std::vector<double> cum_;
};

}  // namespace replan
