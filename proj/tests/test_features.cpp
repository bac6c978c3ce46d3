#include <doctest.h>

#include <cmath>
#include <vector>

#include "replan/autodiff.hpp"
#include "replan/features.hpp"
#include "replan/rng.hpp"
#include "replan/scenario.hpp"

using namespace replan;

namespace {

ScenarioLog demo_scene() {
  return generate_scenario(Profile::kIntersection, GeneratorConfig{}, 77, 0);
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("dimension formula and actual vector length agree") {
    const FeatureConfig fc;
    CHECK(fc.dim() == 2 * 4 + 4 * 10 + 4 * 8);
    const auto scene = demo_scene();
    const auto cache = SceneCache::build(scene, fc);
    const auto view = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    const auto f = build_features<double>(scene, cache, fc, view, 0, DoubleOps{});
    CHECK(static_cast<int>(f.size()) == fc.dim());

    FeatureConfig small{2, 1, 0, 5.0};
    CHECK(small.dim() == 8);
    const auto cache2 = SceneCache::build(scene, small);
    const auto view2 = log_target_view<double>(scene, small.k_hist, DoubleOps{});
    CHECK(build_features<double>(scene, cache2, small, view2, 0, DoubleOps{}).size() == 8);
  }

  TEST_CASE("missing neighbors and lane points are zero-padded") {
    auto scene = demo_scene();
    // Strip all neighbors; keep only the target track.
    const AgentTrack target = scene.target();
    scene.tracks = {target};
    scene.target_index = 0;
    FeatureConfig fc;
    fc.n_near = 3;
    const auto cache = SceneCache::build(scene, fc);
    const auto view = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    const auto f = build_features<double>(scene, cache, fc, view, 0, DoubleOps{});
    const int nb_base = 2 * fc.k_hist + 4 * fc.lane_points;
    for (int i = nb_base; i < fc.dim(); ++i) CHECK(f[static_cast<std::size_t>(i)] == 0.0);
  }

  TEST_CASE("history block holds per-tick displacements in the target frame") {
    const auto scene = demo_scene();
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const auto view = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    const auto f = build_features<double>(scene, cache, fc, view, 0, DoubleOps{});
    const double c = std::cos(view.pose.yaw), s = std::sin(view.pose.yaw);
    for (int k = 0; k < fc.k_hist; ++k) {
      const auto& a = view.recent[static_cast<std::size_t>(k)];
      const auto& b = view.recent[static_cast<std::size_t>(k + 1)];
      const double wx = b.x - a.x, wy = b.y - a.y;
      CHECK(f[static_cast<std::size_t>(2 * k)] ==
            doctest::Approx((c * wx + s * wy) * kHistDispScale).epsilon(1e-12));
      CHECK(f[static_cast<std::size_t>(2 * k + 1)] ==
            doctest::Approx((c * wy - s * wx) * kHistDispScale).epsilon(1e-12));
    }
  }

  TEST_CASE("features are invariant under a rigid transform of the world") {
    const auto scene = demo_scene();
    const auto moved = rigid_transform(scene, 17.0, -6.0, 1.2);
    const FeatureConfig fc;
    const auto c1 = SceneCache::build(scene, fc);
    const auto c2 = SceneCache::build(moved, fc);
    const auto v1 = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    const auto v2 = log_target_view<double>(moved, fc.k_hist, DoubleOps{});
    const auto f1 = build_features<double>(scene, c1, fc, v1, 0, DoubleOps{});
    const auto f2 = build_features<double>(moved, c2, fc, v2, 0, DoubleOps{});
    REQUIRE(f1.size() == f2.size());
    for (std::size_t i = 0; i < f1.size(); ++i)
      CHECK(f1[i] == doctest::Approx(f2[i]).epsilon(1e-9).scale(1.0));
  }

  TEST_CASE("lane selection prefers the nearest samples with deterministic ties") {
    // Hand-built scene: two parallel lanes; the target sits on lane 0, so all
    // chosen samples must come from it before any lane-1 sample appears.
    ScenarioLog s;
    s.dt = 0.5;
    s.history_len = 2;
    s.future_len = 2;
    s.lane_half_width = 2.0;
    s.target_index = 0;
    s.lanes = {{{-20, 0}, {20, 0}}, {{-20, 8}, {20, 8}}};
    AgentTrack tr;
    tr.id = "t";
    for (int i = 0; i < 5; ++i) {
      const double x = -1.0 + 1.0 * i;
      tr.states.push_back({{x, 0.0, 0.0}, 2.0});
    }
    s.tracks = {tr};
    // 3 lane points: the 4th-nearest sample would already be on lane 1
    // (lateral distance 8 beats lane 0's next sample at distance 9).
    FeatureConfig fc{2, 3, 0, 5.0};
    const auto cache = SceneCache::build(s, fc);
    const auto view = log_target_view<double>(s, fc.k_hist, DoubleOps{});
    const auto f = build_features<double>(s, cache, fc, view, 0, DoubleOps{});
    // Lane offsets live at [2*k_hist + 4i, +1]; all should be near-zero
    // lateral (lane 0 is at offset 0; lane 1 would show a scaled offset of 8).
    for (int i = 0; i < fc.lane_points; ++i) {
      const double off_y = f[static_cast<std::size_t>(2 * fc.k_hist + 4 * i + 1)];
      CHECK(std::fabs(off_y) < 1.0 * kLaneOffsetScale);
      const double tan_x = f[static_cast<std::size_t>(2 * fc.k_hist + 4 * i + 2)];
      CHECK(tan_x == doctest::Approx(1.0).epsilon(1e-12));  // lane runs along +x
    }
  }

  TEST_CASE("neighbor ordering is by distance with track-index tie-break") {
    ScenarioLog s;
    s.dt = 0.5;
    s.history_len = 1;
    s.future_len = 1;
    s.lane_half_width = 2.0;
    s.target_index = 0;
    s.lanes = {{{-20, 0}, {20, 0}}};
    auto mk = [](double x, double y) {
      AgentTrack tr;
      for (int i = 0; i < 3; ++i) tr.states.push_back({{x, y, 0.0}, 0.0});
      return tr;
    };
    s.tracks = {mk(0, 0), mk(6, 0), mk(3, 0), mk(-3, 0)};  // ties at |3| between idx 2 and 3
    s.tracks[0].id = "target";
    FeatureConfig fc{1, 0, 3, 5.0};
    const auto cache = SceneCache::build(s, fc);
    const auto view = log_target_view<double>(s, fc.k_hist, DoubleOps{});
    const auto f = build_features<double>(s, cache, fc, view, 0, DoubleOps{});
    // Neighbor block starts at 2*k_hist; entries are (relx, rely, rvx, rvy).
    // track 2 first (tie: lower index), then track 3, then track 1
    CHECK(f[2] == doctest::Approx(3.0 * kNeighborPosScale).epsilon(1e-12));
    CHECK(f[6] == doctest::Approx(-3.0 * kNeighborPosScale).epsilon(1e-12));
    CHECK(f[10] == doctest::Approx(6.0 * kNeighborPosScale).epsilon(1e-12));
  }

  TEST_CASE("tape instantiation reproduces double values and carries gradients") {
    const auto scene = demo_scene();
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const auto dview = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    const auto fd = build_features<double>(scene, cache, fc, dview, 0, DoubleOps{});

    ad::Tape tape;
    const TapeOps tops{&tape};
    const auto vview = log_target_view<ad::Value>(scene, fc.k_hist, tops);
    const auto fv = build_features<ad::Value>(scene, cache, fc, vview, 0, tops);
    REQUIRE(fd.size() == fv.size());
    for (std::size_t i = 0; i < fd.size(); ++i) CHECK(fd[i] == fv[i].value());

    // The pose is an input; lane offsets must push gradient back into it.
    const std::size_t lane0 = static_cast<std::size_t>(2 * fc.k_hist);
    tape.backward(fv[lane0]);
    const double gx = vview.pose.x.grad();
    const double gy = vview.pose.y.grad();
    CHECK((std::fabs(gx) + std::fabs(gy)) > 1e-9);
  }

  TEST_CASE("recent-window length is validated") {
    const auto scene = demo_scene();
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    auto view = log_target_view<double>(scene, fc.k_hist, DoubleOps{});
    view.recent.pop_back();
    CHECK_THROWS_AS((void)build_features<double>(scene, cache, fc, view, 0, DoubleOps{}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)log_target_view<double>(scene, scene.history_len + 1, DoubleOps{}),
                    std::invalid_argument);
  }
}
