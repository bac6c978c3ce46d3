#include <doctest.h>

#include <cmath>
#include <vector>

#include "replan/rng.hpp"
#include "replan/simulator.hpp"
#include "replan/training.hpp"

using namespace replan;

namespace {

ScenarioLog demo_scene(std::uint64_t seed = 101, Profile p = Profile::kIntersection) {
  return generate_scenario(p, GeneratorConfig{}, seed, 0);
}

PredictorParams jittered_params(const ModelConfig& mc, std::uint64_t seed) {
  auto params = init_params(mc, seed);
  Rng rng(Rng::mix(seed, 17));
  for (auto& v : params.flat) v += rng.uniform(-0.08, 0.08);
  return params;
}

// Oracle predictor: mode 0 is the exact ground-truth future in the query
// frame, the rest are shifted copies. Fixed probabilities and scale.
template <class S, class Ops>
PredictorFnT<S, Ops> gt_oracle(int num_modes, double scale_b) {
  return [num_modes, scale_b](std::span<const S>, int horizon,
                              const StepContextT<S, Ops>& ctx) {
    const auto& view = *ctx.view;
    const auto& scene = *ctx.scene;
    const Ops& ops = *ctx.ops;
    const S c = cos(view.pose.yaw);
    const S s = sin(view.pose.yaw);
    PredictionT<S> pred;
    for (int m = 0; m < num_modes; ++m) {
      std::vector<Vec2T<S>> wp;
      for (int t = 1; t <= horizon; ++t) {
        const AgentState& g = scene.state(scene.target_index, ctx.query_tick + t);
        const S rx = ops.lift(g.pose.x + 10.0 * m) - view.pose.x;
        const S ry = ops.lift(g.pose.y) - view.pose.y;
        wp.push_back({c * rx + s * ry, c * ry - s * rx});
      }
      pred.modes.push_back(std::move(wp));
    }
    for (int m = 0; m < num_modes; ++m)
      pred.probs.push_back(ops.lift(m == 0 ? 0.5 : 0.5 / (num_modes - 1)));
    pred.scale_b = ops.lift(scale_b);
    return pred;
  };
}

}  // namespace

TEST_SUITE("simulator") {
  TEST_CASE("sample_count is the ceiling of h_pred over h_step") {
    RolloutConfig rc;
    rc.h_pred = 12;
    rc.h_step = 12;
    CHECK(rc.sample_count() == 1);
    rc.h_step = 4;
    CHECK(rc.sample_count() == 3);
    rc.h_step = 5;
    CHECK(rc.sample_count() == 3);
    rc.h_step = 1;
    CHECK(rc.sample_count() == 12);
  }

  TEST_CASE("constructor rejects inconsistent configurations") {
    const auto scene = demo_scene();
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    ModelConfig mc;
    const auto params = init_params(mc, 1);
    RolloutConfig rc;

    auto make = [&](const RolloutConfig& r) {
      return RolloutEngineT<double, DoubleOps>(scene, cache, mc, fc, params.flat, r, DoubleOps{});
    };
    rc.h_step = 0;
    CHECK_THROWS_AS(make(rc), std::invalid_argument);
    rc.h_step = 13;
    CHECK_THROWS_AS(make(rc), std::invalid_argument);
    rc = {};
    rc.h_pred = scene.future_len + 1;
    CHECK_THROWS_AS(make(rc), std::invalid_argument);
    rc = {};
    rc.mode_policy = ModePolicy::kFixedMode;
    rc.fixed_mode = mc.num_modes;
    CHECK_THROWS_AS(make(rc), std::invalid_argument);
    rc = {};
    ModelConfig short_mc = mc;
    short_mc.horizon = 4;  // h_pred 12 exceeds the head
    const auto short_params = init_params(short_mc, 1);
    const auto make_short = [&] {
      return RolloutEngineT<double, DoubleOps>(scene, cache, short_mc, fc, short_params.flat,
                                               rc, DoubleOps{});
    };
    CHECK_THROWS_AS(make_short(), std::invalid_argument);
  }

  TEST_CASE("a ground-truth oracle is executed back onto the logged track") {
    const auto scene = demo_scene(7);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 8, 3, 12};
    const auto params = init_params(mc, 1);

    for (const int h_step : {12, 4, 1}) {
      for (const Wiring w : {Wiring::kDetached, Wiring::kDifferentiable}) {
        CAPTURE(h_step);
        RolloutConfig rc;
        rc.h_step = h_step;
        rc.wiring = w;
        RolloutEngineT<double, DoubleOps> eng(scene, cache, mc, fc, params.flat, rc, DoubleOps{},
                                              {}, gt_oracle<double, DoubleOps>(3, 0.5));
        const auto trace = eng.run();
        CHECK(static_cast<int>(trace.steps.size()) == rc.sample_count());
        REQUIRE(static_cast<int>(trace.executed_poses.size()) == rc.h_pred);
        for (int t = 1; t <= rc.h_pred; ++t) {
          const auto& got = trace.executed_poses[static_cast<std::size_t>(t - 1)];
          const auto& want = scene.state(scene.target_index, t).pose;
          CHECK(got.x == doctest::Approx(want.x).epsilon(1e-9));
          CHECK(got.y == doctest::Approx(want.y).epsilon(1e-9));
        }
        for (const auto& st : trace.steps) {
          CHECK(st.best == 0);
          CHECK(st.selected_mode == 0);
          // Perfect fit at b = 0.5: every per-tick term is |0|/b + 2 log(1) = 0.
          CHECK(st.reg_loss == doctest::Approx(0.0).epsilon(1e-9));
          CHECK(st.cls_loss == doctest::Approx(-std::log(0.5)).epsilon(1e-12));
        }
        CHECK(trace.first_probs[0] == 0.5);
      }
    }
  }

  TEST_CASE("fixed-mode policy executes the requested mode") {
    const auto scene = demo_scene(8);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 8, 3, 12};
    const auto params = init_params(mc, 1);
    RolloutConfig rc;
    rc.h_step = 4;
    rc.mode_policy = ModePolicy::kFixedMode;
    rc.fixed_mode = 2;
    RolloutEngineT<double, DoubleOps> eng(scene, cache, mc, fc, params.flat, rc, DoubleOps{}, {},
                                          gt_oracle<double, DoubleOps>(3, 0.5));
    const auto trace = eng.run();
    for (const auto& st : trace.steps) {
      CHECK(st.selected_mode == 2);
      CHECK(st.best == 0);  // best-matching is still reported for the loss
    }
    // Mode 2 is the ground truth shifted +20 in x, so the final pose is far
    // from the log.
    const auto& last = trace.executed_poses.back();
    const auto& gt = scene.state(scene.target_index, rc.h_pred).pose;
    CHECK(std::fabs(last.x - gt.x) > 5.0);
  }

  TEST_CASE("double and tape rollouts agree exactly under both wirings") {
    const auto scene = demo_scene(9);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 2);

    for (const Wiring w : {Wiring::kDetached, Wiring::kDifferentiable}) {
      RolloutConfig rc;
      rc.h_step = 4;
      rc.wiring = w;
      RolloutEngineT<double, DoubleOps> de(scene, cache, mc, fc, params.flat, rc, DoubleOps{});
      const auto dt = de.run();

      ad::Tape tape;
      const TapeOps tops{&tape};
      const auto lifted = lift_params(tape, params.flat);
      RolloutEngineT<ad::Value, TapeOps> ve(scene, cache, mc, fc, lifted, rc, tops);
      const auto vt = ve.run();

      REQUIRE(dt.steps.size() == vt.steps.size());
      for (std::size_t i = 0; i < dt.steps.size(); ++i) {
        CHECK(dt.steps[i].selected_mode == vt.steps[i].selected_mode);
        CHECK(dt.steps[i].best == vt.steps[i].best);
        CHECK(dt.steps[i].reg_loss == vt.steps[i].reg_loss.value());
        CHECK(dt.steps[i].cls_loss == vt.steps[i].cls_loss.value());
      }
      REQUIRE(dt.executed_poses.size() == vt.executed_poses.size());
      for (std::size_t i = 0; i < dt.executed_poses.size(); ++i) {
        CHECK(dt.executed_poses[i].x == vt.executed_poses[i].x);
        CHECK(dt.executed_poses[i].y == vt.executed_poses[i].y);
        CHECK(dt.executed_poses[i].yaw == vt.executed_poses[i].yaw);
      }
    }
  }

  TEST_CASE("wirings produce identical values; only gradients differ") {
    const auto scene = demo_scene(10);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 3);
    const auto lambda = lambda_weights(3, LambdaMode::kUniform, 0.5);

    double loss[2];
    std::vector<double> grad[2];
    int wi = 0;
    for (const Wiring w : {Wiring::kDetached, Wiring::kDifferentiable}) {
      RolloutConfig rc;
      rc.h_step = 4;
      rc.wiring = w;
      ad::Tape tape;
      const TapeOps tops{&tape};
      const auto lifted = lift_params(tape, params.flat);
      RolloutEngineT<ad::Value, TapeOps> eng(scene, cache, mc, fc, lifted, rc, tops);
      const auto trace = eng.run();
      const auto obj = objective(trace, lambda);
      loss[wi] = obj.value();
      tape.backward(obj);
      grad[wi].assign(params.flat.size(), 0.0);
      accumulate_param_grads(lifted, grad[wi]);
      ++wi;
    }
    CHECK(loss[0] == loss[1]);  // forward values are wiring-independent
    double diff = 0.0;
    for (std::size_t i = 0; i < grad[0].size(); ++i) diff += std::fabs(grad[0][i] - grad[1][i]);
    CHECK(diff > 1e-8);  // cross-step paths only exist under the differentiable wiring
  }

  TEST_CASE("single-step rollouts make the wirings bitwise indistinguishable") {
    const auto scene = demo_scene(11);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 4);
    const auto lambda = lambda_weights(1, LambdaMode::kUniform, 0.5);

    std::vector<double> grad[2];
    double loss[2];
    int wi = 0;
    for (const Wiring w : {Wiring::kDetached, Wiring::kDifferentiable}) {
      RolloutConfig rc;
      rc.h_step = rc.h_pred;  // one sample covers the horizon
      rc.wiring = w;
      ad::Tape tape;
      const TapeOps tops{&tape};
      const auto lifted = lift_params(tape, params.flat);
      RolloutEngineT<ad::Value, TapeOps> eng(scene, cache, mc, fc, lifted, rc, tops);
      const auto trace = eng.run();
      const auto obj = objective(trace, lambda);
      loss[wi] = obj.value();
      tape.backward(obj);
      grad[wi].assign(params.flat.size(), 0.0);
      accumulate_param_grads(lifted, grad[wi]);
      ++wi;
    }
    CHECK(loss[0] == loss[1]);
    for (std::size_t i = 0; i < grad[0].size(); ++i) CHECK(grad[0][i] == grad[1][i]);
  }

  TEST_CASE("probe gradients: zero when detached, alive when differentiable") {
    const auto scene = demo_scene(12);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 5);
    RolloutConfig base;
    base.h_step = 4;  // 3 samples
    const auto lambda = lambda_weights(base.sample_count(), LambdaMode::kUniform, 0.5);

    for (int step = 0; step < base.sample_count(); ++step) {
      for (const Wiring w : {Wiring::kDetached, Wiring::kDifferentiable}) {
        CAPTURE(step);
        RolloutConfig rc = base;
        rc.wiring = w;
        ad::Tape tape;
        const TapeOps tops{&tape};
        const auto lifted = lift_params(tape, params.flat);
        RolloutProbe probe{step, tape.input(0.0), tape.input(0.0)};
        RolloutHooks hooks;
        hooks.probe = &probe;
        RolloutEngineT<ad::Value, TapeOps> eng(scene, cache, mc, fc, lifted, rc, tops, hooks);
        const auto trace = eng.run();
        const auto obj = objective(trace, lambda);
        tape.backward(obj);
        const double g = std::fabs(probe.dx.grad()) + std::fabs(probe.dy.grad());
        const bool last_step = step == base.sample_count() - 1;
        if (w == Wiring::kDetached || last_step) {
          CHECK(probe.dx.grad() == 0.0);  // exactly zero, not approximately
          CHECK(probe.dy.grad() == 0.0);
        } else {
          CHECK(g > 1e-12);
        }
      }
    }
  }

  TEST_CASE("a zero-valued probe never changes the forward values") {
    const auto scene = demo_scene(13);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 6);
    RolloutConfig rc;
    rc.h_step = 4;
    rc.wiring = Wiring::kDifferentiable;

    ad::Tape t1;
    const auto l1 = lift_params(t1, params.flat);
    RolloutEngineT<ad::Value, TapeOps> plain(scene, cache, mc, fc, l1, rc, TapeOps{&t1});
    const auto trace1 = plain.run();

    ad::Tape t2;
    const auto l2 = lift_params(t2, params.flat);
    RolloutProbe probe{1, t2.input(0.0), t2.input(0.0)};
    RolloutHooks hooks;
    hooks.probe = &probe;
    RolloutEngineT<ad::Value, TapeOps> probed(scene, cache, mc, fc, l2, rc, TapeOps{&t2}, hooks);
    const auto trace2 = probed.run();

    for (std::size_t i = 0; i < trace1.steps.size(); ++i) {
      CHECK(trace1.steps[i].reg_loss.value() == trace2.steps[i].reg_loss.value());
      CHECK(trace1.steps[i].cls_loss.value() == trace2.steps[i].cls_loss.value());
    }
    for (std::size_t i = 0; i < trace1.executed_poses.size(); ++i)
      CHECK(trace1.executed_poses[i].x == trace2.executed_poses[i].x);
  }

  TEST_CASE("recorded pins replay to the identical rollout") {
    const auto scene = demo_scene(14);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 7);
    RolloutConfig rc;
    rc.h_step = 4;

    RolloutPins pins;
    RolloutHooks rec;
    rec.record = &pins;
    RolloutEngineT<double, DoubleOps> base(scene, cache, mc, fc, params.flat, rc, DoubleOps{}, rec);
    const auto bt = base.run();
    REQUIRE(pins.selected_mode.size() == bt.steps.size());
    REQUIRE(pins.carry.size() == bt.steps.size() + 1);

    RolloutHooks replay;
    replay.pins = &pins;
    replay.pin_selection = true;
    replay.pin_carry = true;
    RolloutEngineT<double, DoubleOps> again(scene, cache, mc, fc, params.flat, rc, DoubleOps{},
                                            replay);
    const auto rt = again.run();
    for (std::size_t i = 0; i < bt.steps.size(); ++i) {
      CHECK(bt.steps[i].reg_loss == rt.steps[i].reg_loss);
      CHECK(bt.steps[i].cls_loss == rt.steps[i].cls_loss);
      CHECK(bt.steps[i].selected_mode == rt.steps[i].selected_mode);
    }
  }

  TEST_CASE("refresh_carry restores the view after tape truncation") {
    const auto scene = demo_scene(15);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 8);
    RolloutConfig rc;
    rc.h_step = 4;
    rc.wiring = Wiring::kDetached;

    // Reference: straight run.
    ad::Tape t1;
    const auto l1 = lift_params(t1, params.flat);
    RolloutEngineT<ad::Value, TapeOps> ref(scene, cache, mc, fc, l1, rc, TapeOps{&t1});
    const auto rt = ref.run();

    // Truncating run: after each step, drop everything past the parameters.
    ad::Tape t2;
    const auto l2 = lift_params(t2, params.flat);
    RolloutEngineT<ad::Value, TapeOps> trunc(scene, cache, mc, fc, l2, rc, TapeOps{&t2});
    const auto base_mark = t2.mark();
    std::vector<double> reg, cls;
    while (!trunc.done()) {
      const auto st = trunc.step();
      reg.push_back(st.reg_loss.value());
      cls.push_back(st.cls_loss.value());
      t2.truncate(base_mark);
      trunc.refresh_carry();
    }
    REQUIRE(reg.size() == rt.steps.size());
    for (std::size_t i = 0; i < reg.size(); ++i) {
      CHECK(reg[i] == rt.steps[i].reg_loss.value());
      CHECK(cls[i] == rt.steps[i].cls_loss.value());
    }
    // The tape stays flat at base_mark plus the re-lifted carry constants:
    // pose (3) + recent trail (2 * (k_hist + 1)) + velocity (2).
    const std::size_t carry_nodes = 3 + 2 * (fc.k_hist + 1) + 2;
    CHECK(t2.size() == base_mark + carry_nodes);

    // Differentiable wiring refuses to refresh (the carry holds live nodes).
    RolloutConfig dc = rc;
    dc.wiring = Wiring::kDifferentiable;
    ad::Tape t3;
    const auto l3 = lift_params(t3, params.flat);
    RolloutEngineT<ad::Value, TapeOps> diff(scene, cache, mc, fc, l3, dc, TapeOps{&t3});
    CHECK_THROWS_AS(diff.refresh_carry(), std::logic_error);
  }

  TEST_CASE("non-finite predictions raise RolloutError with the failing step") {
    const auto scene = demo_scene(16);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 8, 3, 12};
    const auto params = init_params(mc, 1);
    RolloutConfig rc;
    rc.h_step = 4;
    PredictorFnT<double, DoubleOps> bomb =
        [](std::span<const double>, int horizon, const StepContextT<double, DoubleOps>& ctx) {
          Prediction pred;
          for (int m = 0; m < 3; ++m) {
            std::vector<Vec2> wp(static_cast<std::size_t>(horizon), Vec2{0.0, 0.0});
            if (ctx.sample == 1) wp[0].x = std::numeric_limits<double>::quiet_NaN();
            pred.modes.push_back(std::move(wp));
          }
          pred.probs = {0.4, 0.3, 0.3};
          pred.scale_b = 1.0;
          return pred;
        };
    RolloutEngineT<double, DoubleOps> eng(scene, cache, mc, fc, params.flat, rc, DoubleOps{}, {},
                                          bomb);
    try {
      (void)eng.run();
      FAIL("expected RolloutError");
    } catch (const RolloutError& e) {
      CHECK(e.step == 1);
      CHECK(e.param_norm >= 0.0);
    }
  }

  TEST_CASE("induced_state integrates executed waypoints like the engine") {
    const auto scene = demo_scene(17);
    const AgentState start = scene.state(scene.target_index, 0);
    std::vector<Vec2> executed;
    Vec2 cur{start.pose.x, start.pose.y};
    Rng rng(18);
    for (int i = 0; i < 4; ++i) {
      cur.x += rng.uniform(0.5, 2.0);
      cur.y += rng.uniform(-0.5, 0.5);
      executed.push_back(cur);
    }
    const AgentState out = induced_state(start, executed, scene.dt, 0.1);
    CHECK(out.pose.x == doctest::Approx(executed.back().x).epsilon(1e-9));
    CHECK(out.pose.y == doctest::Approx(executed.back().y).epsilon(1e-9));
    const double vx = (executed[3].x - executed[2].x) / scene.dt;
    const double vy = (executed[3].y - executed[2].y) / scene.dt;
    CHECK(out.speed == doctest::Approx(std::hypot(vx, vy)).epsilon(1e-9));
  }

  TEST_CASE("replay_neighbors returns everyone but the target, in track order") {
    const auto scene = demo_scene(19);
    const auto nb = replay_neighbors(scene, 3);
    CHECK(nb.size() == scene.tracks.size() - 1);
    std::size_t k = 0;
    for (int ti = 0; ti < static_cast<int>(scene.tracks.size()); ++ti) {
      if (ti == scene.target_index) continue;
      CHECK(nb[k].pose.x == scene.state(ti, 3).pose.x);
      CHECK(nb[k].pose.y == scene.state(ti, 3).pose.y);
      ++k;
    }
  }

  TEST_CASE("rollout_eval runs the double engine end to end") {
    const auto scene = demo_scene(20);
    const FeatureConfig fc;
    const auto cache = SceneCache::build(scene, fc);
    const ModelConfig mc{fc.dim(), 16, 3, 12};
    const auto params = jittered_params(mc, 9);
    RolloutConfig rc;
    rc.h_step = 4;
    const auto trace = rollout_eval(scene, cache, params, fc, rc);
    CHECK(static_cast<int>(trace.executed_poses.size()) == rc.h_pred);
    CHECK(trace.first_probs.size() == static_cast<std::size_t>(mc.num_modes));

    // A checkpoint whose feature width disagrees with the extractor is bad data.
    PredictorParams wrong = params;
    wrong.config.feature_dim = 8;
    CHECK_THROWS_AS((void)rollout_eval(scene, cache, wrong, fc, rc), DataError);
  }
}
