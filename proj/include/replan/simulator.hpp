#pragma once

#include <functional>
#include <string>
#include <vector>

#include "replan/errors.hpp"
#include "replan/features.hpp"
#include "replan/model.hpp"

namespace replan {

// How executed waypoints feed the next query. kDifferentiable keeps the
// computation graph connected across steps, so later losses can push gradient
// into earlier executed trajectories; kDetached copies the values and blocks
// that path (the gradient through a detached coordinate is exactly zero).
enum class Wiring { kDifferentiable, kDetached };
Wiring wiring_from_string(const std::string& name);
std::string to_string(Wiring w);

// Which mode gets executed at every step: the best-matching one against the
// ground truth (training) or a fixed index (evaluation episodes).
enum class ModePolicy { kBestMatching, kFixedMode };

struct RolloutConfig {
  int h_pred = 12;  // prediction horizon, ticks
  int h_step = 12;  // executed prefix per step, ticks (1..h_pred)
  Wiring wiring = Wiring::kDetached;
  ModePolicy mode_policy = ModePolicy::kBestMatching;
  int fixed_mode = 0;
  double v_min = 0.1;  // m/s, heading-hold threshold for delta extraction

  // Number of predict/execute cycles; h_step == h_pred is the open-loop case
  // with exactly one sample.
  int sample_count() const { return (h_pred + h_step - 1) / h_step; }
};

// Value-level snapshot of the carried target state between steps; used to pin
// states in finite-difference audits and to re-lift after tape truncation.
struct CarrySnapshot {
  Pose2D pose;
  std::vector<Vec2> recent;  // k_hist+1 positions, oldest first
  Vec2 vel;
  double speed = 0.0;
};

// Decisions and states captured from a base rollout so that a replay (e.g.
// the +/- runs of a finite-difference audit) follows identical branches.
struct RolloutPins {
  std::vector<int> selected_mode;       // per sample
  std::vector<int> best_mode;           // per sample
  std::vector<CarrySnapshot> carry;     // carry entering sample s (index 0 = initial)
};

// Zero-valued tape inputs added to every executed waypoint of one step; the
// gradient the objective sends into them measures exactly how much the loss
// depends on that step's executed trajectory.
struct RolloutProbe {
  int step = -1;
  ad::Value dx, dy;
};

struct RolloutHooks {
  const RolloutPins* pins = nullptr;
  bool pin_selection = false;  // reuse pins->selected_mode / best_mode
  bool pin_carry = false;      // reset carry to pins->carry before each step
  RolloutPins* record = nullptr;
  const RolloutProbe* probe = nullptr;  // tape instantiation only
};

// Prediction became non-finite mid-rollout; carries enough context to report
// which step exploded and how large the parameters were.
struct RolloutError : DivergenceError {
  RolloutError(int step, double param_norm)
      : DivergenceError("non-finite prediction at rollout step " + std::to_string(step) +
                        " (parameter L2 norm " + std::to_string(param_norm) + ")"),
        step(step),
        param_norm(param_norm) {}
  int step;
  double param_norm;
};

template <class S>
struct StepRecordT {
  int sample = 0;
  int query_tick = 0;
  AgentState query_state;  // value level: the induced state the query ran from
  PredictionT<S> prediction;             // waypoints in the query frame
  std::vector<Vec2T<S>> executed_world;  // executed prefix in world frame (probe included)
  int selected_mode = 0;
  int best = 0;  // best-matching mode (classification target)
  S reg_loss;
  S cls_loss;
};

template <class S>
struct RolloutTraceT {
  std::vector<StepRecordT<S>> steps;
  std::vector<Pose2D> executed_poses;  // value level, ticks 1..h_pred
  std::vector<double> first_probs;     // mode probabilities at the tick-0 query
};
using RolloutTrace = RolloutTraceT<ad::Value>;
using EvalTrace = RolloutTraceT<double>;

template <class S, class Ops>
struct StepContextT {
  int sample;
  int query_tick;
  const TargetViewT<S>* view;
  const ScenarioLog* scene;
  const Ops* ops;
};

// Drop-in replacement for the learned predictor (tests wire oracles through
// this). Receives the built features, the remaining horizon, and the context.
template <class S, class Ops>
using PredictorFnT =
    std::function<PredictionT<S>(std::span<const S>, int, const StepContextT<S, Ops>&)>;

// Receding-horizon rollout: predict at the current tick, pick a mode, execute
// the first h_step waypoints as body-frame delta actions, re-query from the
// induced state; repeat until h_pred ticks are executed. Neighbors replay the
// log and never react. The scalar parameter S selects plain evaluation
// (double) or on-tape training (ad::Value); all branch decisions read plain
// values, so both instantiations follow identical paths.
template <class S, class Ops>
class RolloutEngineT {
 public:
  RolloutEngineT(const ScenarioLog& scene, const SceneCache& cache, const ModelConfig& mc,
                 const FeatureConfig& fc, std::span<const S> params, const RolloutConfig& rc,
                 const Ops& ops, RolloutHooks hooks = {}, PredictorFnT<S, Ops> predictor = {})
      : scene_(scene),
        cache_(cache),
        mc_(mc),
        fc_(fc),
        params_(params),
        rc_(rc),
        ops_(ops),
        hooks_(hooks),
        predictor_(std::move(predictor)) {
    if (rc.h_step < 1 || rc.h_step > rc.h_pred)
      throw std::invalid_argument("rollout: h_step must be in [1, h_pred]");
    if (rc.h_pred > scene.future_len)
      throw std::invalid_argument("rollout: h_pred exceeds scenario future_len");
    if (!predictor_ && rc.h_pred > mc.horizon)
      throw std::invalid_argument("rollout: h_pred exceeds model horizon");
    if (rc.mode_policy == ModePolicy::kFixedMode &&
        (rc.fixed_mode < 0 || rc.fixed_mode >= mc.num_modes))
      throw std::invalid_argument("rollout: fixed_mode out of range");
    view_ = log_target_view<S>(scene, fc.k_hist, ops_);
    snapshot_carry();
    if (hooks_.record) {
      hooks_.record->selected_mode.clear();
      hooks_.record->best_mode.clear();
      hooks_.record->carry.assign(1, carry_values_);
    }
  }

  bool done() const { return tick_ >= rc_.h_pred; }
  int sample() const { return sample_; }
  int tick() const { return tick_; }
  const CarrySnapshot& carry_values() const { return carry_values_; }
  const std::vector<Pose2D>& executed_poses() const { return executed_poses_; }
  const std::vector<double>& first_probs() const { return first_probs_; }

  // Re-lift the carried view from its value mirror. Only meaningful under the
  // detached wiring, where the carry holds no gradient path anyway; used by
  // the training loop after truncating the tape back to the parameter nodes.
  void refresh_carry() {
    if (rc_.wiring != Wiring::kDetached)
      throw std::logic_error("refresh_carry: only valid under detached wiring");
    lift_carry(carry_values_);
  }

  StepRecordT<S> step() {
    if (done()) throw std::logic_error("rollout: step() past completion");
    const int remaining = rc_.h_pred - tick_;
    const int n_exec = std::min(rc_.h_step, remaining);

    StepRecordT<S> rec;
    rec.sample = sample_;
    rec.query_tick = tick_;
    rec.query_state = {carry_values_.pose, carry_values_.speed};

    const std::vector<S> feats = build_features<S>(scene_, cache_, fc_, view_, tick_, ops_);
    const StepContextT<S, Ops> ctx{sample_, tick_, &view_, &scene_, &ops_};
    rec.prediction = predictor_ ? predictor_(feats, remaining, ctx)
                                : predict<S>(mc_, params_, feats, remaining, ops_);
    check_prediction(rec.prediction, remaining);
    if (sample_ == 0)
      for (const auto& p : rec.prediction.probs) first_probs_.push_back(to_value(p));

    // Ground truth in the query frame (under the differentiable wiring this
    // transform is itself on-tape: drift in the carried pose moves the frame).
    const S c = cos(view_.pose.yaw);
    const S s = sin(view_.pose.yaw);
    std::vector<Vec2T<S>> gt_local;
    gt_local.reserve(static_cast<std::size_t>(remaining));
    for (int t = 1; t <= remaining; ++t) {
      const AgentState& g = scene_.state(scene_.target_index, tick_ + t);
      const S rx = ops_.lift(g.pose.x) - view_.pose.x;
      const S ry = ops_.lift(g.pose.y) - view_.pose.y;
      gt_local.push_back({c * rx + s * ry, c * ry - s * rx});
    }

    rec.best = best_mode(rec.prediction, std::span<const Vec2T<S>>(gt_local));
    rec.selected_mode =
        rc_.mode_policy == ModePolicy::kFixedMode ? rc_.fixed_mode : rec.best;
    if (hooks_.pin_selection) {
      rec.best = hooks_.pins->best_mode.at(static_cast<std::size_t>(sample_));
      rec.selected_mode = hooks_.pins->selected_mode.at(static_cast<std::size_t>(sample_));
    }

    rec.reg_loss = laplace_nll<S>(rec.prediction.modes[static_cast<std::size_t>(rec.selected_mode)],
                                  rec.prediction.scale_b, gt_local);
    rec.cls_loss = classification_loss(rec.prediction, rec.best);

    // Execute: local -> world, optional probe offset, optional detach, then
    // delta extraction and pose integration.
    const auto& mode = rec.prediction.modes[static_cast<std::size_t>(rec.selected_mode)];
    rec.executed_world.reserve(static_cast<std::size_t>(n_exec));
    for (int i = 0; i < n_exec; ++i) {
      const auto& wp = mode[static_cast<std::size_t>(i)];
      Vec2T<S> w{view_.pose.x + (c * wp.x - s * wp.y), view_.pose.y + (s * wp.x + c * wp.y)};
      if constexpr (std::is_same_v<S, ad::Value>) {
        if (hooks_.probe && hooks_.probe->step == sample_) {
          w.x = w.x + hooks_.probe->dx;
          w.y = w.y + hooks_.probe->dy;
        }
      }
      rec.executed_world.push_back(w);
    }

    std::vector<Vec2T<S>> state_src;
    state_src.reserve(rec.executed_world.size());
    for (const auto& w : rec.executed_world) {
      if (rc_.wiring == Wiring::kDetached)
        state_src.push_back({detach(w.x), detach(w.y)});
      else
        state_src.push_back(w);
    }

    const auto deltas = waypoints_to_deltas_s<S>(view_.pose, std::span<const Vec2T<S>>(state_src),
                                                 scene_.dt, rc_.v_min, ops_);
    PoseT<S> pose = view_.pose;
    for (const auto& d : deltas) {
      pose = apply_delta_s<S>(pose, d, ops_);
      executed_poses_.push_back({to_value(pose.x), to_value(pose.y), to_value(pose.yaw)});
      view_.recent.push_back({pose.x, pose.y});
    }
    view_.recent.erase(view_.recent.begin(),
                       view_.recent.end() - (static_cast<std::ptrdiff_t>(fc_.k_hist) + 1));
    const auto& last = view_.recent[view_.recent.size() - 1];
    const auto& prev = view_.recent[view_.recent.size() - 2];
    view_.pose = pose;
    view_.vel = {(last.x - prev.x) * (1.0 / scene_.dt), (last.y - prev.y) * (1.0 / scene_.dt)};
    snapshot_carry();

    tick_ += n_exec;
    ++sample_;

    if (hooks_.record) {
      hooks_.record->selected_mode.push_back(rec.selected_mode);
      hooks_.record->best_mode.push_back(rec.best);
      hooks_.record->carry.push_back(carry_values_);
    }
    if (hooks_.pin_carry && !done())
      lift_carry(hooks_.pins->carry.at(static_cast<std::size_t>(sample_)));
    return rec;
  }

  RolloutTraceT<S> run() {
    RolloutTraceT<S> trace;
    while (!done()) trace.steps.push_back(step());
    trace.executed_poses = executed_poses_;
    trace.first_probs = first_probs_;
    return trace;
  }

 private:
  void snapshot_carry() {
    carry_values_.pose = {to_value(view_.pose.x), to_value(view_.pose.y),
                          to_value(view_.pose.yaw)};
    carry_values_.recent.clear();
    for (const auto& p : view_.recent)
      carry_values_.recent.push_back({to_value(p.x), to_value(p.y)});
    carry_values_.vel = {to_value(view_.vel.x), to_value(view_.vel.y)};
    carry_values_.speed = norm(carry_values_.vel);
  }

  void lift_carry(const CarrySnapshot& snap) {
    view_.pose = {ops_.lift(snap.pose.x), ops_.lift(snap.pose.y), ops_.lift(snap.pose.yaw)};
    view_.recent.clear();
    for (const auto& p : snap.recent) view_.recent.push_back({ops_.lift(p.x), ops_.lift(p.y)});
    view_.vel = {ops_.lift(snap.vel.x), ops_.lift(snap.vel.y)};
    carry_values_ = snap;
  }

  void check_prediction(const PredictionT<S>& pred, int horizon) const {
    const double sb = to_value(pred.scale_b);
    bool ok = static_cast<int>(pred.probs.size()) > 0 &&
              pred.modes.size() == pred.probs.size() && std::isfinite(sb) && sb > 0.0;
    for (const auto& m : pred.modes) {
      if (static_cast<int>(m.size()) != horizon) ok = false;
      for (const auto& wp : m)
        if (!std::isfinite(to_value(wp.x)) || !std::isfinite(to_value(wp.y))) ok = false;
    }
    // Probabilities must be strictly positive: a mode that underflows to zero
    // would turn the classification loss into log(0) downstream. Treated as
    // divergence, not as a programming error.
    for (const auto& p : pred.probs) {
      const double pv = to_value(p);
      if (!std::isfinite(pv) || !(pv > 0.0)) ok = false;
    }
    if (!ok) {
      double norm2 = 0.0;
      for (const auto& p : params_) {
        const double v = to_value(p);
        norm2 += v * v;
      }
      throw RolloutError(sample_, std::sqrt(norm2));
    }
  }

  const ScenarioLog& scene_;
  const SceneCache& cache_;
  ModelConfig mc_;
  FeatureConfig fc_;
  std::span<const S> params_;
  RolloutConfig rc_;
  Ops ops_;
  RolloutHooks hooks_;
  PredictorFnT<S, Ops> predictor_;

  TargetViewT<S> view_;
  CarrySnapshot carry_values_;
  std::vector<Pose2D> executed_poses_;
  std::vector<double> first_probs_;
  int tick_ = 0;
  int sample_ = 0;
};

// Value-level convenience: run a full rollout on plain doubles.
EvalTrace rollout_eval(const ScenarioLog& scene, const SceneCache& cache,
                       const PredictorParams& params, const FeatureConfig& fc,
                       const RolloutConfig& rc);

// One delta-application step sequence on plain states: executes waypoints
// from `state` and returns the induced state (pose after the chain, speed
// from the last displacement).
AgentState induced_state(const AgentState& state, std::span<const Vec2> executed, double dt,
                         double v_min);

// Logged neighbor states at a tick (everyone but the target), in track order.
std::vector<AgentState> replay_neighbors(const ScenarioLog& scene, int tick);

}  // namespace replan
