#include "replan/simulator.hpp"

namespace replan {

Wiring wiring_from_string(const std::string& name) {
  if (name == "differentiable") return Wiring::kDifferentiable;
  if (name == "detached") return Wiring::kDetached;
  throw DataError("unknown wiring '" + name + "'");
}

std::string to_string(Wiring w) {
  return w == Wiring::kDifferentiable ? "differentiable" : "detached";
}

EvalTrace rollout_eval(const ScenarioLog& scene, const SceneCache& cache,
                       const PredictorParams& params, const FeatureConfig& fc,
                       const RolloutConfig& rc) {
  if (params.config.feature_dim != fc.dim())
    throw DataError("rollout: checkpoint feature_dim " +
                    std::to_string(params.config.feature_dim) +
                    " does not match feature config dim " + std::to_string(fc.dim()));
  RolloutEngineT<double, DoubleOps> engine(scene, cache, params.config, fc,
                                           std::span<const double>(params.flat), rc, DoubleOps{});
  return engine.run();
}

AgentState induced_state(const AgentState& state, std::span<const Vec2> executed, double dt,
                         double v_min) {
  if (executed.empty()) throw std::invalid_argument("induced_state: no executed waypoints");
  const Pose2D start{state.pose.x, state.pose.y, state.pose.yaw};
  const auto deltas = waypoints_to_deltas(start, executed, dt, v_min);
  Pose2D pose = start;
  for (const auto& d : deltas) pose = apply_delta(pose, d);
  const Vec2 last = executed[executed.size() - 1];
  const Vec2 prev = executed.size() >= 2 ? executed[executed.size() - 2]
                                         : Vec2{state.pose.x, state.pose.y};
  AgentState out;
  out.pose = pose;
  out.speed = norm(last - prev) / dt;
  return out;
}

std::vector<AgentState> replay_neighbors(const ScenarioLog& scene, int tick) {
  if (tick < -scene.history_len || tick > scene.future_len)
    throw std::invalid_argument("replay_neighbors: tick out of range");
  std::vector<AgentState> out;
  out.reserve(scene.tracks.size() - 1);
  for (int i = 0; i < static_cast<int>(scene.tracks.size()); ++i) {
    if (i == scene.target_index) continue;
    out.push_back(scene.state(i, tick));
  }
  return out;
}

}  // namespace replan
