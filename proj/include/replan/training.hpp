#pragma once

#include <filesystem>

#include "replan/simulator.hpp"

namespace replan {

// The three training regimes under study. Open-loop is the degenerate
// closed-loop case (one sample covering the whole horizon), so all three run
// through the identical rollout/gradient machinery:
//   ol         -> h_step = h_pred, detached
//   cl-diff    -> h_step = train_h_step, differentiable
//   cl-nondiff -> h_step = train_h_step, detached
enum class Regime { kOpenLoop, kClosedLoopDiff, kClosedLoopNonDiff };
Regime regime_from_string(const std::string& name);
std::string to_string(Regime r);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, const AdamConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::span<double> params, std::span<const double> grad);

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

enum class LambdaMode { kUniform, kGeometric };

// Per-sample weights, normalised to sum 1. Uniform is the reference setting;
// geometric decays later samples by `decay` per step.
std::vector<double> lambda_weights(int samples, LambdaMode mode, double decay);

struct TrainConfig {
  Regime regime = Regime::kClosedLoopNonDiff;
  int h_pred = 12;       // ticks
  int train_h_step = 4;  // ticks; ignored for ol (forced to h_pred)
  int epochs = 120;
  int batch_size = 16;
  std::uint64_t seed = 1;
  AdamConfig adam;
  LambdaMode lambda_mode = LambdaMode::kUniform;
  double lambda_decay = 0.5;
  ModelConfig model;
  FeatureConfig features;
  double v_min = 0.1;
  std::string init_from;  // checkpoint to warm-start from; empty = fresh init
  int workers = 1;
  std::filesystem::path run_dir;  // if set: checkpoint.json + loss.csv land here
};

struct TrainResult {
  PredictorParams params;          // final (or last finite) parameters
  std::vector<double> epoch_loss;  // mean per-scenario objective, one per epoch
  bool diverged = false;
  int diverged_epoch = -1;
};

RolloutConfig rollout_config_for(const TrainConfig& cfg);

// Lift a flat parameter vector onto a tape (differentiable leaves) and read
// the gradients back after a backward pass.
std::vector<ad::Value> lift_params(ad::Tape& tape, std::span<const double> flat);
void accumulate_param_grads(std::span<const ad::Value> lifted, std::span<double> grad);

// Weighted objective over a finished rollout: sum_s lambda_s * (reg_s + cls_s).
ad::Value objective(const RolloutTrace& trace, std::span<const double> lambda);

// One scenario's objective value and parameter gradient under the given
// rollout wiring. Detached wiring backpropagates each sample as it is
// produced and truncates the tape back to the parameter nodes between steps
// (the graph never spans a step boundary); differentiable wiring keeps the
// whole graph and runs one backward pass. Both produce the gradient of the
// identical objective value.
struct ScenarioGrad {
  double loss = 0.0;
  std::vector<double> grad;
};
ScenarioGrad scenario_gradient(const ScenarioLog& scene, const SceneCache& cache,
                               const PredictorParams& params, const FeatureConfig& fc,
                               const RolloutConfig& rc, std::span<const double> lambda);

// Minibatch Adam over the corpus. Deterministic for a fixed config and seed
// regardless of `workers`: per-scenario gradients are computed independently
// and reduced in scenario-index order. On divergence (non-finite loss,
// gradient, or prediction) training stops and the result carries the last
// finite parameters with `diverged` set.
TrainResult train(const std::vector<ScenarioLog>& corpus, const TrainConfig& cfg);

struct AuditConfig {
  RolloutConfig rollout;
  FeatureConfig features;
  LambdaMode lambda_mode = LambdaMode::kUniform;
  double lambda_decay = 0.5;
  double fd_step = 1e-5;
  double exact_floor = 1e-7;  // |ad - fd| below this counts as exact agreement
};

// Compares backward() gradients of the rollout objective against central
// finite differences, replaying the base run's branch decisions on both
// probe runs (mode selections always; carried states too under the detached
// wiring, where executed trajectories are constants by definition). Returns
// the max relative error over parameters.
double finite_diff_audit(const PredictorParams& params, const ScenarioLog& scene,
                         const AuditConfig& cfg);

}  // namespace replan
