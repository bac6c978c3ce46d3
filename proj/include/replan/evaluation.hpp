#pragma once

#include <filesystem>
#include <optional>

#include "replan/training.hpp"

namespace replan {

struct EvalConfig {
  int h_pred = 12;               // ticks
  double miss_threshold = 2.0;   // m, max pointwise L2 beyond this = miss
  bool offroad_final_only = false;
  double v_min = 0.1;
  FeatureConfig features;
  int workers = 1;
};

struct DisplacementMetrics {
  double min_ade = 0.0;
  double min_fde = 0.0;
  bool miss = false;
};

// Closed-loop displacement metrics over rolled-out episodes: consider the
// top-k episodes by first-query probability (ties -> lower mode index), take
// the min ADE / min FDE among them; the scenario is a miss if every
// considered episode's max pointwise error exceeds the threshold.
DisplacementMetrics displacement_metrics(std::span<const std::vector<Vec2>> episodes,
                                         std::span<const double> probs,
                                         std::span<const Vec2> ground_truth, int k,
                                         double miss_threshold);

// True if the target footprint (dims from the log) overlaps any logged
// neighbor footprint at any executed tick. poses[i] is the executed pose at
// tick i+1. Touching boxes count as collision.
bool collision_any(std::span<const Pose2D> poses, const ScenarioLog& scene);

// True if any executed waypoint (or only the final one) is strictly farther
// than lane_half_width from every lane centerline.
bool offroad_any(std::span<const Vec2> positions, const ScenarioLog& scene, bool final_only);

struct ScenarioMetrics {
  double min_ade1 = 0, min_fde1 = 0, min_ade5 = 0, min_fde5 = 0;
  bool miss1 = false, miss5 = false;
  bool collision = false, offroad = false;
};

// Rolls out every mode as its own fixed-mode episode at the given re-plan
// step, ranks episodes by the shared tick-0 probabilities, and scores
// displacement metrics on top-1/top-5 plus collision/offroad on the top-1
// episode.
ScenarioMetrics evaluate_scenario(const ScenarioLog& scene, const SceneCache& cache,
                                  const PredictorParams& params, int eval_h_step,
                                  const EvalConfig& cfg);

struct MetricAggregate {
  double min_ade1 = 0, min_fde1 = 0, miss_rate1 = 0;
  double min_ade5 = 0, min_fde5 = 0, miss_rate5 = 0;
  double collision_rate = 0, offroad_rate = 0;  // fractions in [0, 1]
  int n_scenarios = 0;
};

MetricAggregate evaluate_corpus(const std::vector<ScenarioLog>& corpus,
                                const PredictorParams& params, int eval_h_step,
                                const EvalConfig& cfg);

// One trained model entering the sweep.
struct ModelRun {
  Regime regime;
  int train_h_step;  // ticks (h_pred for ol)
  std::uint64_t seed;
  PredictorParams params;
};

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample stddev over seeds (0 when n_seeds == 1)
};

struct SweepCell {
  Regime regime;
  int train_h_step;
  int eval_h_step;
  MetricStats min_ade1, min_fde1, miss_rate1;
  MetricStats min_ade5, min_fde5, miss_rate5;
  MetricStats collision_rate, offroad_rate;
  int n_seeds = 0;
  int n_scenarios = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // deterministic order: regime, train_h, eval_h desc
};

// Full train-step x eval-step grid: evaluates every run at every eval_h_step
// and aggregates across seeds (mean +- sample stddev).
SweepResult sweep(std::span<const ModelRun> runs, const std::vector<ScenarioLog>& corpus,
                  std::span<const int> eval_h_steps, const EvalConfig& cfg);

struct ReductionRow {
  Regime baseline;   // cl-diff or ol
  int train_h_step;  // candidate's training step
  int eval_h_step;
  double baseline_collision;   // mean rate of the baseline
  double candidate_collision;  // mean rate of cl-nondiff
  double reduction_pct;        // (A - B) / A * 100; NaN when A == 0
};

// Collision-rate reductions of cl-nondiff against cl-diff (same train_h) and
// against ol, per grid cell.
std::vector<ReductionRow> collision_reductions(const SweepResult& grid);

void write_metrics_csv(const SweepResult& grid, const std::filesystem::path& path);
void write_reduction_csv(std::span<const ReductionRow> rows, const std::filesystem::path& path);

// Parsers used by the report stage; malformed rows raise DataError naming the
// file and 1-based row number.
SweepResult read_metrics_csv(const std::filesystem::path& path);
std::vector<ReductionRow> read_reduction_csv(const std::filesystem::path& path);

std::optional<const SweepCell*> find_cell(const SweepResult& grid, Regime regime,
                                          int train_h_step, int eval_h_step);

}  // namespace replan
