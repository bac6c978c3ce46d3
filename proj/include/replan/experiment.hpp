#pragma once

#include <filesystem>
#include <iosfwd>

#include "replan/evaluation.hpp"
#include "replan/report.hpp"

namespace replan {

struct CorpusSpec {
  Profile profile = Profile::kDenseIntersection;
  int count = 100;
  std::uint64_t seed = 1;
};

// Everything a full experiment needs, loadable from one JSON file. The
// orchestrator is deterministic end to end: re-running the same config into a
// fresh directory reproduces every corpus, checkpoint, and CSV byte for byte.
struct ExperimentConfig {
  GeneratorConfig gen;
  FeatureConfig features;
  ModelConfig model;  // feature_dim is forced to features.dim()
  int h_pred = 12;    // ticks

  CorpusSpec train_corpus;
  CorpusSpec eval_corpus;

  std::vector<Regime> regimes = {Regime::kOpenLoop, Regime::kClosedLoopDiff,
                                 Regime::kClosedLoopNonDiff};
  std::vector<int> train_h_steps = {4};  // ticks; ol ignores these
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int epochs = 120;
  int batch_size = 16;
  AdamConfig adam;
  LambdaMode lambda_mode = LambdaMode::kUniform;
  double lambda_decay = 0.5;
  double v_min = 0.1;

  std::vector<int> eval_h_steps = {12, 6, 4, 3, 2, 1};  // ticks
  double miss_threshold = 2.0;
  bool offroad_final_only = false;

  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Runs generate -> train (regimes x train_h_steps x seeds) -> sweep -> report
// under out_dir:
//   corpora/{train,eval}.jsonl
//   runs/<regime>-h<train_h>-s<seed>/{checkpoint.json,loss.csv}
//   sweep/{metrics.csv,reduction.csv}
//   report/{report.md,collision_vs_h_step.svg}
//   config.json (resolved echo)
// Existing files are overwritten. `log` (optional) receives progress lines.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    int workers, std::ostream* log);

// Stage entry points used by the CLI so each stage can run standalone
// against an existing out_dir. Both raise DataError when inputs are missing
// (sweep lists every absent checkpoint).
void run_training_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                        int workers, std::ostream* log);
SweepResult run_sweep_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            int workers, std::ostream* log);

// runs/<regime>-h<train_h>-s<seed> (ol pins train_h to h_pred).
std::filesystem::path run_dir_name(const ExperimentConfig& cfg, Regime regime, int train_h,
                                   std::uint64_t seed);

// Effective per-regime training step: ol collapses to h_pred.
int effective_train_h(const ExperimentConfig& cfg, Regime regime, int train_h);

}  // namespace replan
