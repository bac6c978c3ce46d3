// replan: desk-scale lab for closed-loop trajectory-prediction training.
//
// Subcommands: gen, train, sweep, report, experiment. Exit codes: 0 success,
// 1 usage error, 2 bad/missing data, 3 training divergence.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "replan/experiment.hpp"

namespace {

using namespace replan;

// "--h-step 4" means ticks; "--h-step 2.0s" means seconds and must land on a
// tick boundary.
int parse_h_step(const std::string& text, double dt) {
  try {
    if (!text.empty() && text.back() == 's') {
      const double seconds = std::stod(text.substr(0, text.size() - 1));
      const double ticks = seconds / dt;
      const double rounded = std::nearbyint(ticks);
      if (std::fabs(ticks - rounded) > 1e-9 || rounded < 1.0)
        throw CLI::ValidationError("--h-step", text + " is not a whole number of ticks at dt=" +
                                                    std::to_string(dt));
      return static_cast<int>(rounded);
    }
    std::size_t pos = 0;
    const int ticks = std::stoi(text, &pos);
    if (pos != text.size() || ticks < 1) throw std::invalid_argument(text);
    return ticks;
  } catch (const CLI::ValidationError&) {
    throw;
  } catch (const std::exception&) {
    throw CLI::ValidationError("--h-step", "expected ticks (e.g. 4) or seconds (e.g. 2.0s), got '" +
                                               text + "'");
  }
}

std::filesystem::path resolve_out(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("REPLAN_OUT_ROOT")) return env;
  return ".";
}

int run(int argc, char** argv) {
  CLI::App app{"closed-loop trajectory prediction lab"};
  app.require_subcommand(1);
  int workers = 1;
  app.add_option("--workers", workers, "worker threads for batch/eval parallelism")
      ->check(CLI::PositiveNumber);

  // --- gen ---
  auto* gen = app.add_subcommand("gen", "generate a scenario corpus");
  std::string gen_profile = "dense_intersection";
  int gen_count = 100;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  GeneratorConfig gen_cfg;
  gen->add_option("--profile", gen_profile,
                  "straight|curve|merge|intersection|dense_intersection");
  gen->add_option("--count", gen_count, "number of scenarios")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", gen_out, "output .jsonl path")->required();
  gen->add_option("--dt", gen_cfg.dt, "tick length in seconds");
  gen->add_option("--history", gen_cfg.history_len, "history ticks");
  gen->add_option("--future", gen_cfg.future_len, "future ticks");

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train one model");
  std::string train_corpus, train_regime = "cl-nondiff", train_h_step = "4", train_out;
  std::string train_init_from;
  TrainConfig tc;
  train_cmd->add_option("--corpus", train_corpus, "training corpus .jsonl")->required();
  train_cmd->add_option("--regime", train_regime, "ol|cl-diff|cl-nondiff");
  train_cmd->add_option("--h-step", train_h_step, "training re-plan step: ticks or seconds (2.0s)");
  train_cmd->add_option("--seed", tc.seed, "training seed");
  train_cmd->add_option("--epochs", tc.epochs, "epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tc.batch_size, "batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tc.adam.lr, "adam learning rate");
  train_cmd->add_option("--hidden", tc.model.hidden_dim, "hidden width");
  train_cmd->add_option("--modes", tc.model.num_modes, "mode count");
  train_cmd->add_option("--init-from", train_init_from, "warm-start checkpoint");
  train_cmd->add_option("--out", train_out, "run directory (default from REPLAN_OUT_ROOT)");

  // --- sweep ---
  auto* sweep_cmd = app.add_subcommand("sweep", "evaluate trained runs over eval h_steps");
  std::string sweep_config, sweep_out;
  sweep_cmd->add_option("--config", sweep_config, "experiment config json")->required();
  sweep_cmd->add_option("--out", sweep_out, "experiment directory (default from REPLAN_OUT_ROOT)");

  // --- report ---
  auto* report_cmd = app.add_subcommand("report", "render sweep CSVs to markdown + SVG");
  std::string report_sweep_dir, report_out;
  double report_dt = 0.5;
  report_cmd->add_option("--sweep-dir", report_sweep_dir, "directory holding metrics.csv")
      ->required();
  report_cmd->add_option("--out", report_out, "report output directory")->required();
  report_cmd->add_option("--dt", report_dt, "tick length in seconds for labels");

  // --- experiment ---
  auto* exp_cmd = app.add_subcommand("experiment", "full pipeline: gen, train, sweep, report");
  std::string exp_config, exp_out;
  exp_cmd->add_option("--config", exp_config, "experiment config json")->required();
  exp_cmd->add_option("--out", exp_out, "output directory (default from REPLAN_OUT_ROOT)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Let CLI11 print the help text (stdout) or the usage error (stderr).
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    const auto corpus =
        generate_corpus(profile_from_string(gen_profile), gen_cfg, gen_seed, gen_count);
    save_corpus(gen_out, corpus);
    std::cout << "wrote " << corpus.size() << " scenarios to " << gen_out << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    const auto corpus = load_corpus(train_corpus);
    if (corpus.empty()) throw DataError("training corpus '" + train_corpus + "' is empty");
    tc.regime = regime_from_string(train_regime);
    tc.h_pred = corpus.front().future_len;
    tc.train_h_step = parse_h_step(train_h_step, corpus.front().dt);
    tc.model.feature_dim = tc.features.dim();
    tc.model.horizon = tc.h_pred;
    tc.init_from = train_init_from;
    tc.workers = workers;
    tc.run_dir = resolve_out(train_out);
    const TrainResult result = train(corpus, tc);
    if (result.diverged)
      throw DivergenceError("training diverged in epoch " + std::to_string(result.diverged_epoch) +
                            "; last finite checkpoint written to " +
                            (tc.run_dir / "checkpoint.json").string());
    std::cout << "final epoch loss " << result.epoch_loss.back() << "; checkpoint at "
              << (tc.run_dir / "checkpoint.json").string() << "\n";
    return 0;
  }

  if (sweep_cmd->parsed()) {
    const auto cfg = ExperimentConfig::load(sweep_config);
    run_sweep_stage(cfg, resolve_out(sweep_out), workers, &std::cout);
    return 0;
  }

  if (report_cmd->parsed()) {
    write_report(report_sweep_dir, report_out, report_dt);
    std::cout << "report written to " << report_out << "\n";
    return 0;
  }

  if (exp_cmd->parsed()) {
    const auto cfg = ExperimentConfig::load(exp_config);
    run_experiment(cfg, resolve_out(exp_out), workers, &std::cout);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const replan::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const replan::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
