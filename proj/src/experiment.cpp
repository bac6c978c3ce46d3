#include "replan/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <set>
#include <tuple>

#include <json.hpp>

namespace replan {

using nlohmann::json;

namespace {

LambdaMode lambda_mode_from_string(const std::string& s) {
  if (s == "uniform") return LambdaMode::kUniform;
  if (s == "geometric") return LambdaMode::kGeometric;
  throw DataError("unknown lambda mode '" + s + "'");
}

std::string to_string(LambdaMode m) {
  return m == LambdaMode::kUniform ? "uniform" : "geometric";
}

CorpusSpec corpus_from_json(const json& j, const std::string& where) {
  CorpusSpec c;
  if (!j.contains("profile")) throw DataError(where + ": missing 'profile'");
  c.profile = profile_from_string(j["profile"].get<std::string>());
  c.count = j.value("count", c.count);
  c.seed = j.value("seed", c.seed);
  if (c.count < 1) throw DataError(where + ": count must be >= 1");
  return c;
}

json corpus_to_json(const CorpusSpec& c) {
  return {{"profile", to_string(c.profile)}, {"count", c.count}, {"seed", c.seed}};
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("config '" + path.string() + "': " + e.what());
  }
  ExperimentConfig c;
  try {
    if (j.contains("generator")) {
      const auto& g = j["generator"];
      c.gen.dt = g.value("dt", c.gen.dt);
      c.gen.history_len = g.value("history_len", c.gen.history_len);
      c.gen.future_len = g.value("future_len", c.gen.future_len);
      c.gen.lane_half_width = g.value("lane_half_width", c.gen.lane_half_width);
      c.gen.speed_lo = g.value("speed_lo", c.gen.speed_lo);
      c.gen.speed_hi = g.value("speed_hi", c.gen.speed_hi);
      c.gen.wobble_max = g.value("wobble_max", c.gen.wobble_max);
      c.gen.clearance = g.value("clearance", c.gen.clearance);
    }
    if (j.contains("features")) {
      const auto& f = j["features"];
      c.features.k_hist = f.value("k_hist", c.features.k_hist);
      c.features.lane_points = f.value("lane_points", c.features.lane_points);
      c.features.n_near = f.value("n_near", c.features.n_near);
      c.features.lane_sample_spacing =
          f.value("lane_sample_spacing", c.features.lane_sample_spacing);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
      c.model.num_modes = m.value("num_modes", c.model.num_modes);
      c.model.horizon = m.value("horizon", c.model.horizon);
    }
    c.h_pred = j.value("h_pred", c.h_pred);
    if (j.contains("train_corpus")) c.train_corpus = corpus_from_json(j["train_corpus"], "train_corpus");
    if (j.contains("eval_corpus")) c.eval_corpus = corpus_from_json(j["eval_corpus"], "eval_corpus");
    if (j.contains("train")) {
      const auto& t = j["train"];
      if (t.contains("regimes")) {
        c.regimes.clear();
        for (const auto& r : t["regimes"]) c.regimes.push_back(regime_from_string(r.get<std::string>()));
      }
      if (t.contains("train_h_steps")) {
        c.train_h_steps.clear();
        for (const auto& h : t["train_h_steps"]) c.train_h_steps.push_back(h.get<int>());
      }
      if (t.contains("seeds")) {
        c.seeds.clear();
        for (const auto& s : t["seeds"]) c.seeds.push_back(s.get<std::uint64_t>());
      }
      c.epochs = t.value("epochs", c.epochs);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.adam.lr = t.value("lr", c.adam.lr);
      c.adam.beta1 = t.value("beta1", c.adam.beta1);
      c.adam.beta2 = t.value("beta2", c.adam.beta2);
      c.adam.eps = t.value("adam_eps", c.adam.eps);
      if (t.contains("lambda_mode"))
        c.lambda_mode = lambda_mode_from_string(t["lambda_mode"].get<std::string>());
      c.lambda_decay = t.value("lambda_decay", c.lambda_decay);
      c.v_min = t.value("v_min", c.v_min);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (e.contains("eval_h_steps")) {
        c.eval_h_steps.clear();
        for (const auto& h : e["eval_h_steps"]) c.eval_h_steps.push_back(h.get<int>());
      }
      c.miss_threshold = e.value("miss_threshold", c.miss_threshold);
      c.offroad_final_only = e.value("offroad_final_only", c.offroad_final_only);
    }
  } catch (const json::exception& e) {
    throw DataError("config '" + path.string() + "': " + e.what());
  }
  c.model.feature_dim = c.features.dim();
  if (c.h_pred < 1 || c.h_pred > c.gen.future_len)
    throw DataError("config: h_pred must be in [1, future_len]");
  if (c.model.horizon < c.h_pred) throw DataError("config: model horizon shorter than h_pred");
  for (int h : c.train_h_steps)
    if (h < 1 || h > c.h_pred) throw DataError("config: train_h_step out of [1, h_pred]");
  for (int h : c.eval_h_steps)
    if (h < 1 || h > c.h_pred) throw DataError("config: eval_h_step out of [1, h_pred]");
  if (c.regimes.empty() || c.seeds.empty() || c.train_h_steps.empty() || c.eval_h_steps.empty())
    throw DataError("config: regimes, seeds, train_h_steps, eval_h_steps must be non-empty");
  return c;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  json j;
  j["generator"] = {{"dt", gen.dt},
                    {"history_len", gen.history_len},
                    {"future_len", gen.future_len},
                    {"lane_half_width", gen.lane_half_width},
                    {"speed_lo", gen.speed_lo},
                    {"speed_hi", gen.speed_hi},
                    {"wobble_max", gen.wobble_max},
                    {"clearance", gen.clearance}};
  j["features"] = {{"k_hist", features.k_hist},
                   {"lane_points", features.lane_points},
                   {"n_near", features.n_near},
                   {"lane_sample_spacing", features.lane_sample_spacing}};
  j["model"] = {{"hidden_dim", model.hidden_dim},
                {"num_modes", model.num_modes},
                {"horizon", model.horizon}};
  j["h_pred"] = h_pred;
  j["train_corpus"] = corpus_to_json(train_corpus);
  j["eval_corpus"] = corpus_to_json(eval_corpus);
  json regimes_j = json::array();
  for (Regime r : regimes) regimes_j.push_back(to_string(r));
  j["train"] = {{"regimes", regimes_j},
                {"train_h_steps", train_h_steps},
                {"seeds", seeds},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", adam.lr},
                {"beta1", adam.beta1},
                {"beta2", adam.beta2},
                {"adam_eps", adam.eps},
                {"lambda_mode", to_string(lambda_mode)},
                {"lambda_decay", lambda_decay},
                {"v_min", v_min}};
  j["eval"] = {{"eval_h_steps", eval_h_steps},
               {"miss_threshold", miss_threshold},
               {"offroad_final_only", offroad_final_only}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

int effective_train_h(const ExperimentConfig& cfg, Regime regime, int train_h) {
  return regime == Regime::kOpenLoop ? cfg.h_pred : train_h;
}

std::filesystem::path run_dir_name(const ExperimentConfig& cfg, Regime regime, int train_h,
                                   std::uint64_t seed) {
  return to_string(regime) + "-h" + std::to_string(effective_train_h(cfg, regime, train_h)) +
         "-s" + std::to_string(seed);
}

namespace {

// ol collapses every train_h to the same run; enumerate unique runs once.
std::vector<std::tuple<Regime, int, std::uint64_t>> enumerate_runs(const ExperimentConfig& cfg) {
  std::vector<std::tuple<Regime, int, std::uint64_t>> out;
  std::set<std::string> seen;
  for (Regime regime : cfg.regimes)
    for (int train_h : cfg.train_h_steps)
      for (std::uint64_t seed : cfg.seeds) {
        const auto name = run_dir_name(cfg, regime, train_h, seed).string();
        if (!seen.insert(name).second) continue;
        out.emplace_back(regime, effective_train_h(cfg, regime, train_h), seed);
      }
  return out;
}

}  // namespace

void run_training_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                        int workers, std::ostream* log) {
  const auto corpus_path = out_dir / "corpora" / "train.jsonl";
  if (!std::filesystem::exists(corpus_path))
    throw DataError("training corpus missing: " + corpus_path.string() +
                    " (run the gen stage first)");
  const auto corpus = load_corpus(corpus_path);
  for (const auto& [regime, train_h, seed] : enumerate_runs(cfg)) {
    TrainConfig tc;
    tc.regime = regime;
    tc.h_pred = cfg.h_pred;
    tc.train_h_step = train_h;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.seed = seed;
    tc.adam = cfg.adam;
    tc.lambda_mode = cfg.lambda_mode;
    tc.lambda_decay = cfg.lambda_decay;
    tc.model = cfg.model;
    tc.features = cfg.features;
    tc.v_min = cfg.v_min;
    tc.workers = workers;
    tc.run_dir = out_dir / "runs" / run_dir_name(cfg, regime, train_h, seed);
    if (log)
      *log << "[train] " << run_dir_name(cfg, regime, train_h, seed).string() << "\n" << std::flush;
    const TrainResult result = train(corpus, tc);
    if (result.diverged)
      throw DivergenceError("training diverged in epoch " +
                            std::to_string(result.diverged_epoch) + " for run " +
                            run_dir_name(cfg, regime, train_h, seed).string() +
                            " (last finite checkpoint kept)");
  }
}

SweepResult run_sweep_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            int workers, std::ostream* log) {
  const auto corpus_path = out_dir / "corpora" / "eval.jsonl";
  if (!std::filesystem::exists(corpus_path))
    throw DataError("evaluation corpus missing: " + corpus_path.string() +
                    " (run the gen stage first)");
  const auto corpus = load_corpus(corpus_path);

  std::vector<ModelRun> runs;
  std::vector<std::string> missing;
  for (const auto& [regime, train_h, seed] : enumerate_runs(cfg)) {
    const auto ckpt = out_dir / "runs" / run_dir_name(cfg, regime, train_h, seed) /
                      "checkpoint.json";
    if (!std::filesystem::exists(ckpt)) {
      missing.push_back(ckpt.string());
      continue;
    }
    ModelRun run;
    run.regime = regime;
    run.train_h_step = train_h;
    run.seed = seed;
    run.params = load_checkpoint(ckpt);
    if (run.params.config != cfg.model)
      throw DataError("checkpoint '" + ckpt.string() + "' config does not match the experiment");
    runs.push_back(std::move(run));
  }
  if (!missing.empty()) {
    std::string what = "sweep: missing checkpoints:";
    for (const auto& m : missing) what += "\n  " + m;
    throw DataError(what);
  }

  EvalConfig ec;
  ec.h_pred = cfg.h_pred;
  ec.miss_threshold = cfg.miss_threshold;
  ec.offroad_final_only = cfg.offroad_final_only;
  ec.v_min = cfg.v_min;
  ec.features = cfg.features;
  ec.workers = workers;
  if (log) *log << "[sweep] " << runs.size() << " runs x " << cfg.eval_h_steps.size()
                << " eval steps over " << corpus.size() << " scenarios\n" << std::flush;
  const SweepResult grid = sweep(runs, corpus, cfg.eval_h_steps, ec);

  const auto sweep_dir = out_dir / "sweep";
  std::filesystem::create_directories(sweep_dir);
  write_metrics_csv(grid, sweep_dir / "metrics.csv");
  write_reduction_csv(collision_reductions(grid), sweep_dir / "reduction.csv");
  return grid;
}

void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    int workers, std::ostream* log) {
  std::filesystem::create_directories(out_dir / "corpora");
  cfg.save(out_dir / "config.json");

  if (log) *log << "[gen] train corpus: " << cfg.train_corpus.count << " x "
                << to_string(cfg.train_corpus.profile) << "\n" << std::flush;
  save_corpus(out_dir / "corpora" / "train.jsonl",
              generate_corpus(cfg.train_corpus.profile, cfg.gen, cfg.train_corpus.seed,
                              cfg.train_corpus.count));
  if (log) *log << "[gen] eval corpus: " << cfg.eval_corpus.count << " x "
                << to_string(cfg.eval_corpus.profile) << "\n" << std::flush;
  save_corpus(out_dir / "corpora" / "eval.jsonl",
              generate_corpus(cfg.eval_corpus.profile, cfg.gen, cfg.eval_corpus.seed,
                              cfg.eval_corpus.count));

  run_training_stage(cfg, out_dir, workers, log);
  run_sweep_stage(cfg, out_dir, workers, log);
  write_report(out_dir / "sweep", out_dir / "report", cfg.gen.dt);
  if (log) *log << "[report] " << (out_dir / "report" / "report.md").string() << "\n" << std::flush;
}

}  // namespace replan
