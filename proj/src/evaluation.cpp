#include "replan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "replan/parallel.hpp"

namespace replan {

DisplacementMetrics displacement_metrics(std::span<const std::vector<Vec2>> episodes,
                                         std::span<const double> probs,
                                         std::span<const Vec2> ground_truth, int k,
                                         double miss_threshold) {
  if (episodes.empty() || episodes.size() != probs.size())
    throw std::invalid_argument("displacement_metrics: episode/prob count mismatch");
  if (k < 1) throw std::invalid_argument("displacement_metrics: k must be >= 1");
  std::vector<std::size_t> rank(episodes.size());
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), episodes.size());
  DisplacementMetrics out;
  out.min_ade = out.min_fde = std::numeric_limits<double>::infinity();
  out.miss = true;
  for (std::size_t r = 0; r < kk; ++r) {
    const auto& ep = episodes[rank[r]];
    if (ep.size() != ground_truth.size())
      throw std::invalid_argument("displacement_metrics: episode length mismatch");
    double ade = 0.0, max_err = 0.0;
    for (std::size_t t = 0; t < ep.size(); ++t) {
      const double d = norm(ep[t] - ground_truth[t]);
      ade += d;
      max_err = std::max(max_err, d);
    }
    ade /= static_cast<double>(ep.size());
    const double fde = norm(ep.back() - ground_truth.back());
    out.min_ade = std::min(out.min_ade, ade);
    out.min_fde = std::min(out.min_fde, fde);
    if (max_err <= miss_threshold) out.miss = false;
  }
  return out;
}

bool collision_any(std::span<const Pose2D> poses, const ScenarioLog& scene) {
  const AgentTrack& target = scene.target();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const int tick = static_cast<int>(i) + 1;
    const OrientedBox tbox{{poses[i].x, poses[i].y}, target.length, target.width, poses[i].yaw};
    for (int ti = 0; ti < static_cast<int>(scene.tracks.size()); ++ti) {
      if (ti == scene.target_index) continue;
      const AgentTrack& nb = scene.tracks[static_cast<std::size_t>(ti)];
      const AgentState& st = scene.state(ti, tick);
      const OrientedBox nbox{{st.pose.x, st.pose.y}, nb.length, nb.width, st.pose.yaw};
      if (obb_overlap(tbox, nbox)) return true;
    }
  }
  return false;
}

bool offroad_any(std::span<const Vec2> positions, const ScenarioLog& scene, bool final_only) {
  if (positions.empty()) throw std::invalid_argument("offroad_any: no positions");
  if (final_only) return is_offroad(positions.back(), scene.lanes, scene.lane_half_width);
  for (const auto& p : positions)
    if (is_offroad(p, scene.lanes, scene.lane_half_width)) return true;
  return false;
}

ScenarioMetrics evaluate_scenario(const ScenarioLog& scene, const SceneCache& cache,
                                  const PredictorParams& params, int eval_h_step,
                                  const EvalConfig& cfg) {
  const int n_modes = params.config.num_modes;
  std::vector<std::vector<Vec2>> episodes;
  std::vector<std::vector<Pose2D>> episode_poses;
  std::vector<double> probs;
  episodes.reserve(static_cast<std::size_t>(n_modes));
  for (int m = 0; m < n_modes; ++m) {
    RolloutConfig rc;
    rc.h_pred = cfg.h_pred;
    rc.h_step = eval_h_step;
    rc.wiring = Wiring::kDetached;  // values only; wiring is irrelevant on doubles
    rc.mode_policy = ModePolicy::kFixedMode;
    rc.fixed_mode = m;
    rc.v_min = cfg.v_min;
    const EvalTrace trace = rollout_eval(scene, cache, params, cfg.features, rc);
    std::vector<Vec2> pos;
    pos.reserve(trace.executed_poses.size());
    for (const auto& p : trace.executed_poses) pos.push_back({p.x, p.y});
    episodes.push_back(std::move(pos));
    episode_poses.push_back(trace.executed_poses);
    if (m == 0) probs = trace.first_probs;  // tick-0 query is identical across episodes
  }
  // The horizon may be a prefix of the logged future; score against that prefix.
  std::vector<Vec2> gt = scene.target_future();
  if (gt.size() > static_cast<std::size_t>(cfg.h_pred))
    gt.resize(static_cast<std::size_t>(cfg.h_pred));

  ScenarioMetrics out;
  const auto top1 = displacement_metrics(episodes, probs, gt, 1, cfg.miss_threshold);
  const auto top5 = displacement_metrics(episodes, probs, gt, 5, cfg.miss_threshold);
  out.min_ade1 = top1.min_ade;
  out.min_fde1 = top1.min_fde;
  out.miss1 = top1.miss;
  out.min_ade5 = top5.min_ade;
  out.min_fde5 = top5.min_fde;
  out.miss5 = top5.miss;

  std::size_t best = 0;
  for (std::size_t m = 1; m < probs.size(); ++m)
    if (probs[m] > probs[best]) best = m;
  out.collision = collision_any(episode_poses[best], scene);
  out.offroad = offroad_any(episodes[best], scene, cfg.offroad_final_only);
  return out;
}

MetricAggregate evaluate_corpus(const std::vector<ScenarioLog>& corpus,
                                const PredictorParams& params, int eval_h_step,
                                const EvalConfig& cfg) {
  if (corpus.empty()) throw DataError("evaluation corpus is empty");
  std::vector<ScenarioMetrics> rows(corpus.size());
  parallel_for(corpus.size(), cfg.workers, [&](std::size_t i) {
    const SceneCache cache = SceneCache::build(corpus[i], cfg.features);
    rows[i] = evaluate_scenario(corpus[i], cache, params, eval_h_step, cfg);
  });
  MetricAggregate agg;
  agg.n_scenarios = static_cast<int>(corpus.size());
  for (const auto& r : rows) {
    agg.min_ade1 += r.min_ade1;
    agg.min_fde1 += r.min_fde1;
    agg.miss_rate1 += r.miss1 ? 1.0 : 0.0;
    agg.min_ade5 += r.min_ade5;
    agg.min_fde5 += r.min_fde5;
    agg.miss_rate5 += r.miss5 ? 1.0 : 0.0;
    agg.collision_rate += r.collision ? 1.0 : 0.0;
    agg.offroad_rate += r.offroad ? 1.0 : 0.0;
  }
  const double inv = 1.0 / static_cast<double>(corpus.size());
  agg.min_ade1 *= inv;
  agg.min_fde1 *= inv;
  agg.miss_rate1 *= inv;
  agg.min_ade5 *= inv;
  agg.min_fde5 *= inv;
  agg.miss_rate5 *= inv;
  agg.collision_rate *= inv;
  agg.offroad_rate *= inv;
  return agg;
}

namespace {

int regime_order(Regime r) {
  switch (r) {
    case Regime::kOpenLoop: return 0;
    case Regime::kClosedLoopDiff: return 1;
    case Regime::kClosedLoopNonDiff: return 2;
  }
  return 3;
}

MetricStats stats_of(const std::vector<double>& xs) {
  MetricStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

SweepResult sweep(std::span<const ModelRun> runs, const std::vector<ScenarioLog>& corpus,
                  std::span<const int> eval_h_steps, const EvalConfig& cfg) {
  if (runs.empty()) throw DataError("sweep: no model runs");
  if (eval_h_steps.empty()) throw DataError("sweep: no eval h_steps");

  // (regime, train_h, eval_h) -> per-seed aggregates, seeds in run order.
  std::map<std::tuple<int, int, int>, std::vector<MetricAggregate>> groups;
  for (const auto& run : runs) {
    for (int eh : eval_h_steps) {
      const MetricAggregate agg = evaluate_corpus(corpus, run.params, eh, cfg);
      groups[{regime_order(run.regime), run.train_h_step, -eh}].push_back(agg);
    }
  }

  SweepResult out;
  for (const auto& [key, aggs] : groups) {
    SweepCell cell;
    cell.regime = std::get<0>(key) == 0   ? Regime::kOpenLoop
                  : std::get<0>(key) == 1 ? Regime::kClosedLoopDiff
                                          : Regime::kClosedLoopNonDiff;
    cell.train_h_step = std::get<1>(key);
    cell.eval_h_step = -std::get<2>(key);
    cell.n_seeds = static_cast<int>(aggs.size());
    cell.n_scenarios = aggs.front().n_scenarios;
    const auto collect = [&](auto member) {
      std::vector<double> xs;
      xs.reserve(aggs.size());
      for (const auto& a : aggs) xs.push_back(a.*member);
      return stats_of(xs);
    };
    cell.min_ade1 = collect(&MetricAggregate::min_ade1);
    cell.min_fde1 = collect(&MetricAggregate::min_fde1);
    cell.miss_rate1 = collect(&MetricAggregate::miss_rate1);
    cell.min_ade5 = collect(&MetricAggregate::min_ade5);
    cell.min_fde5 = collect(&MetricAggregate::min_fde5);
    cell.miss_rate5 = collect(&MetricAggregate::miss_rate5);
    cell.collision_rate = collect(&MetricAggregate::collision_rate);
    cell.offroad_rate = collect(&MetricAggregate::offroad_rate);
    out.cells.push_back(cell);
  }
  return out;
}

std::optional<const SweepCell*> find_cell(const SweepResult& grid, Regime regime,
                                          int train_h_step, int eval_h_step) {
  for (const auto& c : grid.cells)
    if (c.regime == regime && c.train_h_step == train_h_step && c.eval_h_step == eval_h_step)
      return &c;
  return std::nullopt;
}

std::vector<ReductionRow> collision_reductions(const SweepResult& grid) {
  std::vector<ReductionRow> rows;
  const auto reduction = [](double a, double b) {
    return a == 0.0 ? std::numeric_limits<double>::quiet_NaN() : (a - b) / a * 100.0;
  };
  for (const auto& cand : grid.cells) {
    if (cand.regime != Regime::kClosedLoopNonDiff) continue;
    if (const auto base =
            find_cell(grid, Regime::kClosedLoopDiff, cand.train_h_step, cand.eval_h_step)) {
      rows.push_back({Regime::kClosedLoopDiff, cand.train_h_step, cand.eval_h_step,
                      (*base)->collision_rate.mean, cand.collision_rate.mean,
                      reduction((*base)->collision_rate.mean, cand.collision_rate.mean)});
    }
    // ol has a single training condition; compare at matching eval step.
    for (const auto& base : grid.cells) {
      if (base.regime != Regime::kOpenLoop || base.eval_h_step != cand.eval_h_step) continue;
      rows.push_back({Regime::kOpenLoop, cand.train_h_step, cand.eval_h_step,
                      base.collision_rate.mean, cand.collision_rate.mean,
                      reduction(base.collision_rate.mean, cand.collision_rate.mean)});
    }
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": invalid number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": invalid integer '" + s + "'");
  }
}

constexpr const char* kMetricNames[] = {"min_ade_k1",  "min_fde_k1",  "miss_rate_k1",
                                        "min_ade_k5",  "min_fde_k5",  "miss_rate_k5",
                                        "collision_rate", "offroad_rate"};

MetricStats* cell_metric(SweepCell& c, const std::string& name) {
  if (name == "min_ade_k1") return &c.min_ade1;
  if (name == "min_fde_k1") return &c.min_fde1;
  if (name == "miss_rate_k1") return &c.miss_rate1;
  if (name == "min_ade_k5") return &c.min_ade5;
  if (name == "min_fde_k5") return &c.min_fde5;
  if (name == "miss_rate_k5") return &c.miss_rate5;
  if (name == "collision_rate") return &c.collision_rate;
  if (name == "offroad_rate") return &c.offroad_rate;
  return nullptr;
}

}  // namespace

void write_metrics_csv(const SweepResult& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "regime,train_h_step,eval_h_step,metric,mean,std,n_seeds,n_scenarios\n";
  for (const auto& c : grid.cells) {
    const MetricStats* stats[] = {&c.min_ade1, &c.min_fde1, &c.miss_rate1, &c.min_ade5,
                                  &c.min_fde5, &c.miss_rate5, &c.collision_rate, &c.offroad_rate};
    for (std::size_t i = 0; i < std::size(kMetricNames); ++i) {
      out << to_string(c.regime) << ',' << c.train_h_step << ',' << c.eval_h_step << ','
          << kMetricNames[i] << ',' << fmt(stats[i]->mean) << ',' << fmt(stats[i]->stddev) << ','
          << c.n_seeds << ',' << c.n_scenarios << "\n";
    }
  }
}

SweepResult read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics csv '" + path.string() + "'");
  std::string line;
  int row = 0;
  SweepResult grid;
  // (regime, train_h, eval_h) -> index into cells
  std::map<std::tuple<std::string, int, int>, std::size_t> index;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    if (row == 1) {
      if (line != "regime,train_h_step,eval_h_step,metric,mean,std,n_seeds,n_scenarios")
        throw DataError(where + ": unexpected metrics header");
      continue;
    }
    const auto cols = split_csv_row(line);
    if (cols.size() != 8) throw DataError(where + ": expected 8 columns, got " +
                                          std::to_string(cols.size()));
    const int train_h = parse_int(cols[1], where);
    const int eval_h = parse_int(cols[2], where);
    const auto key = std::make_tuple(cols[0], train_h, eval_h);
    auto it = index.find(key);
    if (it == index.end()) {
      SweepCell cell;
      cell.regime = regime_from_string(cols[0]);
      cell.train_h_step = train_h;
      cell.eval_h_step = eval_h;
      cell.n_seeds = parse_int(cols[6], where);
      cell.n_scenarios = parse_int(cols[7], where);
      grid.cells.push_back(cell);
      it = index.emplace(key, grid.cells.size() - 1).first;
    }
    MetricStats* slot = cell_metric(grid.cells[it->second], cols[3]);
    if (!slot) throw DataError(where + ": unknown metric '" + cols[3] + "'");
    slot->mean = parse_double(cols[4], where);
    slot->stddev = parse_double(cols[5], where);
  }
  return grid;
}

void write_reduction_csv(std::span<const ReductionRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "baseline_regime,candidate_regime,train_h_step,eval_h_step,baseline_collision,"
         "candidate_collision,reduction_pct\n";
  for (const auto& r : rows) {
    out << to_string(r.baseline) << ",cl-nondiff," << r.train_h_step << ',' << r.eval_h_step << ','
        << fmt(r.baseline_collision) << ',' << fmt(r.candidate_collision) << ','
        << fmt(r.reduction_pct) << "\n";
  }
}

std::vector<ReductionRow> read_reduction_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open reduction csv '" + path.string() + "'");
  std::string line;
  int row = 0;
  std::vector<ReductionRow> rows;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    if (row == 1) {
      if (line !=
          "baseline_regime,candidate_regime,train_h_step,eval_h_step,baseline_collision,"
          "candidate_collision,reduction_pct")
        throw DataError(where + ": unexpected reduction header");
      continue;
    }
    const auto cols = split_csv_row(line);
    if (cols.size() != 7)
      throw DataError(where + ": expected 7 columns, got " + std::to_string(cols.size()));
    ReductionRow r;
    r.baseline = regime_from_string(cols[0]);
    r.train_h_step = parse_int(cols[2], where);
    r.eval_h_step = parse_int(cols[3], where);
    r.baseline_collision = parse_double(cols[4], where);
    r.candidate_collision = parse_double(cols[5], where);
    r.reduction_pct = parse_double(cols[6], where);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace replan
