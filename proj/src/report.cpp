#include "replan/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

namespace replan {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string seconds_label(int ticks, double dt) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f s", ticks * dt);
  return buf;
}

std::string regime_label(Regime r) {
  switch (r) {
    case Regime::kOpenLoop: return "open-loop";
    case Regime::kClosedLoopDiff: return "closed-loop (differentiable)";
    case Regime::kClosedLoopNonDiff: return "closed-loop (detached)";
  }
  return "?";
}

struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;  // (eval step seconds, collision %)
};

void write_svg(const std::filesystem::path& path, const std::vector<Series>& series) {
  const double width = 640, height = 420;
  const double ml = 64, mr = 16, mt = 28, mb = 52;
  double xmax = 0, ymax = 0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, y);
    }
  if (ymax <= 0) ymax = 1.0;
  ymax *= 1.15;
  const double x0 = 0.0;
  const auto sx = [&](double x) { return ml + (x - x0) / (xmax - x0) * (width - ml - mr); };
  const auto sy = [&](double y) { return height - mb - y / ymax * (height - mt - mb); };

  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"14\">Collision rate vs evaluation re-plan step</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
      << "\" stroke=\"black\"/>\n";
  // y ticks
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    out << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(y) << "\" x2=\"" << ml << "\" y2=\"" << sy(y)
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << sy(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(y, 1)
        << "</text>\n";
  }
  // x ticks at the data points of the first series
  std::set<double> xticks;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) xticks.insert(x);
  for (double x : xticks) {
    out << "<line x1=\"" << sx(x) << "\" y1=\"" << height - mb << "\" x2=\"" << sx(x) << "\" y2=\""
        << height - mb + 4 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << sx(x) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(x, 1)
        << "</text>\n";
  }
  out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">re-plan step "
         "(s)</text>\n";
  out << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate("
         "-90 16 "
      << (mt + height - mb) / 2 << ")\">collision rate (%)</text>\n";
  // series
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) out << fixed(sx(x), 2) << ',' << fixed(sy(y), 2) << ' ';
    out << "\"/>\n";
    for (const auto& [x, y] : s.points)
      out << "<circle cx=\"" << fixed(sx(x), 2) << "\" cy=\"" << fixed(sy(y), 2)
          << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
  }
  // legend
  double ly = mt + 8;
  for (const auto& s : series) {
    out << "<line x1=\"" << ml + 12 << "\" y1=\"" << ly << "\" x2=\"" << ml + 36 << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + 42 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
    ly += 16;
  }
  out << "</svg>\n";
}

}  // namespace

void write_report(const std::filesystem::path& sweep_dir, const std::filesystem::path& out_dir,
                  double dt) {
  const SweepResult grid = read_metrics_csv(sweep_dir / "metrics.csv");
  const std::vector<ReductionRow> reductions = read_reduction_csv(sweep_dir / "reduction.csv");
  if (grid.cells.empty()) throw DataError("report: metrics csv has no cells");
  std::filesystem::create_directories(out_dir);

  // Distinct eval steps, slowest re-plan first (matches the sweep ordering).
  std::vector<int> eval_steps;
  for (const auto& c : grid.cells)
    if (std::find(eval_steps.begin(), eval_steps.end(), c.eval_h_step) == eval_steps.end())
      eval_steps.push_back(c.eval_h_step);
  std::sort(eval_steps.rbegin(), eval_steps.rend());

  // Distinct (regime, train_h) rows in grid order.
  std::vector<std::pair<Regime, int>> conditions;
  for (const auto& c : grid.cells) {
    const auto key = std::make_pair(c.regime, c.train_h_step);
    if (std::find(conditions.begin(), conditions.end(), key) == conditions.end())
      conditions.push_back(key);
  }

  std::ofstream md(out_dir / "report.md");
  if (!md) throw DataError("cannot open report.md for writing");
  md << "# Re-plan step sweep\n\n";
  md << "Closed-loop metrics over the evaluation corpus; " << grid.cells.front().n_scenarios
     << " scenarios, " << grid.cells.front().n_seeds
     << " training seed(s) per condition (mean +- sample stddev across seeds).\n\n";

  const auto table_for = [&](const char* title, auto getter, int digits, double scale,
                             const char* unit) {
    md << "## " << title << "\n\n";
    md << "| training condition |";
    for (int e : eval_steps) md << " " << seconds_label(e, dt) << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < eval_steps.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& [regime, train_h] : conditions) {
      md << "| " << regime_label(regime);
      if (regime != Regime::kOpenLoop) md << ", step " << seconds_label(train_h, dt);
      md << " |";
      for (int e : eval_steps) {
        const auto cell = find_cell(grid, regime, train_h, e);
        if (!cell) {
          md << " - |";
          continue;
        }
        const MetricStats& s = getter(**cell);
        md << " " << fixed(s.mean * scale, digits);
        if ((*cell)->n_seeds > 1) md << " +- " << fixed(s.stddev * scale, digits);
        md << unit << " |";
      }
      md << "\n";
    }
    md << "\n";
  };

  table_for("Collision rate", [](const SweepCell& c) -> const MetricStats& {
    return c.collision_rate;
  }, 2, 100.0, "%");
  table_for("Off-road rate", [](const SweepCell& c) -> const MetricStats& {
    return c.offroad_rate;
  }, 2, 100.0, "%");
  table_for("minADE (k=1)", [](const SweepCell& c) -> const MetricStats& {
    return c.min_ade1;
  }, 3, 1.0, " m");
  table_for("minFDE (k=1)", [](const SweepCell& c) -> const MetricStats& {
    return c.min_fde1;
  }, 3, 1.0, " m");
  table_for("minADE (k=5)", [](const SweepCell& c) -> const MetricStats& {
    return c.min_ade5;
  }, 3, 1.0, " m");
  table_for("Miss rate (k=5)", [](const SweepCell& c) -> const MetricStats& {
    return c.miss_rate5;
  }, 2, 100.0, "%");

  md << "## Collision reduction of the detached closed-loop regime\n\n";
  md << "| baseline | train step | eval step | baseline | detached | reduction |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& r : reductions) {
    md << "| " << regime_label(r.baseline) << " | " << seconds_label(r.train_h_step, dt) << " | "
       << seconds_label(r.eval_h_step, dt) << " | " << fixed(r.baseline_collision * 100.0, 2)
       << "% | " << fixed(r.candidate_collision * 100.0, 2) << "% | ";
    if (std::isnan(r.reduction_pct))
      md << "n/a";
    else
      md << fixed(r.reduction_pct, 2) << "%";
    md << " |\n";
  }
  md << "\n![collision rate vs re-plan step](collision_vs_h_step.svg)\n";

  // SVG: one series per condition.
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::vector<Series> series;
  std::size_t ci = 0;
  for (const auto& [regime, train_h] : conditions) {
    Series s;
    s.label = regime_label(regime);
    if (regime != Regime::kOpenLoop) s.label += ", step " + seconds_label(train_h, dt);
    s.color = palette[ci++ % std::size(palette)];
    for (int e : eval_steps) {
      if (const auto cell = find_cell(grid, regime, train_h, e))
        s.points.push_back({e * dt, (*cell)->collision_rate.mean * 100.0});
    }
    series.push_back(std::move(s));
  }
  write_svg(out_dir / "collision_vs_h_step.svg", series);
}

}  // namespace replan
