#pragma once

#include <filesystem>

#include "replan/evaluation.hpp"

namespace replan {

// Renders sweep CSVs (metrics.csv + reduction.csv in sweep_dir) into a
// markdown summary and an SVG of collision rate vs evaluation re-plan step.
// Deterministic: identical CSVs produce byte-identical outputs. dt converts
// tick counts to seconds for display.
void write_report(const std::filesystem::path& sweep_dir, const std::filesystem::path& out_dir,
                  double dt);

}  // namespace replan
