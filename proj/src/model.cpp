#include "replan/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "replan/errors.hpp"
#include "replan/rng.hpp"

namespace replan {

using nlohmann::json;

ParamLayout ParamLayout::for_config(const ModelConfig& mc) {
  ParamLayout l;
  const auto add = [&](const std::string& name, int rows, int cols) {
    l.entries.push_back({name, rows, cols, l.total});
    l.total += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  };
  add("w0", mc.hidden_dim, mc.feature_dim);
  add("b0", mc.hidden_dim, 1);
  add("w1", mc.hidden_dim, mc.hidden_dim);
  add("b1", mc.hidden_dim, 1);
  add("w2", mc.output_dim(), mc.hidden_dim);
  add("b2", mc.output_dim(), 1);
  add("log_b", 1, 1);
  return l;
}

PredictorParams init_params(const ModelConfig& mc, std::uint64_t seed) {
  const auto layout = ParamLayout::for_config(mc);
  PredictorParams p;
  p.config = mc;
  p.flat.assign(layout.total, 0.0);
  Rng rng(Rng::mix(seed, 0x9a7a));
  for (const auto& e : layout.entries) {
    if (e.name == "w0" || e.name == "w1") {
      const double scale = 1.0 / std::sqrt(static_cast<double>(e.cols));
      for (int i = 0; i < e.rows * e.cols; ++i)
        p.flat[e.offset + static_cast<std::size_t>(i)] = scale * rng.normal();
    }
    // w2/b2 stay zero: the untrained head predicts standing still with
    // uniform mode probabilities. log_b zero means unit Laplace scale.
  }
  return p;
}

void save_checkpoint(const PredictorParams& params, const std::filesystem::path& path) {
  const auto layout = ParamLayout::for_config(params.config);
  if (params.flat.size() != layout.total)
    throw DataError("checkpoint save: parameter vector does not match its config");
  json j;
  j["record"] = "checkpoint";
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = {{"feature_dim", params.config.feature_dim},
                 {"hidden_dim", params.config.hidden_dim},
                 {"num_modes", params.config.num_modes},
                 {"horizon", params.config.horizon}};
  json shapes = json::object();
  for (const auto& e : layout.entries) shapes[e.name] = json::array({e.rows, e.cols});
  j["shapes"] = std::move(shapes);
  j["flat"] = params.flat;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump() << "\n";
}

PredictorParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {  // parse errors and number overflow alike
    throw DataError("checkpoint '" + path.string() + "': " + e.what());
  }
  const auto where = "checkpoint '" + path.string() + "'";
  if (j.value("record", "") != "checkpoint") throw DataError(where + ": not a checkpoint file");
  const int version = j.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw DataError(where + ": unsupported format_version " + std::to_string(version));
  PredictorParams p;
  try {
    const auto& c = j.at("config");
    p.config.feature_dim = c.at("feature_dim").get<int>();
    p.config.hidden_dim = c.at("hidden_dim").get<int>();
    p.config.num_modes = c.at("num_modes").get<int>();
    p.config.horizon = c.at("horizon").get<int>();
    p.flat = j.at("flat").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  const auto layout = ParamLayout::for_config(p.config);
  if (p.flat.size() != layout.total)
    throw DataError(where + ": flat parameter count " + std::to_string(p.flat.size()) +
                    " does not match config (expected " + std::to_string(layout.total) + ")");
  if (j.contains("shapes")) {
    for (const auto& e : layout.entries) {
      const auto& s = j["shapes"].at(e.name);
      if (s.at(0).get<int>() != e.rows || s.at(1).get<int>() != e.cols)
        throw DataError(where + ": shape mismatch for '" + e.name + "'");
    }
  }
  for (double v : p.flat)
    if (!std::isfinite(v)) throw DataError(where + ": non-finite parameter");
  return p;
}

}  // namespace replan
