#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "replan/geometry.hpp"
#include "replan/scalar.hpp"

namespace replan {

// Two-hidden-layer tanh MLP emitting M modes of per-tick waypoint offsets
// (cumulatively summed into target-frame waypoints) plus mode logits, and one
// global learned log-scale for the Laplace likelihood.
struct ModelConfig {
  int feature_dim = 80;
  int hidden_dim = 48;
  int num_modes = 5;     // M
  int horizon = 12;      // T_max, ticks the head always emits

  int output_dim() const { return num_modes * 2 * horizon + num_modes; }
  bool operator==(const ModelConfig&) const = default;
};

struct ParamLayout {
  struct Entry {
    std::string name;
    int rows, cols;     // cols == 1 for vectors/scalars
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;

  static ParamLayout for_config(const ModelConfig& mc);
};

struct PredictorParams {
  ModelConfig config;
  std::vector<double> flat;  // layout per ParamLayout::for_config(config)
};

// Fresh parameters: hidden layers get scaled-normal weights and zero biases;
// the output layer is all-zero so an untrained model predicts standing still
// with uniform mode probabilities; log_b starts at 0 (unit scale).
PredictorParams init_params(const ModelConfig& mc, std::uint64_t seed);

// JSON checkpoint with embedded config and layout; load validates shapes and
// flags version/shape mismatches as DataError.
void save_checkpoint(const PredictorParams& params, const std::filesystem::path& path);
PredictorParams load_checkpoint(const std::filesystem::path& path);

inline constexpr int kCheckpointFormatVersion = 1;

template <class S>
struct PredictionT {
  // modes[m][t]: waypoint t+1 in the query frame, t < horizon_emitted
  std::vector<std::vector<Vec2T<S>>> modes;
  std::vector<S> probs;  // softmax over mode logits, sums to 1
  S scale_b;             // Laplace scale, exp(log_b) > 0
};
using Prediction = PredictionT<double>;

// Forward pass; emits the first `horizon` waypoints of each mode (horizon <=
// mc.horizon; shorter horizons at late re-queries just truncate the head).
template <class S, class Ops>
PredictionT<S> predict(const ModelConfig& mc, std::span<const S> params,
                       std::span<const S> features, int horizon, const Ops& ops) {
  if (static_cast<int>(features.size()) != mc.feature_dim)
    throw std::invalid_argument("predict: feature size mismatch");
  if (horizon < 1 || horizon > mc.horizon)
    throw std::invalid_argument("predict: horizon out of range");
  const auto layout = ParamLayout::for_config(mc);
  if (params.size() != layout.total) throw std::invalid_argument("predict: param size mismatch");

  const auto h = static_cast<std::size_t>(mc.hidden_dim);
  const auto f = static_cast<std::size_t>(mc.feature_dim);
  const auto o = static_cast<std::size_t>(mc.output_dim());
  std::size_t at = 0;
  const auto take = [&](std::size_t n) {
    const auto s = params.subspan(at, n);
    at += n;
    return s;
  };
  const auto w0 = take(h * f), b0 = take(h);
  const auto w1 = take(h * h), b1 = take(h);
  const auto w2 = take(o * h), b2 = take(o);
  const S log_b = take(1)[0];

  std::vector<S> h0 = matvec<S>(w0, h, f, features, b0);
  for (auto& v : h0) v = tanh(v);
  std::vector<S> h1 = matvec<S>(w1, h, h, h0, b1);
  for (auto& v : h1) v = tanh(v);
  const std::vector<S> out = matvec<S>(w2, o, h, h1, b2);

  PredictionT<S> pred;
  pred.modes.reserve(static_cast<std::size_t>(mc.num_modes));
  for (int m = 0; m < mc.num_modes; ++m) {
    std::vector<Vec2T<S>> wp;
    wp.reserve(static_cast<std::size_t>(horizon));
    const std::size_t base = static_cast<std::size_t>(m) * 2 * static_cast<std::size_t>(mc.horizon);
    S cx = out[base + 0];
    S cy = out[base + 1];
    wp.push_back({cx, cy});
    for (int t = 1; t < horizon; ++t) {
      cx = cx + out[base + 2 * static_cast<std::size_t>(t)];
      cy = cy + out[base + 2 * static_cast<std::size_t>(t) + 1];
      wp.push_back({cx, cy});
    }
    pred.modes.push_back(std::move(wp));
  }
  const auto logits =
      std::span<const S>(out).subspan(static_cast<std::size_t>(mc.num_modes) * 2 *
                                          static_cast<std::size_t>(mc.horizon),
                                      static_cast<std::size_t>(mc.num_modes));
  pred.probs = softmax<S>(logits, ops);
  pred.scale_b = exp(log_b);
  return pred;
}

// Per-coordinate Laplace negative log-likelihood of `pred` against `truth`,
// summed over ticks: |r|/b + log(2b) per coordinate. Throws if b is not
// strictly positive at the value level.
template <class S>
S laplace_nll(std::span<const Vec2T<S>> pred, const S& b, std::span<const Vec2T<S>> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("laplace_nll: trajectory length mismatch");
  if (!(to_value(b) > 0.0)) throw std::domain_error("laplace_nll: scale must be positive");
  const S inv_b = recip(b);
  const S log_2b = log(b + b);
  S acc = (abs(pred[0].x - truth[0].x) + abs(pred[0].y - truth[0].y)) * inv_b + log_2b + log_2b;
  for (std::size_t t = 1; t < pred.size(); ++t)
    acc = acc + (abs(pred[t].x - truth[t].x) + abs(pred[t].y - truth[t].y)) * inv_b + log_2b +
          log_2b;
  return acc;
}

// Index of the mode with the smallest mean pointwise L2 distance to the
// truth, decided on plain values; ties pick the lowest index.
template <class S>
int best_mode(const PredictionT<S>& pred, std::span<const Vec2T<S>> truth) {
  int best = 0;
  double best_err = -1.0;
  for (int m = 0; m < static_cast<int>(pred.modes.size()); ++m) {
    const auto& wp = pred.modes[static_cast<std::size_t>(m)];
    if (wp.size() != truth.size()) throw std::invalid_argument("best_mode: length mismatch");
    double err = 0.0;
    for (std::size_t t = 0; t < wp.size(); ++t)
      err += std::hypot(to_value(wp[t].x) - to_value(truth[t].x),
                        to_value(wp[t].y) - to_value(truth[t].y));
    err /= static_cast<double>(wp.size());
    if (best_err < 0.0 || err < best_err) {
      best_err = err;
      best = m;
    }
  }
  return best;
}

// -log p[mode]: soft cross-entropy against the best-matching mode.
template <class S>
S classification_loss(const PredictionT<S>& pred, int mode) {
  return -log(pred.probs.at(static_cast<std::size_t>(mode)));
}

}  // namespace replan
