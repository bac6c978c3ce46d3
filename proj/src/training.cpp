#include "replan/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "replan/parallel.hpp"
#include "replan/rng.hpp"

namespace replan {

Regime regime_from_string(const std::string& name) {
  if (name == "ol") return Regime::kOpenLoop;
  if (name == "cl-diff") return Regime::kClosedLoopDiff;
  if (name == "cl-nondiff") return Regime::kClosedLoopNonDiff;
  throw DataError("unknown regime '" + name + "' (expected ol|cl-diff|cl-nondiff)");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kOpenLoop: return "ol";
    case Regime::kClosedLoopDiff: return "cl-diff";
    case Regime::kClosedLoopNonDiff: return "cl-nondiff";
  }
  throw std::invalid_argument("bad regime enum");
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("adam: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

std::vector<double> lambda_weights(int samples, LambdaMode mode, double decay) {
  if (samples < 1) throw std::invalid_argument("lambda_weights: samples must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(samples));
  if (mode == LambdaMode::kUniform) {
    std::fill(w.begin(), w.end(), 1.0 / samples);
  } else {
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
      w[static_cast<std::size_t>(s)] = std::pow(decay, s);
      acc += w[static_cast<std::size_t>(s)];
    }
    for (auto& v : w) v /= acc;
  }
  return w;
}

RolloutConfig rollout_config_for(const TrainConfig& cfg) {
  RolloutConfig rc;
  rc.h_pred = cfg.h_pred;
  rc.mode_policy = ModePolicy::kBestMatching;
  rc.v_min = cfg.v_min;
  switch (cfg.regime) {
    case Regime::kOpenLoop:
      rc.h_step = cfg.h_pred;
      rc.wiring = Wiring::kDetached;
      break;
    case Regime::kClosedLoopDiff:
      rc.h_step = cfg.train_h_step;
      rc.wiring = Wiring::kDifferentiable;
      break;
    case Regime::kClosedLoopNonDiff:
      rc.h_step = cfg.train_h_step;
      rc.wiring = Wiring::kDetached;
      break;
  }
  return rc;
}

std::vector<ad::Value> lift_params(ad::Tape& tape, std::span<const double> flat) {
  std::vector<ad::Value> out;
  out.reserve(flat.size());
  for (double v : flat) out.push_back(tape.input(v));
  return out;
}

void accumulate_param_grads(std::span<const ad::Value> lifted, std::span<double> grad) {
  if (lifted.size() != grad.size())
    throw std::invalid_argument("accumulate_param_grads: size mismatch");
  for (std::size_t i = 0; i < lifted.size(); ++i) grad[i] += lifted[i].grad();
}

ad::Value objective(const RolloutTrace& trace, std::span<const double> lambda) {
  if (trace.steps.size() != lambda.size())
    throw std::invalid_argument("objective: lambda count must equal sample count");
  ad::Value acc = (trace.steps[0].reg_loss + trace.steps[0].cls_loss) * lambda[0];
  for (std::size_t s = 1; s < trace.steps.size(); ++s)
    acc = acc + (trace.steps[s].reg_loss + trace.steps[s].cls_loss) * lambda[s];
  return acc;
}

ScenarioGrad scenario_gradient(const ScenarioLog& scene, const SceneCache& cache,
                               const PredictorParams& params, const FeatureConfig& fc,
                               const RolloutConfig& rc, std::span<const double> lambda) {
  ad::Tape tape;
  const std::vector<ad::Value> lifted = lift_params(tape, params.flat);
  ScenarioGrad out;
  out.grad.assign(params.flat.size(), 0.0);
  TapeOps ops{&tape};

  if (rc.wiring == Wiring::kDetached) {
    // Per-sample backward + truncate: each step's graph dies once its
    // gradient is banked, so tape memory stays flat w.r.t. sample count.
    const std::size_t base = tape.mark();
    RolloutEngineT<ad::Value, TapeOps> engine(scene, cache, params.config, fc, lifted, rc, ops);
    while (!engine.done()) {
      const auto rec = engine.step();
      const ad::Value weighted =
          (rec.reg_loss + rec.cls_loss) * lambda[static_cast<std::size_t>(rec.sample)];
      tape.backward(weighted);
      accumulate_param_grads(lifted, out.grad);
      out.loss += weighted.value();
      if (!engine.done()) {
        tape.truncate(base);
        engine.refresh_carry();
      }
    }
  } else {
    RolloutEngineT<ad::Value, TapeOps> engine(scene, cache, params.config, fc, lifted, rc, ops);
    const RolloutTrace trace = engine.run();
    const ad::Value obj = objective(trace, lambda);
    tape.backward(obj);
    accumulate_param_grads(lifted, out.grad);
    out.loss = obj.value();
  }
  return out;
}

TrainResult train(const std::vector<ScenarioLog>& corpus, const TrainConfig& cfg) {
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (cfg.model.feature_dim != cfg.features.dim())
    throw DataError("model feature_dim " + std::to_string(cfg.model.feature_dim) +
                    " does not match feature config dim " + std::to_string(cfg.features.dim()));
  if (cfg.model.horizon < cfg.h_pred)
    throw DataError("model horizon shorter than rollout h_pred");
  const RolloutConfig rc = rollout_config_for(cfg);
  const std::vector<double> lambda =
      lambda_weights(rc.sample_count(), cfg.lambda_mode, cfg.lambda_decay);

  std::vector<SceneCache> caches;
  caches.reserve(corpus.size());
  for (const auto& scene : corpus) caches.push_back(SceneCache::build(scene, cfg.features));

  TrainResult result;
  result.params = cfg.init_from.empty() ? init_params(cfg.model, cfg.seed)
                                        : load_checkpoint(cfg.init_from);
  if (result.params.config != cfg.model)
    throw DataError("warm-start checkpoint config does not match the training config");

  const std::size_t n_params = result.params.flat.size();
  Adam adam(n_params, cfg.adam);
  PredictorParams last_good = result.params;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Deterministic per-epoch shuffle (Fisher-Yates on a salted stream).
    Rng shuffle_rng(Rng::mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size() && finite;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bn = end - start;
      std::vector<ScenarioGrad> grads(bn);
      std::vector<std::string> failures(bn);
      parallel_for(bn, cfg.workers, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        try {
          grads[k] = scenario_gradient(corpus[idx], caches[idx], result.params, cfg.features, rc,
                                       lambda);
        } catch (const DivergenceError& e) {
          failures[k] = e.what();
        }
      });
      std::vector<double> mean_grad(n_params, 0.0);
      for (std::size_t k = 0; k < bn; ++k) {
        if (!failures[k].empty()) {
          finite = false;
          break;
        }
        for (std::size_t i = 0; i < n_params; ++i) mean_grad[i] += grads[k].grad[i];
        epoch_loss += grads[k].loss;
        if (!std::isfinite(grads[k].loss)) finite = false;
      }
      if (!finite) break;
      const double inv = 1.0 / static_cast<double>(bn);
      for (auto& g : mean_grad) {
        g *= inv;
        if (!std::isfinite(g)) finite = false;
      }
      if (!finite) break;
      adam.step(result.params.flat, mean_grad);
      for (double v : result.params.flat)
        if (!std::isfinite(v)) finite = false;
    }

    if (!finite) {
      result.params = last_good;
      result.diverged = true;
      result.diverged_epoch = epoch;
      break;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(corpus.size()));
    last_good = result.params;
  }

  if (!cfg.run_dir.empty()) {
    std::filesystem::create_directories(cfg.run_dir);
    save_checkpoint(result.params, cfg.run_dir / "checkpoint.json");
    std::ofstream loss_csv(cfg.run_dir / "loss.csv");
    loss_csv << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, result.epoch_loss[e]);
      loss_csv << buf;
    }
  }
  return result;
}

double finite_diff_audit(const PredictorParams& params, const ScenarioLog& scene,
                         const AuditConfig& cfg) {
  const SceneCache cache = SceneCache::build(scene, cfg.features);
  const std::vector<double> lambda =
      lambda_weights(cfg.rollout.sample_count(), cfg.lambda_mode, cfg.lambda_decay);

  // Base run: record branch decisions and carried states, take gradients.
  RolloutPins pins;
  std::vector<double> g_ad(params.flat.size(), 0.0);
  {
    ad::Tape tape;
    const auto lifted = lift_params(tape, params.flat);
    TapeOps ops{&tape};
    RolloutHooks hooks;
    hooks.record = &pins;
    RolloutEngineT<ad::Value, TapeOps> engine(scene, cache, params.config, cfg.features, lifted,
                                              cfg.rollout, ops, hooks);
    const RolloutTrace trace = engine.run();
    tape.backward(objective(trace, lambda));
    accumulate_param_grads(lifted, g_ad);
  }

  // Objective as a plain function of the parameters with the base run's
  // branches pinned; under detached wiring the carried states are pinned too
  // (they are constants w.r.t. the parameters by construction).
  const auto pinned_objective = [&](const std::vector<double>& flat) {
    RolloutHooks hooks;
    hooks.pins = &pins;
    hooks.pin_selection = true;
    hooks.pin_carry = cfg.rollout.wiring == Wiring::kDetached;
    RolloutEngineT<double, DoubleOps> engine(scene, cache, params.config, cfg.features,
                                             std::span<const double>(flat), cfg.rollout,
                                             DoubleOps{}, hooks);
    double loss = 0.0;
    while (!engine.done()) {
      const auto rec = engine.step();
      loss += (rec.reg_loss + rec.cls_loss) * lambda[static_cast<std::size_t>(rec.sample)];
    }
    return loss;
  };

  double max_rel = 0.0;
  std::vector<double> flat = params.flat;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + cfg.fd_step;
    const double plus = pinned_objective(flat);
    flat[i] = keep - cfg.fd_step;
    const double minus = pinned_objective(flat);
    flat[i] = keep;
    const double fd = (plus - minus) / (2.0 * cfg.fd_step);
    const double diff = std::fabs(g_ad[i] - fd);
    if (diff <= cfg.exact_floor) continue;  // zero-gradient directions agree exactly
    max_rel = std::max(max_rel, diff / std::max(std::fabs(g_ad[i]), std::fabs(fd)));
  }
  return max_rel;
}

}  // namespace replan
