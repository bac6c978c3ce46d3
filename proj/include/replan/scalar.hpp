#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "replan/autodiff.hpp"

namespace replan {

// The numeric kernels (features, predictor, rollout) are templated on a
// scalar S plus an Ops policy so the exact same arithmetic runs either on
// plain doubles (evaluation) or on tape values (training). `lift` turns a
// plain double into S; `to_value` reads the plain value back out — that is
// the only sanctioned way to branch on magnitudes inside templated code, so
// branch decisions never differ between the two instantiations.

struct DoubleOps {
  using Scalar = double;
  double lift(double v) const { return v; }
};

struct TapeOps {
  using Scalar = ad::Value;
  ad::Tape* tape = nullptr;
  ad::Value lift(double v) const { return tape->constant(v); }
};

inline double to_value(double v) { return v; }
inline double to_value(ad::Value v) { return v.value(); }

// double counterparts of the tape-only primitives, so unqualified calls in
// templates resolve for both scalar types (std:: covers the rest via ADL
// fallback below).
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double max2(double a, double b) { return a >= b ? a : b; }
inline double detach(double x) { return x; }
inline double recip(double x) {
  if (x == 0.0) throw std::domain_error("recip of zero");
  return 1.0 / x;
}
using std::abs;
using std::atan2;
using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::tanh;

template <class S>
S sum(std::span<const S> xs) {
  if (xs.empty()) throw std::invalid_argument("sum over empty span");
  S acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc;
}

template <class S>
S dot(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("dot expects equal non-empty spans");
  S acc = a[0] * b[0];
  for (std::size_t i = 1; i < a.size(); ++i) acc = acc + a[i] * b[i];
  return acc;
}

// y = W x + b with W row-major (rows x cols).
template <class S>
std::vector<S> matvec(std::span<const S> w, std::size_t rows, std::size_t cols,
                      std::span<const S> x, std::span<const S> bias) {
  if (w.size() != rows * cols || x.size() != cols || bias.size() != rows)
    throw std::invalid_argument("matvec shape mismatch");
  std::vector<S> y;
  y.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    S acc = bias[r];
    const auto row = w.subspan(r * cols, cols);
    for (std::size_t c = 0; c < cols; ++c) acc = acc + row[c] * x[c];
    y.push_back(acc);
  }
  return y;
}

// Numerically-stabilised softmax: subtracts the (value-level) max as a lifted
// constant, which leaves the exact gradient intact while bounding exponents.
template <class S, class Ops>
std::vector<S> softmax(std::span<const S> logits, const Ops& ops) {
  if (logits.empty()) throw std::invalid_argument("softmax over empty span");
  double m = to_value(logits[0]);
  for (const auto& v : logits) m = std::max(m, to_value(v));
  const S shift = ops.lift(-m);
  std::vector<S> e;
  e.reserve(logits.size());
  for (const auto& v : logits) e.push_back(exp(v + shift));
  S denom = e[0];
  for (std::size_t i = 1; i < e.size(); ++i) denom = denom + e[i];
  const S inv = recip(denom);
  std::vector<S> out;
  out.reserve(e.size());
  for (const auto& v : e) out.push_back(v * inv);
  return out;
}

}  // namespace replan
