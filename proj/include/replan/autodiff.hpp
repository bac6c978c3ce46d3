#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace replan::ad {

enum class Op : std::uint8_t {
  kInput,   // leaf (differentiable input or lifted constant)
  kAdd,     // a + b
  kMul,     // a * b
  kNeg,     // -a
  kRecip,   // 1 / a           (a == 0 rejected at forward time)
  kExp,     // exp(a)
  kLog,     // log(a)          (a <= 0 rejected at forward time)
  kAbs,     // |a|             (derivative at 0 defined as 0)
  kTanh,    // tanh(a)
  kRelu,    // max(a, 0)       (derivative at 0 defined as 0)
  kMax2,    // max(a, b)       (ties route the gradient to a)
  kSin,     // sin(a)
  kCos,     // cos(a)
  kAtan2,   // atan2(a, b)     (a=y, b=x; both partials 0 at the origin)
  kDetach,  // value of a, upstream gradient exactly 0
};

class Tape;

// Cheap handle into a Tape. Valid until the tape is destroyed or truncated
// past the node it points at. Default-constructed handles are null.
class Value {
 public:
  Value() = default;

  double value() const;
  double grad() const;
  Tape* tape() const { return tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

// Append-only record of one scalar operation. 32 bytes.
struct Node {
  double value = 0.0;
  double grad = 0.0;
  std::int32_t a = -1;
  std::int32_t b = -1;
  Op op = Op::kInput;
};

// Reverse-mode tape over scalar nodes. All graph state lives here; Values are
// indices. A rollout loop under the detached wiring can mark() between steps
// and truncate() back, re-lifting carried state, to keep memory flat.
class Tape {
 public:
  // Differentiable leaf. Non-finite payloads are rejected immediately so a
  // NaN cannot enter the graph silently.
  Value input(double v);

  // Leaf whose gradient nobody reads. Same node kind as input(); the split
  // exists so call sites document intent.
  Value constant(double v) { return input(v); }

  // Generic single-op application; validates arity and operand domain.
  // kInput is not constructible through here.
  Value apply(Op op, std::span<const Value> args);

  // Copies the value, blocks the gradient: backward() never propagates
  // through a kDetach node into its parent.
  Value detach(Value a);

  std::size_t size() const { return nodes_.size(); }

  // Checkpoint for truncate(). Returns the current node count.
  std::size_t mark() const { return nodes_.size(); }

  // Drops every node created after mark. Handles to dropped nodes become
  // invalid; the caller owns not using them afterwards.
  void truncate(std::size_t mark);

  // Reverse accumulation from root: zeroes all adjoints, seeds root with 1,
  // then walks the tape backwards. Nodes with zero adjoint are skipped, so
  // values on non-ancestor paths can never pollute gradients (0 * inf).
  // Running it twice from the same root yields identical results.
  void backward(Value root);

  double value_of(Value v) const;
  double grad_of(Value v) const;

 private:
  friend class Value;

  Value emit(Op op, double value, std::int32_t a, std::int32_t b);
  Value binary(Op op, Value a, Value b);
  Value unary(Op op, Value a);

  friend Value operator+(Value a, Value b);
  friend Value operator*(Value a, Value b);
  friend Value operator-(Value a);
  friend Value recip(Value a);
  friend Value exp(Value a);
  friend Value log(Value a);
  friend Value abs(Value a);
  friend Value tanh(Value a);
  friend Value relu(Value a);
  friend Value max2(Value a, Value b);
  friend Value sin(Value a);
  friend Value cos(Value a);
  friend Value atan2(Value y, Value x);

  std::vector<Node> nodes_;
};

// Operator sugar. Mixed Value/double forms lift the double as a constant on
// the Value's tape.
Value operator+(Value a, Value b);
Value operator-(Value a);
Value operator*(Value a, Value b);
inline Value operator-(Value a, Value b) { return a + (-b); }
Value recip(Value a);
inline Value operator/(Value a, Value b) { return a * recip(b); }
Value exp(Value a);
Value log(Value a);
Value abs(Value a);
Value tanh(Value a);
Value relu(Value a);
Value max2(Value a, Value b);
Value sin(Value a);
Value cos(Value a);
Value atan2(Value y, Value x);
Value detach(Value a);

Value lift(Tape& tape, double v);
Value operator+(Value a, double b);
Value operator+(double a, Value b);
Value operator-(Value a, double b);
Value operator-(double a, Value b);
Value operator*(Value a, double b);
Value operator*(double a, Value b);
Value operator/(Value a, double b);
Value operator/(double a, Value b);

inline Value& operator+=(Value& a, Value b) { return a = a + b; }
inline Value& operator*=(Value& a, Value b) { return a = a * b; }
inline Value& operator-=(Value& a, Value b) { return a = a - b; }

}  // namespace replan::ad
