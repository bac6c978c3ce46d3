#include "replan/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace replan::ad {

namespace {

bool is_unary(Op op) {
  switch (op) {
    case Op::kNeg:
    case Op::kRecip:
    case Op::kExp:
    case Op::kLog:
    case Op::kAbs:
    case Op::kTanh:
    case Op::kRelu:
    case Op::kSin:
    case Op::kCos:
    case Op::kDetach:
      return true;
    default:
      return false;
  }
}

bool is_binary(Op op) {
  switch (op) {
    case Op::kAdd:
    case Op::kMul:
    case Op::kMax2:
    case Op::kAtan2:
      return true;
    default:
      return false;
  }
}

[[noreturn]] void throw_domain(const char* what, double x) {
  throw std::domain_error(std::string(what) + " (operand " + std::to_string(x) + ")");
}

}  // namespace

double Value::value() const { return tape_->value_of(*this); }
double Value::grad() const { return tape_->grad_of(*this); }

Value Tape::emit(Op op, double value, std::int32_t a, std::int32_t b) {
  Node n;
  n.value = value;
  n.a = a;
  n.b = b;
  n.op = op;
  nodes_.push_back(n);
  return Value(this, static_cast<std::int32_t>(nodes_.size()) - 1);
}

Value Tape::input(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("tape input must be finite");
  return emit(Op::kInput, v, -1, -1);
}

Value Tape::unary(Op op, Value a) {
  if (a.tape_ != this) throw std::invalid_argument("operand lives on a different tape");
  const double x = nodes_[a.id_].value;
  double v = 0.0;
  switch (op) {
    case Op::kNeg:
      v = -x;
      break;
    case Op::kRecip:
      if (x == 0.0) throw_domain("recip of zero", x);
      v = 1.0 / x;
      break;
    case Op::kExp:
      v = std::exp(x);
      break;
    case Op::kLog:
      if (x <= 0.0) throw_domain("log of non-positive value", x);
      v = std::log(x);
      break;
    case Op::kAbs:
      v = std::fabs(x);
      break;
    case Op::kTanh:
      v = std::tanh(x);
      break;
    case Op::kRelu:
      v = x > 0.0 ? x : 0.0;
      break;
    case Op::kSin:
      v = std::sin(x);
      break;
    case Op::kCos:
      v = std::cos(x);
      break;
    case Op::kDetach:
      v = x;
      break;
    default:
      throw std::invalid_argument("not a unary op");
  }
  return emit(op, v, a.id_, -1);
}

Value Tape::binary(Op op, Value a, Value b) {
  if (a.tape_ != this || b.tape_ != this)
    throw std::invalid_argument("operands live on a different tape");
  const double x = nodes_[a.id_].value;
  const double y = nodes_[b.id_].value;
  double v = 0.0;
  switch (op) {
    case Op::kAdd:
      v = x + y;
      break;
    case Op::kMul:
      v = x * y;
      break;
    case Op::kMax2:
      v = x >= y ? x : y;
      break;
    case Op::kAtan2:
      v = std::atan2(x, y);
      break;
    default:
      throw std::invalid_argument("not a binary op");
  }
  return emit(op, v, a.id_, b.id_);
}

Value Tape::apply(Op op, std::span<const Value> args) {
  if (op == Op::kInput)
    throw std::invalid_argument("inputs are created via input()/constant(), not apply()");
  if (is_unary(op)) {
    if (args.size() != 1) throw std::invalid_argument("unary op expects 1 argument");
    return unary(op, args[0]);
  }
  if (is_binary(op)) {
    if (args.size() != 2) throw std::invalid_argument("binary op expects 2 arguments");
    return binary(op, args[0], args[1]);
  }
  throw std::invalid_argument("unknown op");
}

Value Tape::detach(Value a) { return unary(Op::kDetach, a); }

void Tape::truncate(std::size_t mark) {
  if (mark > nodes_.size()) throw std::invalid_argument("truncate mark beyond tape end");
  nodes_.resize(mark);
}

double Tape::value_of(Value v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
    throw std::invalid_argument("stale or foreign value handle");
  return nodes_[v.id_].value;
}

double Tape::grad_of(Value v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
    throw std::invalid_argument("stale or foreign value handle");
  return nodes_[v.id_].grad;
}

void Tape::backward(Value root) {
  if (root.tape_ != this || root.id_ < 0 ||
      static_cast<std::size_t>(root.id_) >= nodes_.size())
    throw std::invalid_argument("backward root is not on this tape");
  for (auto& n : nodes_) n.grad = 0.0;
  nodes_[root.id_].grad = 1.0;
  for (std::int32_t i = root.id_; i >= 0; --i) {
    const Node& n = nodes_[i];
    const double g = n.grad;
    if (g == 0.0) continue;  // not an ancestor path (or exactly cancelled)
    switch (n.op) {
      case Op::kInput:
      case Op::kDetach:
        break;  // detach: value passed through, gradient stops here
      case Op::kAdd:
        nodes_[n.a].grad += g;
        nodes_[n.b].grad += g;
        break;
      case Op::kMul:
        nodes_[n.a].grad += g * nodes_[n.b].value;
        nodes_[n.b].grad += g * nodes_[n.a].value;
        break;
      case Op::kNeg:
        nodes_[n.a].grad -= g;
        break;
      case Op::kRecip: {
        const double y = n.value;  // 1/x
        nodes_[n.a].grad += g * (-y * y);
        break;
      }
      case Op::kExp:
        nodes_[n.a].grad += g * n.value;
        break;
      case Op::kLog:
        nodes_[n.a].grad += g / nodes_[n.a].value;
        break;
      case Op::kAbs: {
        const double x = nodes_[n.a].value;
        nodes_[n.a].grad += x > 0.0 ? g : (x < 0.0 ? -g : 0.0);
        break;
      }
      case Op::kTanh: {
        const double y = n.value;
        nodes_[n.a].grad += g * (1.0 - y * y);
        break;
      }
      case Op::kRelu:
        if (nodes_[n.a].value > 0.0) nodes_[n.a].grad += g;
        break;
      case Op::kMax2:
        if (nodes_[n.a].value >= nodes_[n.b].value)
          nodes_[n.a].grad += g;
        else
          nodes_[n.b].grad += g;
        break;
      case Op::kSin:
        nodes_[n.a].grad += g * std::cos(nodes_[n.a].value);
        break;
      case Op::kCos:
        nodes_[n.a].grad -= g * std::sin(nodes_[n.a].value);
        break;
      case Op::kAtan2: {
        const double y = nodes_[n.a].value;
        const double x = nodes_[n.b].value;
        const double r2 = x * x + y * y;
        if (r2 != 0.0) {
          nodes_[n.a].grad += g * (x / r2);
          nodes_[n.b].grad += g * (-y / r2);
        }
        break;
      }
    }
  }
}

namespace {
Tape& tape_of(Value a) {
  if (!a.valid()) throw std::invalid_argument("null value handle");
  return *a.tape();
}
}  // namespace

Value operator+(Value a, Value b) { return tape_of(a).binary(Op::kAdd, a, b); }
Value operator*(Value a, Value b) { return tape_of(a).binary(Op::kMul, a, b); }
Value operator-(Value a) { return tape_of(a).unary(Op::kNeg, a); }
Value recip(Value a) { return tape_of(a).unary(Op::kRecip, a); }
Value exp(Value a) { return tape_of(a).unary(Op::kExp, a); }
Value log(Value a) { return tape_of(a).unary(Op::kLog, a); }
Value abs(Value a) { return tape_of(a).unary(Op::kAbs, a); }
Value tanh(Value a) { return tape_of(a).unary(Op::kTanh, a); }
Value relu(Value a) { return tape_of(a).unary(Op::kRelu, a); }
Value max2(Value a, Value b) { return tape_of(a).binary(Op::kMax2, a, b); }
Value sin(Value a) { return tape_of(a).unary(Op::kSin, a); }
Value cos(Value a) { return tape_of(a).unary(Op::kCos, a); }
Value atan2(Value y, Value x) { return tape_of(y).binary(Op::kAtan2, y, x); }
Value detach(Value a) { return tape_of(a).detach(a); }

Value lift(Tape& tape, double v) { return tape.constant(v); }

Value operator+(Value a, double b) { return a + lift(tape_of(a), b); }
Value operator+(double a, Value b) { return lift(tape_of(b), a) + b; }
Value operator-(Value a, double b) { return a - lift(tape_of(a), b); }
Value operator-(double a, Value b) { return lift(tape_of(b), a) - b; }
Value operator*(Value a, double b) { return a * lift(tape_of(a), b); }
Value operator*(double a, Value b) { return lift(tape_of(b), a) * b; }
Value operator/(Value a, double b) { return a / lift(tape_of(a), b); }
Value operator/(double a, Value b) { return lift(tape_of(b), a) / b; }

}  // namespace replan::ad
