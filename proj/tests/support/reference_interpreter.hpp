#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "factorstore/expr.hpp"

namespace testsupport {

/// Deliberately naive oracle: materializes every node bottom-up over the full
/// series starting at calendar index 0. No working ranges, no memoization, no
/// caches, windows rescanned from scratch at every position.
class ReferenceInterpreter {
 public:
  explicit ReferenceInterpreter(std::map<std::string, std::vector<float>> series,
                                std::size_t length)
      : series_(std::move(series)), length_(length) {}

  /// Node value sequence over [0, length).
  std::vector<double> column(const factorstore::Expr& e) const {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    using namespace factorstore;
    std::vector<double> out(length_, nan);
    if (const auto* a = std::get_if<RawAttr>(&e.node)) {
      const auto it = series_.find(a->name);
      for (std::size_t t = 0; t < length_; ++t) {
        if (it != series_.end() && t < it->second.size())
          out[t] = static_cast<double>(it->second[t]);
      }
      return out;
    }
    if (const auto* c = std::get_if<Constant>(&e.node)) {
      for (auto& v : out) v = c->value;
      return out;
    }
    if (const auto* u = std::get_if<Unary>(&e.node)) {
      const auto x = column(*u->child);
      for (std::size_t t = 0; t < length_; ++t) {
        switch (u->op) {
          case UnaryOp::neg: out[t] = -x[t]; break;
          case UnaryOp::abs: out[t] = std::fabs(x[t]); break;
          case UnaryOp::log: out[t] = x[t] > 0.0 ? std::log(x[t]) : nan; break;
        }
      }
      return out;
    }
    if (const auto* b = std::get_if<Binary>(&e.node)) {
      const auto l = column(*b->lhs);
      const auto r = column(*b->rhs);
      for (std::size_t t = 0; t < length_; ++t) {
        switch (b->op) {
          case BinaryOp::add: out[t] = l[t] + r[t]; break;
          case BinaryOp::sub: out[t] = l[t] - r[t]; break;
          case BinaryOp::mul: out[t] = l[t] * r[t]; break;
          case BinaryOp::div: out[t] = r[t] == 0.0 ? nan : l[t] / r[t]; break;
          default:
            if (std::isnan(l[t]) || std::isnan(r[t])) {
              out[t] = nan;
            } else {
              bool res = false;
              switch (b->op) {
                case BinaryOp::gt: res = l[t] > r[t]; break;
                case BinaryOp::lt: res = l[t] < r[t]; break;
                case BinaryOp::ge: res = l[t] >= r[t]; break;
                case BinaryOp::le: res = l[t] <= r[t]; break;
                case BinaryOp::eq: res = l[t] == r[t]; break;
                default: break;
              }
              out[t] = res ? 1.0 : 0.0;
            }
        }
      }
      return out;
    }
    if (const auto* r = std::get_if<Ref>(&e.node)) {
      const auto x = column(*r->child);
      for (std::size_t t = 0; t < length_; ++t)
        if (t >= static_cast<std::size_t>(r->shift)) out[t] = x[t - r->shift];
      return out;
    }
    const auto& roll = std::get<Rolling>(e.node);
    const auto x = column(*roll.child);
    const std::size_t w = static_cast<std::size_t>(roll.window);
    for (std::size_t t = 0; t < length_; ++t) {
      if (t + 1 < w) continue;
      bool any_nan = false;
      for (std::size_t i = t + 1 - w; i <= t; ++i) any_nan = any_nan || std::isnan(x[i]);
      if (any_nan) continue;
      switch (roll.op) {
        case RollingOp::sum:
        case RollingOp::mean: {
          double s = 0.0;
          for (std::size_t i = t + 1 - w; i <= t; ++i) s += x[i];
          out[t] = roll.op == RollingOp::sum ? s : s / static_cast<double>(w);
          break;
        }
        case RollingOp::max: {
          double m = x[t + 1 - w];
          for (std::size_t i = t + 1 - w; i <= t; ++i) m = std::max(m, x[i]);
          out[t] = m;
          break;
        }
        case RollingOp::min: {
          double m = x[t + 1 - w];
          for (std::size_t i = t + 1 - w; i <= t; ++i) m = std::min(m, x[i]);
          out[t] = m;
          break;
        }
        case RollingOp::std: {
          if (w < 2) break;
          double s = 0.0;
          for (std::size_t i = t + 1 - w; i <= t; ++i) s += x[i];
          const double mean = s / static_cast<double>(w);
          double acc = 0.0;
          for (std::size_t i = t + 1 - w; i <= t; ++i) acc += (x[i] - mean) * (x[i] - mean);
          out[t] = std::sqrt(acc / static_cast<double>(w - 1));
          break;
        }
      }
    }
    return out;
  }

  std::vector<float> column_f32(const factorstore::Expr& e, std::int64_t lo,
                                std::int64_t hi) const {
    const auto full = column(e);
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(hi - lo + 1));
    for (std::int64_t t = lo; t <= hi; ++t) {
      const auto v = static_cast<float>(full[static_cast<std::size_t>(t)]);
      out.push_back(std::isnan(v) ? std::numeric_limits<float>::quiet_NaN() : v);
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<float>> series_;
  std::size_t length_;
};

}  // namespace testsupport
