#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "factorstore/errors.hpp"
#include "factorstore/expr.hpp"
#include "factorstore/lru.hpp"
#include "factorstore/provider.hpp"

namespace factorstore {

struct EvalCounters {
  std::atomic<std::uint64_t> memo_hits{0};
  std::atomic<std::uint64_t> memo_misses{0};
  std::atomic<std::uint64_t> nodes_computed{0};
};

/// Per-pass cache of intermediate node results, shared by all expressions in
/// one evaluation pass so common subtrees are computed once. Entries are keyed
/// by canonical form, instrument and working range; capacity counts entries.
class EvalMemo {
 public:
  using Column = std::shared_ptr<const std::vector<double>>;

  explicit EvalMemo(std::size_t capacity = 500) : cache_(capacity) {}

  Column get(const std::string& key) {
    std::lock_guard lock(mu_);
    if (auto hit = cache_.get(key)) return *hit;
    return nullptr;
  }

  void put(const std::string& key, Column value) {
    std::lock_guard lock(mu_);
    cache_.put(key, std::move(value));
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  mutable std::mutex mu_;
  LruCache<std::string, Column> cache_;
};

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Evaluates one tree over a fixed working range [floor, hi] for one
/// instrument. Every value at index t is a pure function of raw data in
/// [t - lookback, t], so positions at or above floor + lookback(node) are
/// exact regardless of how far the floor extends; earlier positions are NaN.
class NodeEvaluator {
 public:
  NodeEvaluator(std::string instrument, std::int64_t floor, std::int64_t hi,
                const SeriesSource& source, EvalMemo* memo, EvalCounters* counters)
      : instrument_(std::move(instrument)),
        floor_(floor),
        hi_(hi),
        source_(source),
        memo_(memo),
        counters_(counters) {}

  using Column = EvalMemo::Column;

  Column eval(const Expr& e) {
    if (memo_ == nullptr) return std::make_shared<std::vector<double>>(compute(e));
    std::string key = canonical_key(e);
    key += '\x1f';
    key += instrument_;
    key += '\x1f';
    key += std::to_string(floor_);
    key += '\x1f';
    key += std::to_string(hi_);
    if (Column hit = memo_->get(key)) {
      if (counters_ != nullptr) counters_->memo_hits.fetch_add(1, std::memory_order_relaxed);
      return hit;
    }
    if (counters_ != nullptr) counters_->memo_misses.fetch_add(1, std::memory_order_relaxed);
    auto out = std::make_shared<std::vector<double>>(compute(e));
    memo_->put(key, out);
    return out;
  }

 private:
  std::size_t length() const { return static_cast<std::size_t>(hi_ - floor_ + 1); }

  std::vector<double> compute(const Expr& e) {
    if (counters_ != nullptr) counters_->nodes_computed.fetch_add(1, std::memory_order_relaxed);
    struct Visit {
      NodeEvaluator& self;
      std::vector<double> operator()(const RawAttr& a) const { return self.compute_raw(a); }
      std::vector<double> operator()(const Constant& c) const {
        return std::vector<double>(self.length(), c.value);
      }
      std::vector<double> operator()(const Unary& u) const { return self.compute_unary(u); }
      std::vector<double> operator()(const Binary& b) const { return self.compute_binary(b); }
      std::vector<double> operator()(const Rolling& r) const { return self.compute_rolling(r); }
      std::vector<double> operator()(const Ref& r) const { return self.compute_ref(r); }
    };
    return std::visit(Visit{*this}, e.node);
  }

  std::vector<double> compute_raw(const RawAttr& a) {
    const std::vector<float> raw = source_.read_range(instrument_, a.name, floor_, hi_);
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i];
    return out;
  }

  std::vector<double> compute_unary(const Unary& u) {
    const Column child = eval(*u.child);
    std::vector<double> out(child->size());
    switch (u.op) {
      case UnaryOp::neg:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -(*child)[i];
        break;
      case UnaryOp::abs:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs((*child)[i]);
        break;
      case UnaryOp::log:
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double x = (*child)[i];
          out[i] = x > 0.0 ? std::log(x) : kNaN;
        }
        break;
    }
    return out;
  }

  std::vector<double> compute_binary(const Binary& b) {
    const Column lhs = eval(*b.lhs);
    const Column rhs = eval(*b.rhs);
    std::vector<double> out(lhs->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double a = (*lhs)[i];
      const double c = (*rhs)[i];
      switch (b.op) {
        case BinaryOp::add: out[i] = a + c; break;
        case BinaryOp::sub: out[i] = a - c; break;
        case BinaryOp::mul: out[i] = a * c; break;
        case BinaryOp::div: out[i] = c == 0.0 ? kNaN : a / c; break;
        default:
          if (std::isnan(a) || std::isnan(c)) {
            out[i] = kNaN;
          } else {
            bool r = false;
            switch (b.op) {
              case BinaryOp::gt: r = a > c; break;
              case BinaryOp::lt: r = a < c; break;
              case BinaryOp::ge: r = a >= c; break;
              case BinaryOp::le: r = a <= c; break;
              case BinaryOp::eq: r = a == c; break;
              default: break;
            }
            out[i] = r ? 1.0 : 0.0;
          }
      }
    }
    return out;
  }

  std::vector<double> compute_rolling(const Rolling& r) {
    const Column child = eval(*r.child);
    const std::size_t n = child->size();
    const std::size_t w = static_cast<std::size_t>(r.window);
    std::vector<double> out(n, kNaN);
    for (std::size_t i = w - 1; i < n; ++i) {
      const std::size_t begin = i + 1 - w;
      bool any_nan = false;
      for (std::size_t j = begin; j <= i; ++j) {
        if (std::isnan((*child)[j])) {
          any_nan = true;
          break;
        }
      }
      if (any_nan) continue;
      out[i] = aggregate(r.op, *child, begin, i);
    }
    return out;
  }

  static double aggregate(RollingOp op, const std::vector<double>& v, std::size_t begin,
                          std::size_t end) {
    switch (op) {
      case RollingOp::sum:
      case RollingOp::mean: {
        double s = 0.0;
        for (std::size_t j = begin; j <= end; ++j) s += v[j];
        return op == RollingOp::sum ? s : s / static_cast<double>(end - begin + 1);
      }
      case RollingOp::max: {
        double m = v[begin];
        for (std::size_t j = begin + 1; j <= end; ++j) m = std::max(m, v[j]);
        return m;
      }
      case RollingOp::min: {
        double m = v[begin];
        for (std::size_t j = begin + 1; j <= end; ++j) m = std::min(m, v[j]);
        return m;
      }
      case RollingOp::std: {
        const std::size_t count = end - begin + 1;
        if (count < 2) return kNaN;
        double s = 0.0;
        for (std::size_t j = begin; j <= end; ++j) s += v[j];
        const double mean = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t j = begin; j <= end; ++j) {
          const double d = v[j] - mean;
          ss += d * d;
        }
        return std::sqrt(ss / static_cast<double>(count - 1));
      }
    }
    return kNaN;
  }

  std::vector<double> compute_ref(const Ref& r) {
    const Column child = eval(*r.child);
    const std::size_t n = child->size();
    const std::size_t s = static_cast<std::size_t>(r.shift);
    std::vector<double> out(n, kNaN);
    for (std::size_t i = s; i < n; ++i) out[i] = (*child)[i - s];
    return out;
  }

  std::string instrument_;
  std::int64_t floor_;
  std::int64_t hi_;
  const SeriesSource& source_;
  EvalMemo* memo_;
  EvalCounters* counters_;
};

}  // namespace detail

/// Working floor for evaluating `e` over [lo, hi]: far enough back that every
/// position in the requested range has its full lookback window available.
inline std::int64_t working_floor(const Expr& e, std::int64_t lo) {
  return std::max<std::int64_t>(0, lo - lookback(e));
}

/// Evaluates `e` for one instrument over calendar indices [lo, hi], inclusive,
/// in double precision. `history_floor`, when given, widens the working range
/// below the default floor so that several expressions evaluated with the same
/// floor share memo entries; it never narrows it (that would lose exactness).
inline std::vector<double> evaluate(const Expr& e, const std::string& instrument, std::int64_t lo,
                                    std::int64_t hi, const SeriesSource& source,
                                    EvalMemo* memo = nullptr, EvalCounters* counters = nullptr,
                                    std::int64_t history_floor = -1) {
  if (lo < 0 || lo > hi) raise(Errc::empty_range, "evaluate: bad range");
  std::int64_t floor = working_floor(e, lo);
  if (history_floor >= 0) floor = std::min(floor, history_floor);
  detail::NodeEvaluator ev(instrument, floor, hi, source, memo, counters);
  const auto col = ev.eval(e);
  return std::vector<double>(col->begin() + (lo - floor), col->end());
}

/// Single materialization point from the double pipeline to stored f32.
/// Canonicalizes every NaN to the quiet pattern so that recomputed and
/// cache-served results are bitwise identical.
inline std::vector<float> materialize_f32(const std::vector<double>& values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = static_cast<float>(values[i]);
    out[i] = std::isnan(v) ? std::numeric_limits<float>::quiet_NaN() : v;
  }
  return out;
}

inline std::vector<float> evaluate_f32(const Expr& e, const std::string& instrument,
                                       std::int64_t lo, std::int64_t hi,
                                       const SeriesSource& source, EvalMemo* memo = nullptr,
                                       EvalCounters* counters = nullptr,
                                       std::int64_t history_floor = -1) {
  return materialize_f32(evaluate(e, instrument, lo, hi, source, memo, counters, history_floor));
}

}  // namespace factorstore
