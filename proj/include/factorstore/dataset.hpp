#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "factorstore/cache.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/eval.hpp"
#include "factorstore/expr.hpp"
#include "factorstore/frame.hpp"
#include "factorstore/parallel.hpp"
#include "factorstore/pool.hpp"
#include "factorstore/storage.hpp"

namespace factorstore {

struct QuerySpec {
  std::string pool;                      // pool file name; empty when instruments are explicit
  std::vector<std::string> instruments;  // explicit symbols, used when pool is empty
  std::vector<std::string> expressions;  // expression texts in column order
  Date start{};
  Date end{};
  std::string frequency = "day";
};

struct BuildConfig {
  bool use_expr_cache = false;
  bool use_dataset_cache = false;
  std::size_t workers = 1;
  std::size_t memo_capacity = 500;
};

/// Wall-clock seconds per pipeline stage; stages are barrier-separated so
/// total (measured around everything) is at least each stage.
struct StageTimings {
  double load = 0.0;
  double compute = 0.0;
  double convert_index = 0.0;
  double filter_pool = 0.0;
  double combine = 0.0;
  double total = 0.0;
};

struct BuildStats {
  std::uint64_t nodes_computed = 0;   // expression nodes actually evaluated
  std::uint64_t memo_hits = 0;
  std::uint64_t raw_values_read = 0;  // f32 values read from feature files
  std::uint64_t expr_cache_hits = 0;
  std::uint64_t expr_cache_tails = 0;
  std::uint64_t expr_cache_misses = 0;
  bool dataset_cache_hit = false;
  bool dataset_cache_tail = false;
};

struct BuildResult {
  AlignedFrame frame;
  StageTimings timings;
  BuildStats stats;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Columns reordered to `want` (an order-permutation of f's columns). Takes
/// the frame by value so expendable inputs move their row keys through (and
/// the whole frame when the order already matches).
inline AlignedFrame permute_columns(AlignedFrame f, const std::vector<std::string>& want) {
  if (f.columns == want) return f;
  std::vector<std::size_t> perm(want.size());
  for (std::size_t j = 0; j < want.size(); ++j) {
    const auto it = std::find(f.columns.begin(), f.columns.end(), want[j]);
    if (it == f.columns.end())
      raise(Errc::corrupt_entry, "cached frame lacks column " + want[j]);
    perm[j] = static_cast<std::size_t>(it - f.columns.begin());
  }
  AlignedFrame out;
  out.columns = want;
  out.rows = std::move(f.rows);
  out.cells.resize(out.rows.size() * want.size());
  const std::size_t stored_cols = f.columns.size();
  for (std::size_t r = 0; r < out.rows.size(); ++r)
    for (std::size_t j = 0; j < want.size(); ++j)
      out.cells[r * want.size() + j] = f.cells[r * stored_cols + perm[j]];
  return out;
}

inline AlignedFrame sort_columns(AlignedFrame f) {
  std::vector<std::string> sorted = f.columns;
  std::sort(sorted.begin(), sorted.end());
  return permute_columns(std::move(f), sorted);
}

struct HeldLock {
  std::shared_ptr<std::mutex> mutex;
  std::unique_lock<std::mutex> lock;
};

}  // namespace detail

/// Staged dataset construction: resolve pool, then per instrument load raw
/// data or cached values, compute expressions, materialize row keys, filter to
/// pool membership, and finally combine into one frame. Filtering runs after
/// computation because derived values at an in-pool day may depend on raw
/// history from out-of-pool days.
class DatasetBuilder {
 public:
  DatasetBuilder(const Store& store, DiskCache& cache) : store_(store), cache_(cache) {}

  BuildResult build(const QuerySpec& spec, const BuildConfig& config) const {
    const auto t_start = std::chrono::steady_clock::now();
    if (spec.expressions.empty()) raise(Errc::empty_range, "query has no expressions");

    std::vector<ExprPtr> exprs;
    std::vector<std::string> canonicals;
    int max_lookback = 0;
    for (const auto& text : spec.expressions) {
      exprs.push_back(parse(text));
      canonicals.push_back(canonical_key(*exprs.back()));
      max_lookback = std::max(max_lookback, lookback(*exprs.back()));
    }

    const Calendar cal = store_.read_calendar(spec.frequency);
    if (cal.empty()) raise(Errc::empty_range, "calendar is empty");
    if (spec.end < spec.start)
      raise(Errc::empty_range, "start " + to_string(spec.start) + " is after end " +
                                   to_string(spec.end));
    if (spec.end < cal.at(0) || cal.at(cal.size() - 1) < spec.start)
      raise(Errc::empty_range, "no calendar points in [" + to_string(spec.start) + ", " +
                                   to_string(spec.end) + "]");
    const std::int64_t lo = cal.index_of(spec.start, Rounding::forward);
    const std::int64_t hi = cal.index_of(spec.end, Rounding::backward);
    if (lo > hi)
      raise(Errc::empty_range, "no calendar points in [" + to_string(spec.start) + ", " +
                                   to_string(spec.end) + "]");

    std::string pool_id;
    if (!spec.pool.empty()) {
      pool_id = spec.pool;
      if (!store_.pool_exists(spec.pool))
        raise(Errc::missing_pool, "no pool '" + spec.pool + "'");
    } else {
      if (spec.instruments.empty()) raise(Errc::missing_pool, "no pool and no instruments");
      auto sorted = spec.instruments;
      std::sort(sorted.begin(), sorted.end());
      sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
      pool_id = "instruments:";
      for (std::size_t i = 0; i < sorted.size(); ++i)
        pool_id += (i ? "," : "") + sorted[i];
    }

    BuildResult result;
    const auto version = static_cast<std::uint64_t>(cal.size());

    if (config.use_dataset_cache) {
      const std::string ds_key = DiskCache::dataset_key(canonicals, pool_id, spec.frequency);
      const auto key_mutex = cache_.key_locks().acquire(ds_key);
      std::lock_guard key_guard(*key_mutex);

      auto t_load = std::chrono::steady_clock::now();
      auto looked = cache_.dataset_lookup(ds_key, lo, hi);
      if (looked.outcome == CacheOutcome::hit) {
        result.frame = detail::permute_columns(std::move(looked.frame), canonicals);
        result.timings.load = detail::seconds_since(t_load);
        result.timings.total = detail::seconds_since(t_start);
        result.stats.dataset_cache_hit = true;
        return result;
      }
      const double lookup_seconds = detail::seconds_since(t_load);
      if (looked.outcome == CacheOutcome::partial_tail) {
        const std::int64_t from = looked.covered_hi + 1;
        AlignedFrame tail = pipeline(spec, config, exprs, canonicals, cal, from, hi, max_lookback,
                                     version, result.timings, result.stats);
        cache_.dataset_append(ds_key, from, hi, detail::sort_columns(std::move(tail)), version);
        t_load = std::chrono::steady_clock::now();
        auto merged = cache_.dataset_lookup(ds_key, lo, hi);
        if (merged.outcome != CacheOutcome::hit)
          raise(Errc::corrupt_entry, "dataset cache entry unreadable after append");
        result.frame = detail::permute_columns(std::move(merged.frame), canonicals);
        result.timings.load += lookup_seconds + detail::seconds_since(t_load);
        result.timings.total = detail::seconds_since(t_start);
        result.stats.dataset_cache_tail = true;
        return result;
      }
      result.frame = pipeline(spec, config, exprs, canonicals, cal, lo, hi, max_lookback, version,
                              result.timings, result.stats);
      cache_.dataset_put(ds_key, lo, hi, detail::sort_columns(result.frame), version);
      result.timings.load += lookup_seconds;
      result.timings.total = detail::seconds_since(t_start);
      return result;
    }

    result.frame = pipeline(spec, config, exprs, canonicals, cal, lo, hi, max_lookback, version,
                            result.timings, result.stats);
    result.timings.total = detail::seconds_since(t_start);
    return result;
  }

 private:
  struct ExprState {
    enum class Kind { hit, tail, miss } kind = Kind::miss;
    std::vector<float> head;      // hit: full column; tail: cached prefix [lo, tail_from)
    std::int64_t tail_from = -1;  // tail only: first index to compute
  };

  struct Task {
    std::string symbol;
    const std::vector<IndexInterval>* intervals = nullptr;
    std::vector<ExprState> states;
    std::vector<detail::HeldLock> locks;  // expr-cache key locks, held load → compute
    MemorySeriesSource raw;
    std::vector<std::vector<float>> columns;  // per expression, aligned to [lo, hi]
    std::vector<RowKey> keys;
    AlignedFrame block;  // filtered rows + cells, columns left empty
  };

  /// The five barrier-separated stages over [lo, hi].
  AlignedFrame pipeline(const QuerySpec& spec, const BuildConfig& config,
                        const std::vector<ExprPtr>& exprs,
                        const std::vector<std::string>& canonicals, const Calendar& cal,
                        std::int64_t lo, std::int64_t hi, int max_lookback, std::uint64_t version,
                        StageTimings& timings, BuildStats& stats) const {
    // --- Load: pool resolution, cache lookups, raw ranges into RAM ---
    auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, std::vector<IndexInterval>> memberships;
    if (!spec.pool.empty()) {
      memberships = resolve_pool(store_.read_pool(spec.pool), cal, lo, hi);
    } else {
      for (const auto& symbol : spec.instruments) memberships[symbol] = {IndexInterval{lo, hi}};
    }

    std::set<std::string> wanted_attrs;
    for (const auto& e : exprs) collect_attributes(*e, wanted_attrs);
    if (!memberships.empty() && !wanted_attrs.empty()) {
      std::set<std::string> available;
      for (const auto& [symbol, _] : memberships)
        for (const auto& a : store_.list_attributes(symbol, spec.frequency)) available.insert(a);
      for (const auto& a : wanted_attrs)
        if (!available.count(a))
          raise(Errc::unknown_attribute,
                "attribute '$" + a + "' exists for no instrument in the pool");
    }

    std::vector<Task> tasks(memberships.size());
    {
      std::size_t i = 0;
      for (auto& [symbol, intervals] : memberships) {
        tasks[i].symbol = symbol;
        tasks[i].intervals = &intervals;
        tasks[i].states.resize(exprs.size());
        ++i;
      }
    }

    std::atomic<std::uint64_t> raw_values{0}, cache_hits{0}, cache_tails{0}, cache_misses{0};
    const std::int64_t common_floor = std::max<std::int64_t>(0, lo - max_lookback);

    parallel_for(tasks.size(), config.workers, [&](std::size_t, std::size_t i) {
      Task& task = tasks[i];
      std::int64_t raw_floor = common_floor;
      bool need_raw = exprs.empty() ? false : !config.use_expr_cache;
      std::set<std::string> attrs_needed;

      if (config.use_expr_cache) {
        std::vector<std::pair<std::string, std::size_t>> keyed(exprs.size());
        for (std::size_t e = 0; e < exprs.size(); ++e)
          keyed[e] = {DiskCache::expr_key(canonicals[e], task.symbol, spec.frequency), e};
        std::sort(keyed.begin(), keyed.end());
        for (const auto& [key, e] : keyed) {
          auto m = cache_.key_locks().acquire(key);
          std::unique_lock l(*m);
          task.locks.push_back(detail::HeldLock{std::move(m), std::move(l)});
          auto& state = task.states[e];
          auto looked = cache_.expr_lookup(key, lo, hi);
          if (looked.outcome == CacheOutcome::hit) {
            state.kind = ExprState::Kind::hit;
            state.head = std::move(looked.values);
            cache_hits.fetch_add(1, std::memory_order_relaxed);
            continue;
          }
          if (looked.outcome == CacheOutcome::partial_tail) {
            state.kind = ExprState::Kind::tail;
            state.tail_from = looked.covered_hi + 1;
            if (looked.covered_hi >= lo) {
              auto head = cache_.expr_lookup(key, lo, looked.covered_hi, /*touch=*/false);
              if (head.outcome != CacheOutcome::hit)
                raise(Errc::corrupt_entry, "cache entry vanished under its key lock");
              state.head = std::move(head.values);
            }
            cache_tails.fetch_add(1, std::memory_order_relaxed);
          } else {
            state.kind = ExprState::Kind::miss;
            cache_misses.fetch_add(1, std::memory_order_relaxed);
          }
          need_raw = true;
          const std::int64_t from =
              state.kind == ExprState::Kind::tail ? state.tail_from : lo;
          raw_floor = std::min(raw_floor, std::max<std::int64_t>(0, from - max_lookback));
          collect_attributes(*exprs[e], attrs_needed);
        }
      } else {
        attrs_needed = wanted_attrs;
      }

      if (need_raw) {
        for (const auto& attr : attrs_needed) {
          auto values = store_.read_series(task.symbol, attr, spec.frequency, raw_floor, hi);
          raw_values.fetch_add(values.size(), std::memory_order_relaxed);
          task.raw.put(task.symbol, attr, raw_floor, std::move(values));
        }
      }
    });
    timings.load += detail::seconds_since(t0);

    // --- Compute Expr.: evaluate misses and tails against the RAM data ---
    t0 = std::chrono::steady_clock::now();
    EvalCounters counters;
    std::size_t memo_workers = std::max<std::size_t>(1, std::min(config.workers, tasks.size()));
    std::vector<std::unique_ptr<EvalMemo>> memos;
    memos.reserve(memo_workers);
    for (std::size_t w = 0; w < memo_workers; ++w)
      memos.push_back(std::make_unique<EvalMemo>(config.memo_capacity));

    parallel_for(tasks.size(), config.workers, [&](std::size_t worker, std::size_t i) {
      Task& task = tasks[i];
      task.columns.resize(exprs.size());
      EvalMemo& memo = *memos[worker];
      for (std::size_t e = 0; e < exprs.size(); ++e) {
        auto& state = task.states[e];
        if (state.kind == ExprState::Kind::hit) {
          task.columns[e] = std::move(state.head);
          continue;
        }
        if (state.kind == ExprState::Kind::miss) {
          auto column = evaluate_f32(*exprs[e], task.symbol, lo, hi, task.raw, &memo, &counters,
                                     common_floor);
          if (config.use_expr_cache)
            cache_.expr_put(DiskCache::expr_key(canonicals[e], task.symbol, spec.frequency), lo,
                            column, version);
          task.columns[e] = std::move(column);
          continue;
        }
        const std::int64_t from = state.tail_from;
        auto tail = evaluate_f32(*exprs[e], task.symbol, from, hi, task.raw, &memo, &counters,
                                 std::max<std::int64_t>(0, from - max_lookback));
        cache_.expr_append(DiskCache::expr_key(canonicals[e], task.symbol, spec.frequency), from,
                           tail, version);
        std::vector<float> column = std::move(state.head);
        const std::size_t skip = from < lo ? static_cast<std::size_t>(lo - from) : 0;
        column.insert(column.end(), tail.begin() + static_cast<std::ptrdiff_t>(skip), tail.end());
        task.columns[e] = std::move(column);
      }
      task.locks.clear();
    });
    timings.compute += detail::seconds_since(t0);

    // --- Convert Index: positions become (instrument, timestamp) row keys ---
    t0 = std::chrono::steady_clock::now();
    parallel_for(tasks.size(), config.workers, [&](std::size_t, std::size_t i) {
      Task& task = tasks[i];
      task.keys.reserve(static_cast<std::size_t>(hi - lo + 1));
      for (std::int64_t t = lo; t <= hi; ++t) task.keys.push_back(RowKey{task.symbol, t});
    });
    timings.convert_index += detail::seconds_since(t0);

    // --- Filter by Pool: keep rows whose index lies in a membership interval ---
    t0 = std::chrono::steady_clock::now();
    parallel_for(tasks.size(), config.workers, [&](std::size_t, std::size_t i) {
      Task& task = tasks[i];
      const std::size_t ncols = exprs.size();
      for (const auto& iv : *task.intervals) {
        for (std::int64_t t = std::max(iv.lo, lo); t <= std::min(iv.hi, hi); ++t) {
          const auto offset = static_cast<std::size_t>(t - lo);
          task.block.rows.push_back(task.keys[offset]);
          for (std::size_t c = 0; c < ncols; ++c)
            task.block.cells.push_back(task.columns[c][offset]);
        }
      }
    });
    timings.filter_pool += detail::seconds_since(t0);

    // --- Combine: deterministic ordered concatenation, single-threaded ---
    t0 = std::chrono::steady_clock::now();
    AlignedFrame frame;
    frame.columns = canonicals;
    std::size_t total_rows = 0;
    for (const auto& task : tasks) total_rows += task.block.rows.size();
    frame.rows.reserve(total_rows);
    frame.cells.reserve(total_rows * exprs.size());
    for (auto& task : tasks) {
      frame.rows.insert(frame.rows.end(), task.block.rows.begin(), task.block.rows.end());
      frame.cells.insert(frame.cells.end(), task.block.cells.begin(), task.block.cells.end());
    }
    timings.combine += detail::seconds_since(t0);

    stats.nodes_computed += counters.nodes_computed.load();
    stats.memo_hits += counters.memo_hits.load();
    stats.raw_values_read += raw_values.load();
    stats.expr_cache_hits += cache_hits.load();
    stats.expr_cache_tails += cache_tails.load();
    stats.expr_cache_misses += cache_misses.load();
    return frame;
  }

  const Store& store_;
  DiskCache& cache_;
};

}  // namespace factorstore
