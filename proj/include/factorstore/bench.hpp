#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "factorstore/dataset.hpp"
#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/frame.hpp"
#include "factorstore/rng.hpp"
#include "factorstore/storage.hpp"

namespace factorstore::bench {

/// Desk-scale defaults: ~1.25M raw values, so every benchmark cell finishes
/// in seconds while the cache and parallelism effects stay measurable.
struct BenchConfig {
  std::size_t instruments = 100;
  std::size_t days = 2500;
  std::size_t pool_size = 80;
  std::vector<std::string> expressions;  // empty -> default_factor_expressions()
  std::vector<std::size_t> workers = {1};
  std::uint64_t seed = 42;
  std::size_t repetitions = 3;
  std::string frequency = "day";
  std::string pool_name = "bench";
};

/// The default factor set: fourteen OHLCV-derived features, anchored by the
/// volatility ratio and the Bollinger upper band, filled out with moving
/// averages, channels, momentum and volume ratios.
inline std::vector<std::string> default_factor_expressions() {
  return {
      "STD($close, 5)/$close",
      "(MEAN($close, 20)+2*STD($close, 20)-$close)/MEAN($close, 20)",
      "$close/REF($close, 1)-1",
      "MEAN($close, 10)/$close",
      "MAX($high, 20)/$close",
      "MIN($low, 20)/$close",
      "SUM($volume, 5)/SUM($volume, 20)",
      "($high-$low)/$open",
      "($close-$open)/$open",
      "REF($close, 5)/$close",
      "STD($volume, 10)/MEAN($volume, 10)",
      "($close-MIN($low, 10))/(MAX($high, 10)-MIN($low, 10))",
      "LOG($volume)",
      "MEAN($close, 60)/$close",
  };
}

inline std::string bench_symbol(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%04zu", i);
  return buf;
}

/// Deterministic synthetic market: per instrument a geometric random walk
/// close_{t+1} = close_t * exp(eps), eps uniform in [-0.05, 0.05], with
/// open/high/low consistent (low <= open,close <= high) and positive volume;
/// plus a pool whose membership rotates by one slot per day so consecutive
/// days always differ while pool_size < instruments.
inline void generate_synthetic(Store& store, const BenchConfig& config) {
  if (config.pool_size > config.instruments)
    raise(Errc::out_of_range, "pool_size exceeds instrument count");
  if (config.days == 0 || config.instruments == 0)
    raise(Errc::empty_range, "need at least one instrument and one day");
  const auto& root = store.root();
  if (std::filesystem::exists(root) && !std::filesystem::is_empty(root))
    raise(Errc::non_empty_target, "target directory is not empty: " + root.string());

  std::vector<Date> dates;
  dates.reserve(config.days);
  Date d{2010, 1, 4};  // a Monday
  while (dates.size() < config.days) {
    if (!is_weekend(d)) dates.push_back(d);
    d = next_day(d);
  }
  store.ensure_layout();
  store.write_calendar(config.frequency, dates);

  Rng rng(config.seed);
  std::vector<float> open(config.days), high(config.days), low(config.days),
      close(config.days), volume(config.days);
  for (std::size_t i = 0; i < config.instruments; ++i) {
    double c = 20.0 + 160.0 * rng.runif();
    for (std::size_t t = 0; t < config.days; ++t) {
      c *= std::exp(rng.runif(-0.05, 0.05));
      const double o = c * std::exp(rng.runif(-0.01, 0.01));
      const double h = std::max(o, c) * (1.0 + 0.01 * rng.runif());
      const double l = std::min(o, c) * (1.0 - 0.01 * rng.runif());
      const double v = 1e5 * std::exp(rng.runif(-1.0, 1.0));
      open[t] = static_cast<float>(o);
      high[t] = static_cast<float>(h);
      low[t] = static_cast<float>(l);
      close[t] = static_cast<float>(c);
      volume[t] = static_cast<float>(v);
    }
    const std::string symbol = bench_symbol(i);
    store.write_series(symbol, "open", config.frequency, 0, open);
    store.write_series(symbol, "high", config.frequency, 0, high);
    store.write_series(symbol, "low", config.frequency, 0, low);
    store.write_series(symbol, "close", config.frequency, 0, close);
    store.write_series(symbol, "volume", config.frequency, 0, volume);
  }

  InstrumentPool pool(config.pool_name);
  for (std::size_t t = 0; t < config.days; ++t) {
    std::set<std::string> members;
    for (std::size_t j = 0; j < config.pool_size; ++j)
      members.insert(bench_symbol((t + j) % config.instruments));
    pool.append(dates[t], members);
  }
  store.write_pool(pool);
}

struct BenchCell {
  std::string config_name;
  std::size_t workers = 1;
  StageTimings mean;
  StageTimings stddev;
  std::uint64_t digest = 0;
  std::uint64_t nodes_computed = 0;  // from the last repetition
};

struct BenchReport {
  std::vector<BenchCell> cells;
  std::uintmax_t store_bytes = 0;
  std::uintmax_t raw_payload_bytes = 0;
  std::size_t rows = 0;
  std::size_t columns = 0;
};

namespace detail {

struct Accumulator {
  std::vector<StageTimings> reps;

  void add(const StageTimings& t) { reps.push_back(t); }

  static double stage(const StageTimings& t, std::size_t s) {
    const double StageTimings::*fields[] = {&StageTimings::load, &StageTimings::compute,
                                            &StageTimings::convert_index,
                                            &StageTimings::filter_pool, &StageTimings::combine,
                                            &StageTimings::total};
    return t.*fields[s];
  }

  static void set_stage(StageTimings& t, std::size_t s, double v) {
    double StageTimings::*fields[] = {&StageTimings::load, &StageTimings::compute,
                                      &StageTimings::convert_index, &StageTimings::filter_pool,
                                      &StageTimings::combine, &StageTimings::total};
    t.*fields[s] = v;
  }

  StageTimings mean() const {
    StageTimings m;
    for (std::size_t s = 0; s < 6; ++s) {
      double sum = 0;
      for (const auto& r : reps) sum += stage(r, s);
      set_stage(m, s, sum / static_cast<double>(reps.size()));
    }
    return m;
  }

  StageTimings stddev() const {
    StageTimings m = mean(), out;
    for (std::size_t s = 0; s < 6; ++s) {
      if (reps.size() < 2) {
        set_stage(out, s, 0.0);
        continue;
      }
      double ss = 0;
      for (const auto& r : reps) {
        const double d = stage(r, s) - stage(m, s);
        ss += d * d;
      }
      set_stage(out, s, std::sqrt(ss / static_cast<double>(reps.size() - 1)));
    }
    return out;
  }
};

}  // namespace detail

/// Runs the four cache configurations at every requested worker count with a
/// fixed warm/cold discipline: cold cells clear the caches before every
/// repetition, warm cells clear once and run one unmeasured warm-up first.
/// Output equality across every cell is the hard gate: any digest mismatch is
/// an error naming the first differing row, not a result.
inline BenchReport run_benchmark(const Store& store, DiskCache& cache, const BenchConfig& config) {
  const Calendar cal = store.read_calendar(config.frequency);
  if (cal.empty()) raise(Errc::empty_range, "store has an empty calendar");
  QuerySpec spec;
  spec.pool = config.pool_name;
  spec.expressions = config.expressions.empty() ? default_factor_expressions()
                                                : config.expressions;
  spec.start = cal.at(0);
  spec.end = cal.at(cal.size() - 1);
  spec.frequency = config.frequency;

  DatasetBuilder builder(store, cache);
  BenchReport report;
  report.store_bytes = store.store_size_bytes();
  report.raw_payload_bytes = store.raw_payload_bytes();

  bool have_reference = false;
  AlignedFrame reference;
  std::uint64_t reference_digest = 0;

  struct ConfigRow {
    const char* name;
    bool expr_cache;
    bool dataset_cache;
    bool cold;  // cold: clear caches before every repetition
  };
  const ConfigRow rows[] = {
      {"-E -D", false, false, true},
      {"+E -D cold", true, false, true},
      {"+E -D warm", true, false, false},
      {"+E +D warm", true, true, false},
  };

  for (const std::size_t workers : config.workers) {
    for (const auto& row : rows) {
      BuildConfig bc;
      bc.use_expr_cache = row.expr_cache;
      bc.use_dataset_cache = row.dataset_cache;
      bc.workers = workers;

      cache.clear(true, true);
      if (!row.cold) builder.build(spec, bc);  // unmeasured warm-up

      detail::Accumulator acc;
      std::uint64_t digest = 0, nodes = 0;
      for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
        if (row.cold) cache.clear(true, true);
        BuildResult result = builder.build(spec, bc);
        acc.add(result.timings);
        digest = frame_digest(result.frame);
        nodes = result.stats.nodes_computed;
        if (!have_reference) {
          reference = std::move(result.frame);
          reference_digest = digest;
          have_reference = true;
          report.rows = reference.rows.size();
          report.columns = reference.columns.size();
        } else if (digest != reference_digest) {
          const auto diff = first_difference(reference, result.frame);
          raise(Errc::digest_mismatch,
                std::string("output differs between configurations: ") +
                    (diff ? *diff : "digest mismatch with identical-looking frames"));
        }
      }
      report.cells.push_back(BenchCell{row.name, workers, acc.mean(), acc.stddev(), digest,
                                       nodes});
    }
  }
  return report;
}

inline void write_report_csv(const BenchReport& report, std::ostream& os) {
  os << "config,workers,stage,mean_s,std_s\n";
  const char* stage_names[] = {"load", "compute", "convert_index", "filter_pool", "combine",
                               "total"};
  for (const auto& cell : report.cells) {
    for (std::size_t s = 0; s < 6; ++s) {
      os << '"' << cell.config_name << "\"," << cell.workers << ',' << stage_names[s] << ','
         << std::fixed << std::setprecision(6) << detail::Accumulator::stage(cell.mean, s) << ','
         << detail::Accumulator::stage(cell.stddev, s) << '\n';
    }
    os.unsetf(std::ios::fixed);
  }
}

inline void print_report(const BenchReport& report, std::ostream& os) {
  const auto cell_text = [](double mean, double sd) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%8.3f ±%6.3f", mean, sd);
    return std::string(buf);
  };
  os << "rows: " << report.rows << "  columns: " << report.columns << '\n';
  os << "store bytes: " << report.store_bytes << "  raw payload bytes: "
     << report.raw_payload_bytes;
  if (report.raw_payload_bytes > 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(report.store_bytes) /
                                               static_cast<double>(report.raw_payload_bytes));
    os << "  ratio: " << buf;
  }
  os << "\n\n";
  os << std::left << std::setw(14) << "config" << std::right << std::setw(8) << "workers";
  for (const char* s : {"Load Data", "Compute Expr.", "Convert Index", "Filter by Pool",
                        "Combine data", "Total (s)"})
    os << std::setw(18) << s;
  os << '\n';
  for (const auto& cell : report.cells) {
    os << std::left << std::setw(14) << cell.config_name << std::right << std::setw(8)
       << cell.workers;
    for (std::size_t s = 0; s < 6; ++s)
      os << std::setw(18)
         << cell_text(detail::Accumulator::stage(cell.mean, s),
                      detail::Accumulator::stage(cell.stddev, s));
    os << '\n';
  }
  os << "\ndigests: all " << report.cells.size() << " cells identical\n";
}

}  // namespace factorstore::bench
