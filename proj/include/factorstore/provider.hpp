#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "factorstore/errors.hpp"

namespace factorstore {

/// Supplies raw attribute values positionally aligned to the calendar.
/// Implementations return exactly hi-lo+1 values with NaN outside the stored
/// range, and throw MissingSeries when the series does not exist at all.
class SeriesSource {
 public:
  virtual ~SeriesSource() = default;

  virtual std::vector<float> read_range(const std::string& instrument,
                                        const std::string& attribute, std::int64_t lo,
                                        std::int64_t hi) const = 0;
};

/// In-memory source for tests and preloaded evaluation.
class MemorySeriesSource : public SeriesSource {
 public:
  void put(const std::string& instrument, const std::string& attribute, std::int64_t start_index,
           std::vector<float> values) {
    series_[key(instrument, attribute)] = Entry{start_index, std::move(values)};
  }

  std::vector<float> read_range(const std::string& instrument, const std::string& attribute,
                                std::int64_t lo, std::int64_t hi) const override {
    const auto it = series_.find(key(instrument, attribute));
    if (it == series_.end())
      raise(Errc::missing_series, "no series for " + instrument + "/" + attribute);
    const auto& e = it->second;
    std::vector<float> out(static_cast<std::size_t>(hi - lo + 1),
                           std::numeric_limits<float>::quiet_NaN());
    for (std::int64_t i = lo; i <= hi; ++i) {
      const std::int64_t k = i - e.start;
      if (k >= 0 && k < static_cast<std::int64_t>(e.values.size()))
        out[static_cast<std::size_t>(i - lo)] = e.values[static_cast<std::size_t>(k)];
    }
    return out;
  }

 private:
  struct Entry {
    std::int64_t start = 0;
    std::vector<float> values;
  };

  static std::string key(const std::string& instrument, const std::string& attribute) {
    return instrument + "\x1f" + attribute;
  }

  std::map<std::string, Entry> series_;
};

/// Wraps a source and counts read calls; used to assert that warm cache paths
/// perform zero raw reads.
class CountingSeriesSource : public SeriesSource {
 public:
  explicit CountingSeriesSource(const SeriesSource& inner) : inner_(inner) {}

  std::vector<float> read_range(const std::string& instrument, const std::string& attribute,
                                std::int64_t lo, std::int64_t hi) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    points_.fetch_add(static_cast<std::uint64_t>(hi - lo + 1), std::memory_order_relaxed);
    return inner_.read_range(instrument, attribute, lo, hi);
  }

  std::uint64_t calls() const { return calls_.load(); }
  std::uint64_t points() const { return points_.load(); }

 private:
  const SeriesSource& inner_;
  mutable std::atomic<std::uint64_t> calls_{0};
  mutable std::atomic<std::uint64_t> points_{0};
};

}  // namespace factorstore
