#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "factorstore/calendar.hpp"
#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/io.hpp"
#include "factorstore/pool.hpp"
#include "factorstore/provider.hpp"

namespace factorstore {

/// Append-only flat-file store.
///
/// Layout under the root directory:
///   calendars/<freq>.txt                       one ISO-8601 date per line, LF
///   instruments/<pool>.txt                     SYMBOL<TAB>ENTER<TAB>EXIT lines
///   features/<symbol_lowercase>/<attr>.<freq>.bin
///                                              u32 LE start index, then f32 LE values
///
/// History is immutable; series and calendars grow only at the tail. Reads are
/// safe from any number of threads; writers require external serialization per
/// (instrument, attribute, frequency) — the store never locks files.
class Store {
 public:
  explicit Store(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  void ensure_layout() const {
    std::filesystem::create_directories(root_ / "calendars");
    std::filesystem::create_directories(root_ / "instruments");
    std::filesystem::create_directories(root_ / "features");
  }

  // -- paths ---------------------------------------------------------------

  std::filesystem::path calendar_path(const std::string& frequency) const {
    return root_ / "calendars" / (frequency + ".txt");
  }

  std::filesystem::path pool_path(const std::string& pool) const {
    return root_ / "instruments" / (pool + ".txt");
  }

  std::filesystem::path series_path(const std::string& instrument, const std::string& attribute,
                                    const std::string& frequency) const {
    return root_ / "features" / lowercase(instrument) /
           (lowercase(attribute) + "." + frequency + ".bin");
  }

  // -- calendar ------------------------------------------------------------

  bool has_calendar(const std::string& frequency) const {
    return std::filesystem::exists(calendar_path(frequency));
  }

  /// Persists the timeline. Re-writing with the identical list is a no-op;
  /// a strict superset sharing the existing prefix appends only the new dates;
  /// anything else is a PrefixMismatch.
  void write_calendar(const std::string& frequency, const std::vector<Date>& timestamps) {
    Calendar incoming(frequency, timestamps);  // validates monotonicity
    ensure_layout();
    const auto path = calendar_path(frequency);
    std::size_t existing = 0;
    if (std::filesystem::exists(path)) {
      const Calendar current = read_calendar(frequency);
      existing = current.size();
      if (existing > timestamps.size())
        raise(Errc::prefix_mismatch, "existing calendar has " + std::to_string(existing) +
                                         " entries, new one only " +
                                         std::to_string(timestamps.size()));
      for (std::size_t i = 0; i < existing; ++i) {
        if (current.at(i) != timestamps[i])
          raise(Errc::prefix_mismatch, "calendar differs at index " + std::to_string(i) + ": " +
                                           to_string(current.at(i)) + " vs " +
                                           to_string(timestamps[i]));
      }
    }
    if (existing == timestamps.size()) {
      touch_calendar_cache(frequency, std::move(incoming));
      return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) raise(Errc::parse_error, "cannot open calendar for append: " + path.string());
    for (std::size_t i = existing; i < timestamps.size(); ++i) out << to_string(timestamps[i]) << '\n';
    out.flush();
    touch_calendar_cache(frequency, std::move(incoming));
  }

  Calendar read_calendar(const std::string& frequency) const {
    {
      std::lock_guard lock(cache_mutex_);
      const auto it = calendar_cache_.find(frequency);
      if (it != calendar_cache_.end()) return it->second;
    }
    const auto path = calendar_path(frequency);
    if (!std::filesystem::exists(path))
      raise(Errc::missing_calendar, "no calendar for frequency '" + frequency + "'");
    std::vector<Date> dates;
    for (const auto& line : io::read_lines(path)) {
      if (line.empty()) continue;
      dates.push_back(parse_date(line));
    }
    Calendar cal(frequency, std::move(dates));
    std::lock_guard lock(cache_mutex_);
    calendar_cache_[frequency] = cal;
    return cal;
  }

  // -- series --------------------------------------------------------------

  bool series_exists(const std::string& instrument, const std::string& attribute,
                     const std::string& frequency) const {
    return std::filesystem::exists(series_path(instrument, attribute, frequency));
  }

  /// Stored extent as (start_index, count).
  std::pair<std::int64_t, std::int64_t> series_extent(const std::string& instrument,
                                                      const std::string& attribute,
                                                      const std::string& frequency) const {
    const auto path = series_path(instrument, attribute, frequency);
    std::ifstream in(path, std::ios::binary);
    if (!in)
      raise(Errc::missing_series, "no series " + instrument + "/" + attribute + "/" + frequency);
    const auto bytes = io::file_size_or_zero(path);
    if (bytes < 4 || (bytes - 4) % 4 != 0)
      raise(Errc::corrupt_entry, "series file has invalid size: " + path.string());
    const std::uint32_t start = io::read_u32le(in);
    return {start, static_cast<std::int64_t>((bytes - 4) / 4)};
  }

  void write_series(const std::string& instrument, const std::string& attribute,
                    const std::string& frequency, std::int64_t start_index,
                    std::span<const float> values) {
    check_extent(frequency, start_index, static_cast<std::int64_t>(values.size()));
    const auto path = series_path(instrument, attribute, frequency);
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::parse_error, "cannot open series for write: " + path.string());
    io::write_u32le(out, static_cast<std::uint32_t>(start_index));
    io::write_f32(out, values);
    if (!out) raise(Errc::parse_error, "series write failed: " + path.string());
  }

  /// Grows the series tail by exactly 4 bytes per value; header and prior
  /// bytes are untouched. Empty appends leave the file byte-identical.
  void append_series(const std::string& instrument, const std::string& attribute,
                     const std::string& frequency, std::span<const float> new_values) {
    const auto [start, count] = series_extent(instrument, attribute, frequency);
    if (new_values.empty()) return;
    check_extent(frequency, start + count, static_cast<std::int64_t>(new_values.size()));
    const auto path = series_path(instrument, attribute, frequency);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) raise(Errc::parse_error, "cannot open series for append: " + path.string());
    io::write_f32(out, new_values);
    if (!out) raise(Errc::parse_error, "series append failed: " + path.string());
  }

  /// Returns exactly hi-lo+1 values; positions outside the stored range are
  /// NaN. Seeks straight to the first covered byte — no full-file scan.
  std::vector<float> read_series(const std::string& instrument, const std::string& attribute,
                                 const std::string& frequency, std::int64_t lo,
                                 std::int64_t hi) const {
    if (lo < 0 || hi < lo) raise(Errc::out_of_range, "invalid read range");
    const auto path = series_path(instrument, attribute, frequency);
    std::ifstream in(path, std::ios::binary);
    if (!in)
      raise(Errc::missing_series, "no series " + instrument + "/" + attribute + "/" + frequency);
    const auto bytes = io::file_size_or_zero(path);
    if (bytes < 4 || (bytes - 4) % 4 != 0)
      raise(Errc::corrupt_entry, "series file has invalid size: " + path.string());
    const std::int64_t start = io::read_u32le(in);
    const std::int64_t count = static_cast<std::int64_t>((bytes - 4) / 4);
    std::vector<float> out(static_cast<std::size_t>(hi - lo + 1),
                           std::numeric_limits<float>::quiet_NaN());
    const std::int64_t first = std::max(lo, start);
    const std::int64_t last = std::min(hi, start + count - 1);
    if (first > last) return out;
    in.seekg(4 + 4 * (first - start), std::ios::beg);
    io::read_f32(in, std::span<float>(out.data() + (first - lo),
                                      static_cast<std::size_t>(last - first + 1)));
    if (!in) raise(Errc::corrupt_entry, "short read from " + path.string());
    return out;
  }

  std::vector<std::string> list_instruments() const {
    std::vector<std::string> out;
    const auto dir = root_ / "features";
    if (!std::filesystem::exists(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_directory()) out.push_back(entry.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<std::string> list_attributes(const std::string& instrument,
                                           const std::string& frequency) const {
    std::vector<std::string> out;
    const auto dir = root_ / "features" / lowercase(instrument);
    if (!std::filesystem::exists(dir)) return out;
    const std::string suffix = "." + frequency + ".bin";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.size() > suffix.size() && name.ends_with(suffix))
        out.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // -- pools ---------------------------------------------------------------

  bool pool_exists(const std::string& name) const {
    return std::filesystem::exists(pool_path(name));
  }

  InstrumentPool read_pool(const std::string& name) const {
    const auto path = pool_path(name);
    if (!std::filesystem::exists(path)) raise(Errc::missing_pool, "no pool '" + name + "'");
    std::map<std::string, std::vector<DateInterval>> memberships;
    std::size_t lineno = 0;
    for (const auto& line : io::read_lines(path)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab1 = line.find('\t');
      const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
      if (tab1 == std::string::npos || tab2 == std::string::npos)
        raise(Errc::parse_error, "pool '" + name + "' line " + std::to_string(lineno) +
                                     ": expected SYMBOL<TAB>ENTER<TAB>EXIT");
      const std::string symbol = line.substr(0, tab1);
      const Date enter = parse_date(line.substr(tab1 + 1, tab2 - tab1 - 1));
      const Date exit = parse_date(line.substr(tab2 + 1));
      memberships[symbol].push_back(DateInterval{enter, exit});
    }
    return InstrumentPool(name, std::move(memberships));
  }

  void write_pool(const InstrumentPool& pool) {
    ensure_layout();
    std::ostringstream out;
    for (const auto& [symbol, intervals] : pool.memberships())
      for (const auto& iv : intervals)
        out << symbol << '\t' << to_string(iv.enter) << '\t' << to_string(iv.exit) << '\n';
    io::atomic_write_file(pool_path(pool.name()), out.str());
  }

  /// Reads, appends the snapshot, rewrites. Pool files are small interval
  /// lists; the rewrite keeps the on-disk format canonical.
  void append_pool(const std::string& name, const Date& date, const std::set<std::string>& members) {
    InstrumentPool pool = pool_exists(name) ? read_pool(name) : InstrumentPool(name);
    pool.append(date, members);
    write_pool(pool);
  }

  // -- sizes ---------------------------------------------------------------

  /// Bytes of everything under the root except the cache tree.
  std::uintmax_t store_size_bytes() const {
    std::uintmax_t total = 0;
    for (const char* sub : {"calendars", "instruments", "features"}) {
      const auto dir = root_ / sub;
      if (!std::filesystem::exists(dir)) continue;
      for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) total += entry.file_size();
    }
    return total;
  }

  /// Sum of the minimal series encoding: 4 header bytes plus 4 per value.
  std::uintmax_t raw_payload_bytes() const {
    std::uintmax_t total = 0;
    const auto dir = root_ / "features";
    if (!std::filesystem::exists(dir)) return total;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
      if (entry.is_regular_file()) total += entry.file_size();
    return total;
  }

  static std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  }

 private:
  void check_extent(const std::string& frequency, std::int64_t start_index,
                    std::int64_t count) const {
    if (start_index < 0) raise(Errc::index_beyond_calendar, "negative start index");
    const Calendar cal = read_calendar(frequency);
    if (start_index + count > static_cast<std::int64_t>(cal.size()))
      raise(Errc::index_beyond_calendar,
            "series would end at index " + std::to_string(start_index + count - 1) +
                " but calendar has " + std::to_string(cal.size()) + " entries");
  }

  void touch_calendar_cache(const std::string& frequency, Calendar cal) const {
    std::lock_guard lock(cache_mutex_);
    calendar_cache_[frequency] = std::move(cal);
  }

  std::filesystem::path root_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, Calendar> calendar_cache_;
};

/// SeriesSource backed by a store.
class StoreSeriesSource : public SeriesSource {
 public:
  StoreSeriesSource(const Store& store, std::string frequency)
      : store_(store), frequency_(std::move(frequency)) {}

  std::vector<float> read_range(const std::string& instrument, const std::string& attribute,
                                std::int64_t lo, std::int64_t hi) const override {
    return store_.read_series(instrument, attribute, frequency_, lo, hi);
  }

 private:
  const Store& store_;
  std::string frequency_;
};

}  // namespace factorstore
