#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "factorstore/calendar.hpp"
#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"

namespace factorstore {

/// Closed date interval [enter, exit].
struct DateInterval {
  Date enter;
  Date exit;

  bool contains(const Date& t) const { return enter <= t && t <= exit; }
  auto operator<=>(const DateInterval&) const = default;
};

/// Closed calendar-index interval [lo, hi].
struct IndexInterval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  bool contains(std::int64_t i) const { return lo <= i && i <= hi; }
  auto operator<=>(const IndexInterval&) const = default;
};

/// Time-varying instrument membership. Intervals per instrument are kept
/// sorted and non-overlapping; multiple intervals model re-entry.
class InstrumentPool {
 public:
  InstrumentPool() = default;
  explicit InstrumentPool(std::string name) : name_(std::move(name)) {}

  InstrumentPool(std::string name, std::map<std::string, std::vector<DateInterval>> memberships)
      : name_(std::move(name)), memberships_(std::move(memberships)) {
    for (auto& [symbol, intervals] : memberships_) {
      std::sort(intervals.begin(), intervals.end());
      for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (intervals[i].exit < intervals[i].enter)
          raise(Errc::parse_error, "pool '" + name_ + "': interval for " + symbol + " has exit " +
                                       to_string(intervals[i].exit) + " before enter " +
                                       to_string(intervals[i].enter));
        if (i > 0 && serial_day(intervals[i].enter) <= serial_day(intervals[i - 1].exit))
          raise(Errc::parse_error,
                "pool '" + name_ + "': overlapping membership intervals for " + symbol);
      }
    }
  }

  const std::string& name() const { return name_; }
  const std::map<std::string, std::vector<DateInterval>>& memberships() const {
    return memberships_;
  }
  bool empty() const { return memberships_.empty(); }

  bool contains(const std::string& instrument, const Date& t) const {
    const auto it = memberships_.find(instrument);
    if (it == memberships_.end()) return false;
    for (const auto& iv : it->second)
      if (iv.contains(t)) return true;
    return false;
  }

  /// Latest date mentioned by any recorded interval.
  std::optional<Date> last_recorded() const {
    std::optional<Date> last;
    for (const auto& [symbol, intervals] : memberships_)
      for (const auto& iv : intervals) {
        if (!last || *last < iv.exit) last = iv.exit;
        if (*last < iv.enter) last = iv.enter;
      }
    return last;
  }

  /// Records the daily membership snapshot at `date`: members with an interval
  /// open through the previous snapshot get extended, newcomers open a new
  /// [date, date] interval, absentees stay closed at their last seen date.
  /// Empty snapshots count: they close every open interval, so a member absent
  /// for a day re-enters with a fresh interval rather than a stretched one.
  void append(const Date& date, const std::set<std::string>& members) {
    const auto last = last_appended_ ? last_appended_ : last_recorded();
    if (last && !(*last < date))
      raise(Errc::non_monotonic_update, "pool '" + name_ + "': append date " + to_string(date) +
                                            " is not after last recorded date " +
                                            to_string(*last));
    for (const auto& symbol : members) {
      auto& intervals = memberships_[symbol];
      if (!intervals.empty() && last && intervals.back().exit == *last)
        intervals.back().exit = date;
      else
        intervals.push_back(DateInterval{date, date});
    }
    last_appended_ = date;
  }

 private:
  std::string name_;
  std::map<std::string, std::vector<DateInterval>> memberships_;
  /// Date of the most recent snapshot passed to append(). Tracked separately
  /// from the intervals because an all-absent snapshot leaves no interval
  /// trace; pools loaded from disk fall back to last_recorded(), the best
  /// reconstruction the interval file format allows.
  std::optional<Date> last_appended_;
};

/// Converts date-level membership to index intervals clipped to [lo, hi].
/// Enter dates round forward, exit dates round backward; empty intersections
/// are dropped, so instruments without membership in range are absent.
inline std::map<std::string, std::vector<IndexInterval>> resolve_pool(const InstrumentPool& pool,
                                                                      const Calendar& calendar,
                                                                      std::int64_t lo,
                                                                      std::int64_t hi) {
  std::map<std::string, std::vector<IndexInterval>> out;
  if (calendar.empty()) return out;
  const auto last_date = calendar.at(calendar.size() - 1);
  const auto first_date = calendar.at(0);
  for (const auto& [symbol, intervals] : pool.memberships()) {
    std::vector<IndexInterval> resolved;
    for (const auto& iv : intervals) {
      if (iv.exit < first_date || last_date < iv.enter) continue;
      const std::int64_t a = calendar.index_of(iv.enter, Rounding::forward);
      const std::int64_t b = calendar.index_of(iv.exit, Rounding::backward);
      const std::int64_t clipped_lo = std::max(a, lo);
      const std::int64_t clipped_hi = std::min(b, hi);
      if (clipped_lo <= clipped_hi) resolved.push_back(IndexInterval{clipped_lo, clipped_hi});
    }
    if (!resolved.empty()) out.emplace(symbol, std::move(resolved));
  }
  return out;
}

}  // namespace factorstore
