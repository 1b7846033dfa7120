#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"

namespace factorstore {

enum class Rounding { forward, backward };

/// The shared, strictly increasing timeline. The index of a timestamp is its
/// zero-based position; all series are positionally aligned against it.
class Calendar {
 public:
  Calendar() = default;

  Calendar(std::string frequency, std::vector<Date> timestamps)
      : frequency_(std::move(frequency)), timestamps_(std::move(timestamps)) {
    for (std::size_t i = 1; i < timestamps_.size(); ++i) {
      if (!(timestamps_[i - 1] < timestamps_[i]))
        raise(Errc::non_monotonic_calendar,
              "timestamps must be strictly increasing at position " + std::to_string(i) + " (" +
                  to_string(timestamps_[i]) + ")");
    }
  }

  const std::string& frequency() const { return frequency_; }
  const std::vector<Date>& timestamps() const { return timestamps_; }
  std::size_t size() const { return timestamps_.size(); }
  bool empty() const { return timestamps_.empty(); }
  const Date& at(std::size_t i) const { return timestamps_.at(i); }

  std::optional<std::int64_t> exact_index(const Date& t) const {
    const auto it = std::lower_bound(timestamps_.begin(), timestamps_.end(), t);
    if (it != timestamps_.end() && *it == t) return it - timestamps_.begin();
    return std::nullopt;
  }

  /// Exact match returns its position; otherwise rounds to the next listed
  /// timestamp (forward) or the last listed one (backward). Throws OutOfRange
  /// when rounding runs off the corresponding end.
  std::int64_t index_of(const Date& t, Rounding rounding) const {
    if (timestamps_.empty()) raise(Errc::out_of_range, "calendar is empty");
    const auto it = std::lower_bound(timestamps_.begin(), timestamps_.end(), t);
    if (it != timestamps_.end() && *it == t) return it - timestamps_.begin();
    if (rounding == Rounding::forward) {
      if (it == timestamps_.end())
        raise(Errc::out_of_range, to_string(t) + " is after the last calendar timestamp");
      return it - timestamps_.begin();
    }
    if (it == timestamps_.begin())
      raise(Errc::out_of_range, to_string(t) + " is before the first calendar timestamp");
    return (it - timestamps_.begin()) - 1;
  }

 private:
  std::string frequency_;
  std::vector<Date> timestamps_;
};

}  // namespace factorstore
