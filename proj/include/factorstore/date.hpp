#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "factorstore/errors.hpp"

namespace factorstore {

/// Calendar date (no intraday time; only daily frequency ships).
/// Total order matches chronological order.
struct Date {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  auto operator<=>(const Date&) const = default;
};

namespace detail {

// Civil-calendar <-> serial-day conversions (proleptic Gregorian, epoch 1970-01-01).
constexpr std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097LL + static_cast<std::int64_t>(doe) - 719468;
}

constexpr Date civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{static_cast<int>(y + (m <= 2)), m, d};
}

}  // namespace detail

/// Days since 1970-01-01.
constexpr std::int64_t serial_day(const Date& d) {
  return detail::days_from_civil(d.year, d.month, d.day);
}

constexpr Date from_serial_day(std::int64_t serial) { return detail::civil_from_days(serial); }

/// 0 = Monday ... 6 = Sunday.
constexpr int weekday(const Date& d) {
  const std::int64_t s = serial_day(d);  // serial 0 is a Thursday
  return static_cast<int>(((s % 7) + 7 + 3) % 7);
}

constexpr bool is_weekend(const Date& d) { return weekday(d) >= 5; }

constexpr Date next_day(const Date& d) { return from_serial_day(serial_day(d) + 1); }

inline std::string to_string(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", d.year, d.month, d.day);
  return buf;
}

/// Strict ISO-8601 date: exactly "YYYY-MM-DD" and a real calendar day.
inline Date parse_date(std::string_view text) {
  const auto fail = [&] {
    raise(Errc::parse_error, "invalid ISO-8601 date '" + std::string(text) + "'");
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') fail();
  const auto num = [&](std::string_view part, int& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc() || ptr != part.data() + part.size()) fail();
  };
  int y = 0, m = 0, d = 0;
  num(text.substr(0, 4), y);
  num(text.substr(5, 2), m);
  num(text.substr(8, 2), d);
  if (m < 1 || m > 12 || d < 1 || d > 31) fail();
  const Date date{y, static_cast<unsigned>(m), static_cast<unsigned>(d)};
  if (from_serial_day(serial_day(date)) != date) fail();  // rejects e.g. Feb 30
  return date;
}

}  // namespace factorstore
