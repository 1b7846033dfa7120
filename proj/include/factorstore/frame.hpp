#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <cstring>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "factorstore/calendar.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/expr.hpp"
#include "factorstore/hash.hpp"

namespace factorstore {

struct RowKey {
  std::string instrument;
  std::int64_t index = 0;

  auto operator<=>(const RowKey&) const = default;
};

/// Combined result table: one row per (instrument, calendar index) admitted by
/// the pool, one f32 column per expression, rows sorted by key. NaN = missing.
struct AlignedFrame {
  std::vector<std::string> columns;
  std::vector<RowKey> rows;
  std::vector<float> cells;  // row-major, rows.size() * columns.size()

  float at(std::size_t row, std::size_t col) const { return cells[row * columns.size() + col]; }
};

/// Stable 64-bit digest of column names, row keys and cell bit patterns.
/// NaN cells hash identically everywhere because materialization canonicalizes
/// them; equal digests across cache configurations is the correctness gate.
inline std::uint64_t frame_digest(const AlignedFrame& f) {
  Fnv1a64 h;
  h.update_value<std::uint64_t>(f.columns.size());
  for (const auto& c : f.columns) {
    h.update(c);
    h.update_value<char>('\x1f');
  }
  h.update_value<std::uint64_t>(f.rows.size());
  for (std::size_t r = 0; r < f.rows.size(); ++r) {
    h.update(f.rows[r].instrument);
    h.update_value<char>('\x1f');
    h.update_value<std::int64_t>(f.rows[r].index);
  }
  if (!f.cells.empty())
    h.update(std::string_view(reinterpret_cast<const char*>(f.cells.data()),
                              f.cells.size() * sizeof(float)));
  return h.digest();
}

inline bool bitwise_equal(const AlignedFrame& a, const AlignedFrame& b) {
  if (a.columns != b.columns || a.rows != b.rows) return false;
  if (a.cells.size() != b.cells.size()) return false;
  return a.cells.empty() ||
         std::memcmp(a.cells.data(), b.cells.data(), a.cells.size() * sizeof(float)) == 0;
}

/// Human-readable location of the first difference, for digest-mismatch
/// reports; empty when the frames are identical.
inline std::optional<std::string> first_difference(const AlignedFrame& a, const AlignedFrame& b) {
  if (a.columns != b.columns) return "column lists differ";
  if (a.rows.size() != b.rows.size())
    return "row counts differ: " + std::to_string(a.rows.size()) + " vs " +
           std::to_string(b.rows.size());
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    if (a.rows[r] != b.rows[r])
      return "row " + std::to_string(r) + " keys differ: " + a.rows[r].instrument + "@" +
             std::to_string(a.rows[r].index) + " vs " + b.rows[r].instrument + "@" +
             std::to_string(b.rows[r].index);
    for (std::size_t c = 0; c < a.columns.size(); ++c) {
      std::uint32_t ba = 0, bb = 0;
      std::memcpy(&ba, &a.cells[r * a.columns.size() + c], 4);
      std::memcpy(&bb, &b.cells[r * a.columns.size() + c], 4);
      if (ba != bb)
        return "row " + std::to_string(r) + " (" + a.rows[r].instrument + "@" +
               std::to_string(a.rows[r].index) + ") column " + a.columns[c] + ": " +
               std::to_string(a.at(r, c)) + " vs " + std::to_string(b.at(r, c));
    }
  }
  return std::nullopt;
}

namespace detail {

/// Shortest decimal that round-trips the f32.
inline std::string render_f32(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// RFC 4180: quote fields containing comma, quote or newline.
inline void write_csv_field(std::ostream& os, const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) {
    os << field;
    return;
  }
  os << '"';
  for (const char ch : field) {
    if (ch == '"') os << '"';
    os << ch;
  }
  os << '"';
}

}  // namespace detail

/// CSV export: header `instrument,datetime,<expr1>,...`; NaN cells are empty;
/// numbers are shortest-round-trip so re-parsing reproduces the f32 exactly.
inline void write_csv(const AlignedFrame& f, const Calendar& calendar, std::ostream& os) {
  os << "instrument,datetime";
  for (const auto& c : f.columns) {
    os << ',';
    detail::write_csv_field(os, c);
  }
  os << '\n';
  for (std::size_t r = 0; r < f.rows.size(); ++r) {
    detail::write_csv_field(os, f.rows[r].instrument);
    os << ',' << to_string(calendar.at(static_cast<std::size_t>(f.rows[r].index)));
    for (std::size_t c = 0; c < f.columns.size(); ++c) {
      os << ',';
      const float v = f.at(r, c);
      if (v == v) os << detail::render_f32(v);
    }
    os << '\n';
  }
}

}  // namespace factorstore
