#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/io.hpp"
#include "factorstore/storage.hpp"

namespace factorstore {

enum class IngestMode {
  dump,         // extend series; identical overlapping values are a no-op
  append_only,  // every row must be strictly after the series' stored tail
};

struct IngestSummary {
  std::size_t rows = 0;
  std::size_t series_touched = 0;
  std::size_t values_appended = 0;
};

namespace detail {

/// One CSV record; quoted fields may contain commas and doubled quotes.
/// Embedded newlines are not supported (market data never needs them).
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current += c;
      }
    } else if (c == '"' && current.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (quoted)
    raise(Errc::parse_error, "line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(current));
  return fields;
}

inline float parse_cell(const std::string& field, std::size_t line_no, const std::string& col) {
  if (field.empty()) return std::numeric_limits<float>::quiet_NaN();
  float v = 0.0f;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    raise(Errc::parse_error,
          "line " + std::to_string(line_no) + ": column " + col + ": not a number: " + field);
  return v;
}

inline bool same_cell(float a, float b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace detail

/// Loads a CSV with header `symbol,date,<attr>,...` into the store: rows are
/// grouped per (symbol, attribute), sorted by date, gaps inside a series
/// filled with NaN, and written as tail extensions. Every date must already be
/// on the calendar. History is immutable: dump mode accepts byte-identical
/// re-dumps and rejects changed values; append_only rejects any row at or
/// before a series' stored tail. All rows are validated before anything is
/// written, so a rejected file leaves the store untouched.
inline IngestSummary ingest_csv(Store& store, const std::filesystem::path& csv_path,
                                const std::string& frequency, IngestMode mode) {
  const auto lines = io::read_lines(csv_path);
  if (lines.empty()) raise(Errc::parse_error, csv_path.string() + ": empty file");
  const auto header = detail::split_csv_line(lines[0], 1);
  if (header.size() < 3 || Store::lowercase(header[0]) != "symbol" ||
      Store::lowercase(header[1]) != "date")
    raise(Errc::parse_error,
          csv_path.string() + ": header must start with symbol,date and name each attribute");
  std::vector<std::string> attrs;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string a = Store::lowercase(header[c]);
    if (a.empty() || a.find_first_of("/\\.") != std::string::npos)
      raise(Errc::parse_error, "bad attribute name in header: '" + header[c] + "'");
    attrs.push_back(a);
  }

  const Calendar cal = store.read_calendar(frequency);

  // symbol -> attribute -> calendar index -> value
  std::map<std::string, std::map<std::string, std::map<std::int64_t, float>>> incoming;
  std::vector<std::string> offenders;
  IngestSummary summary;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto fields = detail::split_csv_line(lines[ln], ln + 1);
    if (fields.size() != header.size())
      raise(Errc::parse_error, "line " + std::to_string(ln + 1) + ": expected " +
                                   std::to_string(header.size()) + " fields, got " +
                                   std::to_string(fields.size()));
    const std::string& symbol = fields[0];
    if (symbol.empty() || symbol == "." || symbol == ".." ||
        symbol.find_first_of("/\\") != std::string::npos)
      raise(Errc::parse_error, "line " + std::to_string(ln + 1) + ": bad symbol '" + symbol + "'");
    const Date date = parse_date(fields[1]);
    const auto index = cal.exact_index(date);
    if (!index) {
      if (offenders.size() < 20) offenders.push_back(to_string(date));
      continue;
    }
    ++summary.rows;
    auto& per_attr = incoming[symbol];
    for (std::size_t c = 0; c < attrs.size(); ++c) {
      const float v = detail::parse_cell(fields[c + 2], ln + 1, header[c + 2]);
      auto [it, inserted] = per_attr[attrs[c]].emplace(*index, v);
      if (!inserted && !detail::same_cell(it->second, v))
        raise(Errc::immutable_history, "line " + std::to_string(ln + 1) + ": duplicate cell " +
                                           symbol + "/" + attrs[c] + "@" + to_string(date) +
                                           " with a different value");
    }
  }
  if (!offenders.empty()) {
    std::string msg = "dates not on the '" + frequency + "' calendar:";
    for (const auto& d : offenders) msg += " " + d;
    raise(Errc::out_of_range, msg);
  }

  // Plan every write before touching any file.
  struct Planned {
    std::string symbol, attr;
    bool fresh = false;
    std::int64_t start = 0;  // fresh: series start; else: first appended index
    std::vector<float> values;
  };
  std::vector<Planned> plan;
  for (const auto& [symbol, per_attr] : incoming) {
    for (const auto& [attr, cells] : per_attr) {
      const std::int64_t i_min = cells.begin()->first;
      const std::int64_t i_max = cells.rbegin()->first;
      if (!store.series_exists(symbol, attr, frequency)) {
        Planned p{symbol, attr, true, i_min, {}};
        p.values.assign(static_cast<std::size_t>(i_max - i_min + 1),
                        std::numeric_limits<float>::quiet_NaN());
        for (const auto& [idx, v] : cells) p.values[static_cast<std::size_t>(idx - i_min)] = v;
        plan.push_back(std::move(p));
        continue;
      }
      const auto [start, count] = store.series_extent(symbol, attr, frequency);
      const std::int64_t last = start + count - 1;
      if (mode == IngestMode::append_only && i_min <= last)
        raise(Errc::immutable_history, symbol + "/" + attr + ": row at index " +
                                           std::to_string(i_min) + " is not after stored tail " +
                                           std::to_string(last));
      if (i_min < start)
        raise(Errc::immutable_history, symbol + "/" + attr + ": series starts at index " +
                                           std::to_string(start) + "; cannot prepend " +
                                           std::to_string(i_min));
      if (i_min <= last) {
        const std::int64_t overlap_hi = std::min(last, i_max);
        const auto existing = store.read_series(symbol, attr, frequency, i_min, overlap_hi);
        for (const auto& [idx, v] : cells) {
          if (idx > overlap_hi) break;
          if (!detail::same_cell(existing[static_cast<std::size_t>(idx - i_min)], v))
            raise(Errc::immutable_history,
                  symbol + "/" + attr + "@" + to_string(cal.at(static_cast<std::size_t>(idx))) +
                      ": stored value differs; history is immutable");
        }
      }
      if (i_max <= last) continue;  // pure re-dump, nothing to extend
      Planned p{symbol, attr, false, last + 1, {}};
      p.values.assign(static_cast<std::size_t>(i_max - last),
                      std::numeric_limits<float>::quiet_NaN());
      for (auto it = cells.upper_bound(last); it != cells.end(); ++it)
        p.values[static_cast<std::size_t>(it->first - (last + 1))] = it->second;
      plan.push_back(std::move(p));
    }
  }

  for (const auto& p : plan) {
    if (p.fresh)
      store.write_series(p.symbol, p.attr, frequency, p.start, p.values);
    else
      store.append_series(p.symbol, p.attr, frequency, p.values);
    ++summary.series_touched;
    summary.values_appended += p.values.size();
  }
  return summary;
}

}  // namespace factorstore
