#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "factorstore/errors.hpp"
#include "factorstore/frame.hpp"
#include "factorstore/hash.hpp"
#include "factorstore/io.hpp"

namespace factorstore {

/// Per-key mutexes for in-flight deduplication: the holder of a key's lock is
/// the single writer; concurrent requesters block, then read the finished
/// entry. Locks are never dropped from the registry (bounded by distinct keys
/// touched in one process).
class KeyLocks {
 public:
  std::shared_ptr<std::mutex> acquire(const std::string& key) {
    std::lock_guard g(mu_);
    auto& slot = locks_[key];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
  }

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<std::mutex>> locks_;
};

enum class CacheOutcome { hit, partial_tail, miss };

struct ExprLookup {
  CacheOutcome outcome = CacheOutcome::miss;
  std::vector<float> values;     // hit only: exactly hi - lo + 1 values
  std::int64_t covered_hi = -1;  // partial_tail only: last covered index
};

struct DatasetLookup {
  CacheOutcome outcome = CacheOutcome::miss;
  AlignedFrame frame;            // hit only: rows within [lo, hi], stored column order
  std::int64_t covered_hi = -1;  // partial_tail only
};

struct CacheEntryInfo {
  std::string hash;
  std::string key;
  std::int64_t covered_first = 0;
  std::int64_t covered_last = 0;
  std::uint64_t version = 0;
  std::int64_t visited = 0;
  std::uintmax_t bytes = 0;
};

namespace detail {

struct Meta {
  std::string key;
  std::int64_t covered_first = 0;
  std::int64_t covered_last = 0;
  std::uint64_t version = 0;
  std::int64_t visited = 0;
  std::vector<std::string> columns;  // dataset entries only
};

inline std::string serialize_meta(const Meta& m, bool with_columns) {
  std::string out;
  out += "key\t" + m.key + "\n";
  out += "covered\t" + std::to_string(m.covered_first) + "\t" + std::to_string(m.covered_last) +
         "\n";
  out += "version\t" + std::to_string(m.version) + "\n";
  out += "visited\t" + std::to_string(m.visited) + "\n";
  if (with_columns) {
    out += "columns";
    for (const auto& c : m.columns) out += "\t" + c;
    out += "\n";
  }
  return out;
}

inline std::optional<Meta> parse_meta(const std::string& text) {
  Meta m;
  bool saw_key = false, saw_covered = false, saw_version = false, saw_visited = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) return std::nullopt;
    const std::string field = line.substr(0, tab);
    const std::string rest = line.substr(tab + 1);
    try {
      if (field == "key") {
        m.key = rest;
        saw_key = true;
      } else if (field == "covered") {
        const auto tab2 = rest.find('\t');
        if (tab2 == std::string::npos) return std::nullopt;
        m.covered_first = std::stoll(rest.substr(0, tab2));
        m.covered_last = std::stoll(rest.substr(tab2 + 1));
        saw_covered = true;
      } else if (field == "version") {
        m.version = std::stoull(rest);
        saw_version = true;
      } else if (field == "visited") {
        m.visited = std::stoll(rest);
        saw_visited = true;
      } else if (field == "columns") {
        std::string cols = rest;
        std::size_t pos = 0;
        while (true) {
          const auto next = cols.find('\t', pos);
          m.columns.push_back(cols.substr(pos, next - pos));
          if (next == std::string::npos) break;
          pos = next + 1;
        }
      }
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (!saw_key || !saw_covered || !saw_version || !saw_visited) return std::nullopt;
  if (m.covered_first < 0 || m.covered_last < m.covered_first) return std::nullopt;
  return m;
}

inline std::int64_t now_unix_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

/// On-disk expression and dataset caches under <store root>/cache. Entries
/// are named by the 64-bit hash of their full key text; the key text inside
/// the metadata sidecar disambiguates hash collisions. An entry exists only
/// once its .meta is in place (payload files are written first), so readers
/// concurrent with a writer see Miss or a complete entry.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path store_root) : root_(std::move(store_root)) {}

  static std::string expr_key(const std::string& canonical, const std::string& instrument,
                              const std::string& frequency) {
    return "expr|" + canonical + "|" + instrument + "|" + frequency;
  }

  /// Expressions are sorted so the key is insensitive to query column order.
  static std::string dataset_key(std::vector<std::string> canonicals, const std::string& pool_id,
                                 const std::string& frequency) {
    std::sort(canonicals.begin(), canonicals.end());
    std::string joined;
    for (const auto& c : canonicals) {
      if (!joined.empty()) joined += ';';
      joined += c;
    }
    return "dataset|" + joined + "|" + pool_id + "|" + frequency;
  }

  std::filesystem::path expr_dir() const { return root_ / "cache" / "expr"; }
  std::filesystem::path dataset_dir() const { return root_ / "cache" / "dataset"; }

  KeyLocks& key_locks() { return key_locks_; }

  // --- expression cache ---

  ExprLookup expr_lookup(const std::string& key, std::int64_t lo, std::int64_t hi,
                         bool touch = true) {
    if (lo < 0 || lo > hi) raise(Errc::empty_range, "expr_lookup: bad range");
    const auto base = expr_dir() / hash_name(key);
    const auto meta = load_meta(base, key, /*want_columns=*/false);
    if (!meta) return {};
    const auto bin = with_ext(base, ".bin");
    if (!validate_expr_payload(bin, *meta)) {
      quarantine(expr_dir(), hash_name(key), {".bin", ".meta"});
      return {};
    }
    if (meta->covered_first > lo) return {};
    if (touch) touch_meta(base, *meta, /*with_columns=*/false);
    if (meta->covered_last < hi) return {CacheOutcome::partial_tail, {}, meta->covered_last};
    ExprLookup out;
    out.outcome = CacheOutcome::hit;
    out.values.resize(static_cast<std::size_t>(hi - lo + 1));
    std::ifstream in(bin, std::ios::binary);
    in.seekg(4 + 4 * (lo - meta->covered_first));
    io::read_f32(in, out.values);
    if (!in) raise(Errc::corrupt_entry, "short read from " + bin.string());
    return out;
  }

  void expr_put(const std::string& key, std::int64_t first, const std::vector<float>& values,
                std::uint64_t version) {
    if (values.empty()) raise(Errc::empty_range, "expr_put: no values");
    std::filesystem::create_directories(expr_dir());
    const auto base = expr_dir() / hash_name(key);
    write_expr_payload(with_ext(base, ".bin"), first, values);
    detail::Meta m;
    m.key = key;
    m.covered_first = first;
    m.covered_last = first + static_cast<std::int64_t>(values.size()) - 1;
    m.version = version;
    m.visited = detail::now_unix_seconds();
    io::atomic_write_file(with_ext(base, ".meta"), detail::serialize_meta(m, false));
  }

  /// Tail extension. The payload is rewritten whole (entries are small) so the
  /// resulting bytes are identical to a fresh full write of the union and a
  /// crash can never leave a torn payload behind the metadata.
  void expr_append(const std::string& key, std::int64_t first_new,
                   const std::vector<float>& values, std::uint64_t version) {
    if (values.empty()) return;
    const auto base = expr_dir() / hash_name(key);
    const auto meta = load_meta(base, key, false);
    if (!meta) raise(Errc::corrupt_entry, "append to missing cache entry");
    if (meta->covered_last + 1 != first_new)
      raise(Errc::non_contiguous_append,
            "cache tail is " + std::to_string(meta->covered_last) + ", append starts at " +
                std::to_string(first_new));
    const auto bin = with_ext(base, ".bin");
    if (!validate_expr_payload(bin, *meta)) raise(Errc::corrupt_entry, "bad payload " + bin.string());
    std::vector<float> merged(
        static_cast<std::size_t>(meta->covered_last - meta->covered_first + 1));
    {
      std::ifstream in(bin, std::ios::binary);
      in.seekg(4);
      io::read_f32(in, merged);
      if (!in) raise(Errc::corrupt_entry, "short read from " + bin.string());
    }
    merged.insert(merged.end(), values.begin(), values.end());
    write_expr_payload(bin, meta->covered_first, merged);
    detail::Meta m = *meta;
    m.covered_last = first_new + static_cast<std::int64_t>(values.size()) - 1;
    m.version = version;
    m.visited = detail::now_unix_seconds();
    io::atomic_write_file(with_ext(base, ".meta"), detail::serialize_meta(m, false));
  }

  // --- dataset cache ---

  DatasetLookup dataset_lookup(const std::string& key, std::int64_t lo, std::int64_t hi,
                               bool touch = true) {
    if (lo < 0 || lo > hi) raise(Errc::empty_range, "dataset_lookup: bad range");
    const auto base = dataset_dir() / hash_name(key);
    const auto meta = load_meta(base, key, /*want_columns=*/true);
    if (!meta) return {};
    AlignedFrame full;
    if (!read_dataset_payload(base, *meta, full)) {
      quarantine(dataset_dir(), hash_name(key), {".frame", ".index", ".meta"});
      return {};
    }
    if (meta->covered_first > lo) return {};
    if (touch) touch_meta(base, *meta, /*with_columns=*/true);
    if (meta->covered_last < hi) return {CacheOutcome::partial_tail, {}, meta->covered_last};
    DatasetLookup out;
    out.outcome = CacheOutcome::hit;
    if (meta->covered_first == lo && meta->covered_last == hi) {
      // Entry covers exactly the request; every row is in range by validation.
      out.frame = std::move(full);
      return out;
    }
    out.frame.columns = full.columns;
    const std::size_t ncols = full.columns.size();
    out.frame.rows.reserve(full.rows.size());
    out.frame.cells.reserve(full.cells.size());
    for (std::size_t r = 0; r < full.rows.size(); ++r) {
      if (full.rows[r].index < lo || full.rows[r].index > hi) continue;
      out.frame.rows.push_back(std::move(full.rows[r]));
      out.frame.cells.insert(out.frame.cells.end(), full.cells.begin() + r * ncols,
                             full.cells.begin() + (r + 1) * ncols);
    }
    return out;
  }

  void dataset_put(const std::string& key, std::int64_t covered_first, std::int64_t covered_last,
                   const AlignedFrame& frame, std::uint64_t version) {
    std::filesystem::create_directories(dataset_dir());
    const auto base = dataset_dir() / hash_name(key);
    write_dataset_payload(base, frame);
    detail::Meta m;
    m.key = key;
    m.covered_first = covered_first;
    m.covered_last = covered_last;
    m.version = version;
    m.visited = detail::now_unix_seconds();
    m.columns = frame.columns;
    io::atomic_write_file(with_ext(base, ".meta"), detail::serialize_meta(m, true));
  }

  /// Tail extension by merge and rewrite: old rows are kept verbatim, new rows
  /// slot in per instrument, and the rewritten files are byte-identical to a
  /// fresh full write over the union range.
  void dataset_append(const std::string& key, std::int64_t first_new, std::int64_t last_new,
                      const AlignedFrame& tail, std::uint64_t version) {
    const auto base = dataset_dir() / hash_name(key);
    const auto meta = load_meta(base, key, true);
    if (!meta) raise(Errc::corrupt_entry, "append to missing cache entry");
    if (meta->covered_last + 1 != first_new)
      raise(Errc::non_contiguous_append,
            "cache tail is " + std::to_string(meta->covered_last) + ", append starts at " +
                std::to_string(first_new));
    if (tail.columns != meta->columns)
      raise(Errc::corrupt_entry, "dataset append with different column set");
    AlignedFrame old;
    if (!read_dataset_payload(base, *meta, old))
      raise(Errc::corrupt_entry, "bad payload under " + base.string());
    AlignedFrame merged;
    merged.columns = old.columns;
    const std::size_t ncols = old.columns.size();
    std::size_t a = 0, b = 0;
    while (a < old.rows.size() || b < tail.rows.size()) {
      const bool take_old =
          b >= tail.rows.size() || (a < old.rows.size() && old.rows[a] < tail.rows[b]);
      const AlignedFrame& src = take_old ? old : tail;
      const std::size_t r = take_old ? a++ : b++;
      merged.rows.push_back(src.rows[r]);
      merged.cells.insert(merged.cells.end(), src.cells.begin() + r * ncols,
                          src.cells.begin() + (r + 1) * ncols);
    }
    write_dataset_payload(base, merged);
    detail::Meta m = *meta;
    m.covered_last = last_new;
    m.version = version;
    m.visited = detail::now_unix_seconds();
    io::atomic_write_file(with_ext(base, ".meta"), detail::serialize_meta(m, true));
  }

  // --- management ---

  std::vector<CacheEntryInfo> list(bool expr, bool dataset) const {
    std::vector<CacheEntryInfo> out;
    if (expr) list_dir(expr_dir(), {".bin"}, false, out);
    if (dataset) list_dir(dataset_dir(), {".frame", ".index"}, true, out);
    std::sort(out.begin(), out.end(),
              [](const CacheEntryInfo& x, const CacheEntryInfo& y) { return x.key < y.key; });
    return out;
  }

  void clear(bool expr, bool dataset) {
    std::error_code ec;
    if (expr) std::filesystem::remove_all(expr_dir(), ec);
    if (dataset) std::filesystem::remove_all(dataset_dir(), ec);
  }

  /// Least-recently-visited eviction down to a byte budget, per cache kind.
  void evict_to_budget(bool expr, std::uintmax_t max_bytes) {
    const auto dir = expr ? expr_dir() : dataset_dir();
    const std::vector<std::string> exts =
        expr ? std::vector<std::string>{".bin", ".meta"}
             : std::vector<std::string>{".frame", ".index", ".meta"};
    std::vector<CacheEntryInfo> entries;
    list_dir(dir, expr ? std::vector<std::string>{".bin"}
                       : std::vector<std::string>{".frame", ".index"},
             !expr, entries);
    std::uintmax_t total = 0;
    for (const auto& e : entries) total += e.bytes;
    std::sort(entries.begin(), entries.end(),
              [](const CacheEntryInfo& x, const CacheEntryInfo& y) { return x.visited < y.visited; });
    for (const auto& e : entries) {
      if (total <= max_bytes) break;
      for (const auto& ext : exts) std::filesystem::remove(dir / (e.hash + ext));
      total -= e.bytes;
    }
  }

 private:
  static std::string hash_name(const std::string& key) { return to_hex16(fnv1a64(key)); }

  static std::filesystem::path with_ext(const std::filesystem::path& base, const char* ext) {
    return base.parent_path() / (base.filename().string() + ext);
  }

  /// Reads and verifies the sidecar; nullopt means Miss (absent, malformed,
  /// or a hash collision with a different key).
  std::optional<detail::Meta> load_meta(const std::filesystem::path& base, const std::string& key,
                                        bool want_columns) const {
    const auto path = with_ext(base, ".meta");
    if (!std::filesystem::exists(path)) return std::nullopt;
    auto meta = detail::parse_meta(io::read_file(path));
    if (!meta || (want_columns && meta->columns.empty())) return std::nullopt;
    if (meta->key != key) return std::nullopt;
    return meta;
  }

  void touch_meta(const std::filesystem::path& base, detail::Meta meta, bool with_columns) {
    const auto now = detail::now_unix_seconds();
    if (meta.visited == now) return;  // already stamped within this second
    meta.visited = now;
    io::atomic_write_file(with_ext(base, ".meta"), detail::serialize_meta(meta, with_columns));
  }

  static bool validate_expr_payload(const std::filesystem::path& bin, const detail::Meta& meta) {
    const auto bytes = io::file_size_or_zero(bin);
    if (bytes < 4 || (bytes - 4) % 4 != 0) return false;
    std::ifstream in(bin, std::ios::binary);
    if (!in) return false;
    const std::uint32_t start = io::read_u32le(in);
    if (!in) return false;
    const auto count = static_cast<std::int64_t>((bytes - 4) / 4);
    return static_cast<std::int64_t>(start) == meta.covered_first &&
           count == meta.covered_last - meta.covered_first + 1;
  }

  static void write_expr_payload(const std::filesystem::path& bin, std::int64_t first,
                                 const std::vector<float>& values) {
    std::string bytes;
    bytes.resize(4 + values.size() * 4);
    const auto start = static_cast<std::uint32_t>(first);
    std::memcpy(bytes.data(), &start, 4);
    std::memcpy(bytes.data() + 4, values.data(), values.size() * 4);
    io::atomic_write_file(bin, bytes);
  }

  static void write_dataset_payload(const std::filesystem::path& base, const AlignedFrame& f) {
    std::string index;
    std::map<std::string, std::vector<std::uint32_t>> per_instrument;
    for (const auto& row : f.rows)
      per_instrument[row.instrument].push_back(static_cast<std::uint32_t>(row.index));
    const auto put_u32 = [](std::string& s, std::uint32_t v) {
      char buf[4];
      std::memcpy(buf, &v, 4);
      s.append(buf, 4);
    };
    put_u32(index, static_cast<std::uint32_t>(per_instrument.size()));
    for (const auto& [symbol, indices] : per_instrument) {
      put_u32(index, static_cast<std::uint32_t>(symbol.size()));
      index += symbol;
      put_u32(index, static_cast<std::uint32_t>(indices.size()));
      for (const auto i : indices) put_u32(index, i);
    }
    std::string cells(reinterpret_cast<const char*>(f.cells.data()), f.cells.size() * 4);
    io::atomic_write_file(with_ext(base, ".frame"), cells);
    io::atomic_write_file(with_ext(base, ".index"), index);
  }

  /// Rebuilds the full frame from .index + .frame; false on any structural
  /// inconsistency (triggering quarantine upstream).
  static bool read_dataset_payload(const std::filesystem::path& base, const detail::Meta& meta,
                                   AlignedFrame& out) {
    const auto index_path = with_ext(base, ".index");
    const auto frame_path = with_ext(base, ".frame");
    if (!std::filesystem::exists(index_path) || !std::filesystem::exists(frame_path)) return false;
    const std::string index = io::read_file(index_path);
    std::size_t pos = 0;
    const auto get_u32 = [&](std::uint32_t& v) {
      if (pos + 4 > index.size()) return false;
      std::memcpy(&v, index.data() + pos, 4);
      pos += 4;
      return true;
    };
    std::uint32_t n_instruments = 0;
    if (!get_u32(n_instruments)) return false;
    out.columns = meta.columns;
    out.rows.clear();
    if (!out.columns.empty())
      out.rows.reserve(static_cast<std::size_t>(io::file_size_or_zero(frame_path)) /
                       (out.columns.size() * 4));
    std::string prev_symbol;
    for (std::uint32_t i = 0; i < n_instruments; ++i) {
      std::uint32_t len = 0;
      if (!get_u32(len) || pos + len > index.size()) return false;
      std::string symbol = index.substr(pos, len);
      pos += len;
      if (i > 0 && symbol <= prev_symbol) return false;
      std::uint32_t n_rows = 0;
      if (!get_u32(n_rows)) return false;
      std::int64_t prev = -1;
      for (std::uint32_t r = 0; r < n_rows; ++r) {
        std::uint32_t idx = 0;
        if (!get_u32(idx)) return false;
        if (static_cast<std::int64_t>(idx) <= prev || idx < meta.covered_first ||
            idx > meta.covered_last)
          return false;
        prev = idx;
        out.rows.push_back(RowKey{symbol, static_cast<std::int64_t>(idx)});
      }
      prev_symbol = std::move(symbol);
    }
    if (pos != index.size()) return false;
    const auto frame_bytes = io::file_size_or_zero(frame_path);
    if (frame_bytes != out.rows.size() * out.columns.size() * 4) return false;
    const std::string cells = io::read_file(frame_path);
    out.cells.resize(out.rows.size() * out.columns.size());
    if (!cells.empty()) std::memcpy(out.cells.data(), cells.data(), cells.size());
    return true;
  }

  void quarantine(const std::filesystem::path& dir, const std::string& hash,
                  std::initializer_list<const char*> exts) {
    std::error_code ec;
    const auto qdir = dir / "quarantine";
    std::filesystem::create_directories(qdir, ec);
    for (const char* ext : exts)
      std::filesystem::rename(dir / (hash + ext), qdir / (hash + ext), ec);
  }

  void list_dir(const std::filesystem::path& dir, const std::vector<std::string>& payload_exts,
                bool want_columns, std::vector<CacheEntryInfo>& out) const {
    if (!std::filesystem::exists(dir)) return;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".meta") continue;
      const std::string hash = entry.path().stem().string();
      const auto meta = detail::parse_meta(io::read_file(entry.path()));
      if (!meta || (want_columns && meta->columns.empty())) continue;
      CacheEntryInfo info;
      info.hash = hash;
      info.key = meta->key;
      info.covered_first = meta->covered_first;
      info.covered_last = meta->covered_last;
      info.version = meta->version;
      info.visited = meta->visited;
      info.bytes = io::file_size_or_zero(entry.path());
      for (const auto& ext : payload_exts) info.bytes += io::file_size_or_zero(dir / (hash + ext));
      out.push_back(info);
    }
  }

  std::filesystem::path root_;
  KeyLocks key_locks_;
};

}  // namespace factorstore
