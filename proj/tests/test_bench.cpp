#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "factorstore/bench.hpp"
#include "support/tempdir.hpp"

using namespace factorstore;
using testsupport::TempDir;

namespace {

auto errc_is(Errc c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

bench::BenchConfig small_config() {
  bench::BenchConfig cfg;
  cfg.instruments = 6;
  cfg.days = 30;
  cfg.pool_size = 4;
  cfg.expressions = {"$close", "MEAN($close,5)", "$close/REF($close,1)-1"};
  cfg.repetitions = 2;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> tree_bytes(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      out[std::filesystem::relative(entry.path(), root).string()] = slurp(entry.path());
  return out;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  TempDir dir;
  Store s1(dir.path() / "one"), s2(dir.path() / "two");
  const auto cfg = small_config();
  bench::generate_synthetic(s1, cfg);
  bench::generate_synthetic(s2, cfg);
  CHECK(tree_bytes(dir.path() / "one") == tree_bytes(dir.path() / "two"));

  SECTION("a different seed changes the data") {
    Store s3(dir.path() / "three");
    auto reseeded = cfg;
    reseeded.seed = 7;
    bench::generate_synthetic(s3, reseeded);
    CHECK(tree_bytes(dir.path() / "one") != tree_bytes(dir.path() / "three"));
  }
}

TEST_CASE("synthetic bars are internally consistent") {
  TempDir dir;
  Store store(dir.path());
  const auto cfg = small_config();
  bench::generate_synthetic(store, cfg);

  const auto cal = store.read_calendar("day");
  REQUIRE(cal.size() == cfg.days);
  for (std::size_t t = 0; t < cal.size(); ++t) CHECK_FALSE(is_weekend(cal.at(t)));

  const auto hi = static_cast<std::int64_t>(cfg.days) - 1;
  for (std::size_t i = 0; i < cfg.instruments; ++i) {
    const auto symbol = bench::bench_symbol(i);
    const auto open = store.read_series(symbol, "open", "day", 0, hi);
    const auto high = store.read_series(symbol, "high", "day", 0, hi);
    const auto low = store.read_series(symbol, "low", "day", 0, hi);
    const auto close = store.read_series(symbol, "close", "day", 0, hi);
    const auto volume = store.read_series(symbol, "volume", "day", 0, hi);
    for (std::size_t t = 0; t < cfg.days; ++t) {
      INFO(symbol << " day " << t);
      CHECK(low[t] <= std::min(open[t], close[t]));
      CHECK(std::max(open[t], close[t]) <= high[t]);
      CHECK(low[t] > 0.0f);
      CHECK(volume[t] > 0.0f);
    }
  }
}

TEST_CASE("synthetic pool rotates membership daily") {
  TempDir dir;
  Store store(dir.path());
  const auto cfg = small_config();
  bench::generate_synthetic(store, cfg);

  const auto cal = store.read_calendar("day");
  const auto pool = store.read_pool(cfg.pool_name);
  std::vector<std::set<std::string>> daily(cfg.days);
  for (std::size_t t = 0; t < cfg.days; ++t)
    for (std::size_t i = 0; i < cfg.instruments; ++i)
      if (pool.contains(bench::bench_symbol(i), cal.at(t)))
        daily[t].insert(bench::bench_symbol(i));

  for (std::size_t t = 0; t < cfg.days; ++t) {
    CHECK(daily[t].size() == cfg.pool_size);
    if (t > 0) CHECK(daily[t] != daily[t - 1]);
  }
}

TEST_CASE("generation rejects bad targets and bad sizes") {
  TempDir dir;
  SECTION("non-empty target directory") {
    std::ofstream(dir.path() / "junk.txt") << "x";
    Store store(dir.path());
    CHECK_THROWS_MATCHES(bench::generate_synthetic(store, small_config()), Error,
                         errc_is(Errc::non_empty_target));
  }
  SECTION("pool larger than the universe") {
    Store store(dir.path() / "s");
    auto cfg = small_config();
    cfg.pool_size = cfg.instruments + 1;
    CHECK_THROWS_MATCHES(bench::generate_synthetic(store, cfg), Error,
                         errc_is(Errc::out_of_range));
  }
  SECTION("zero days") {
    Store store(dir.path() / "s");
    auto cfg = small_config();
    cfg.days = 0;
    CHECK_THROWS_MATCHES(bench::generate_synthetic(store, cfg), Error,
                         errc_is(Errc::empty_range));
  }
}

TEST_CASE("benchmark runs every configuration and gates on equal output") {
  TempDir dir;
  Store store(dir.path() / "store");
  auto cfg = small_config();
  cfg.workers = {1, 2};
  bench::generate_synthetic(store, cfg);
  DiskCache cache(dir.path() / "cache");

  const auto report = bench::run_benchmark(store, cache, cfg);

  REQUIRE(report.cells.size() == 8);  // 4 configurations x 2 worker counts
  const std::vector<std::string> order = {"-E -D", "+E -D cold", "+E -D warm", "+E +D warm"};
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    const auto& cell = report.cells[c];
    CHECK(cell.config_name == order[c % 4]);
    CHECK(cell.workers == (c < 4 ? 1u : 2u));
    CHECK(cell.digest == report.cells[0].digest);
    CHECK(cell.mean.total > 0.0);
  }

  // Warm caches mean the measured repetitions recompute nothing.
  for (const auto& cell : report.cells) {
    if (cell.config_name == "-E -D" || cell.config_name == "+E -D cold")
      CHECK(cell.nodes_computed > 0);
    else
      CHECK(cell.nodes_computed == 0);
  }

  CHECK(report.rows == cfg.days * cfg.pool_size);
  CHECK(report.columns == cfg.expressions.size());
  CHECK(report.raw_payload_bytes ==
        cfg.instruments * 5 * (4 + 4 * cfg.days));  // five attributes per instrument
  CHECK(report.store_bytes > report.raw_payload_bytes);

  SECTION("csv report has one line per cell and stage") {
    std::ostringstream os;
    bench::write_report_csv(report, os);
    std::istringstream in(os.str());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 1 + 6 * report.cells.size());
    CHECK(lines[0] == "config,workers,stage,mean_s,std_s");
    CHECK(lines[1].rfind("\"-E -D\",1,load,", 0) == 0);
    CHECK(lines[6].rfind("\"-E -D\",1,total,", 0) == 0);
  }
  SECTION("table report prints the digest gate and byte ratio") {
    std::ostringstream os;
    bench::print_report(report, os);
    CHECK(os.str().find("digests: all 8 cells identical") != std::string::npos);
    CHECK(os.str().find("ratio:") != std::string::npos);
  }
}

TEST_CASE("default factor set is fourteen parseable expressions") {
  const auto exprs = bench::default_factor_expressions();
  REQUIRE(exprs.size() == 14);
  std::set<std::string> canon;
  for (const auto& text : exprs) {
    const auto e = parse(text);
    canon.insert(canonical_key(*e));
    CHECK(lookback(*e) <= 59);
  }
  CHECK(canon.size() == 14);  // no duplicates after normalization
  CHECK(canon.count("(STD($close,5)/$close)") == 1);
  CHECK(canon.count(
            "(((MEAN($close,20)+(2*STD($close,20)))-$close)/MEAN($close,20))") == 1);
}

TEST_CASE("bench symbols are fixed-width and stable") {
  CHECK(bench::bench_symbol(0) == "S0000");
  CHECK(bench::bench_symbol(42) == "S0042");
  CHECK(bench::bench_symbol(9999) == "S9999");
}
