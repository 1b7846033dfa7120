#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include "catch_amalgamated.hpp"
#include "support/tempdir.hpp"

using testsupport::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Drives the installed binary through a shell, capturing exit code and both
/// streams. `env_prefix` may prepend variable assignments or `env -u ...`.
struct Cli {
  TempDir dir;
  std::filesystem::path root;
  int runs = 0;

  Cli() : root(dir.path() / "store") {}

  RunResult run(const std::string& args, const std::string& env_prefix = "") {
    const auto out_path = dir.path() / ("out" + std::to_string(runs));
    const auto err_path = dir.path() / ("err" + std::to_string(runs));
    ++runs;
    const std::string command = env_prefix + (env_prefix.empty() ? "" : " ") + FACTORSTORE_BIN +
                                " " + args + " >'" + out_path.string() + "' 2>'" +
                                err_path.string() + "'";
    const int status = std::system(command.c_str());
    RunResult r;
#ifdef _WIN32
    r.code = status;
#else
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#endif
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
  }

  RunResult run_rooted(const std::string& args, const std::string& env_prefix = "") {
    return run("--root '" + root.string() + "' " + args, env_prefix);
  }

  std::filesystem::path write(const std::string& name, const std::string& content) {
    const auto path = dir.path() / name;
    std::ofstream(path) << content;
    return path;
  }

  void init_store() {
    const auto cal = write("cal.txt", "2020-01-01\n2020-01-02\n2020-01-03\n");
    const auto r = run_rooted("init --calendar '" + cal.string() + "'");
    REQUIRE(r.code == 0);
  }

  void dump_bars() {
    const auto csv = write("bars.csv",
                           "symbol,date,close\n"
                           "aaa,2020-01-01,1.5\n"
                           "aaa,2020-01-02,2.5\n"
                           "aaa,2020-01-03,3.5\n");
    const auto r = run_rooted("dump '" + csv.string() + "'");
    REQUIRE(r.code == 0);
  }
};

}  // namespace

TEST_CASE("init writes the calendar and reports its size") {
  Cli cli;
  const auto cal = cli.write("cal.txt", "2020-01-01\n# comment\n2020-01-02\n\n2020-01-03\n");
  const auto r = cli.run_rooted("init --calendar '" + cal.string() + "'");
  CHECK(r.code == 0);
  CHECK(r.out == "calendar 'day': 3 timestamps\n");
  CHECK(std::filesystem::exists(cli.root / "calendars" / "day.txt"));

  SECTION("re-running with the same calendar is idempotent") {
    CHECK(cli.run_rooted("init --calendar '" + cal.string() + "'").code == 0);
  }
  SECTION("a conflicting calendar is refused as data corruption") {
    const auto other = cli.write("other.txt", "2020-06-01\n2020-06-02\n2020-06-03\n");
    const auto bad = cli.run_rooted("init --calendar '" + other.string() + "'");
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error:") == 0);
  }
}

TEST_CASE("dump then query round-trips values exactly") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();

  const auto r = cli.run_rooted(
      "query --instruments aaa --fields '$close' --start 2020-01-01 --end 2020-01-03");
  CHECK(r.code == 0);
  CHECK(r.out ==
        "instrument,datetime,$close\n"
        "aaa,2020-01-01,1.5\n"
        "aaa,2020-01-02,2.5\n"
        "aaa,2020-01-03,3.5\n");

  SECTION("dump reports its work") {
    const auto csv = cli.write("more.csv", "symbol,date,close\nbbb,2020-01-01,9\n");
    const auto d = cli.run_rooted("dump '" + csv.string() + "'");
    CHECK(d.out == "1 rows, 1 series, 1 values written\n");
  }
}

TEST_CASE("query emits the binary frame format on request") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();
  const auto r = cli.run_rooted(
      "query --instruments aaa --fields '$close' --start 2020-01-01 --end 2020-01-03 "
      "--format binary");
  REQUIRE(r.code == 0);

  const std::string& b = r.out;
  std::size_t off = 0;
  const auto u32 = [&]() {
    std::uint32_t v = 0;
    REQUIRE(off + 4 <= b.size());
    std::memcpy(&v, b.data() + off, 4);
    off += 4;
    return v;
  };
  REQUIRE(b.size() >= 4);
  CHECK(b.substr(0, 4) == "FSF1");
  off = 4;
  REQUIRE(u32() == 1);  // columns
  const auto name_len = u32();
  REQUIRE(name_len == 6);
  CHECK(b.substr(off, name_len) == "$close");
  off += name_len;
  REQUIRE(u32() == 1);  // instruments
  const auto sym_len = u32();
  REQUIRE(sym_len == 3);
  CHECK(b.substr(off, sym_len) == "aaa");
  off += sym_len;
  REQUIRE(u32() == 3);  // rows for aaa
  CHECK(u32() == 0);
  CHECK(u32() == 1);
  CHECK(u32() == 2);
  REQUIRE(b.size() == off + 3 * 4);  // cells
  float cell = 0;
  std::memcpy(&cell, b.data() + off, 4);
  CHECK(cell == 1.5f);
  std::memcpy(&cell, b.data() + off + 8, 4);
  CHECK(cell == 3.5f);
}

TEST_CASE("usage errors exit 2 before touching the store") {
  Cli cli;
  cli.init_store();

  SECTION("broken expression points at the byte") {
    const auto r = cli.run_rooted(
        "query --instruments aaa --fields 'MEAN($close' --start 2020-01-01 --end 2020-01-02");
    CHECK(r.code == 2);
    CHECK(r.err.find("at byte") != std::string::npos);
  }
  SECTION("bad date") {
    const auto r = cli.run_rooted(
        "query --instruments aaa --fields '$close' --start 01/02/2020 --end 2020-01-02");
    CHECK(r.code == 2);
  }
  SECTION("pool and instruments together") {
    const auto r = cli.run_rooted(
        "query --pool p --instruments aaa --fields '$close' --start 2020-01-01 --end 2020-01-02");
    CHECK(r.code == 2);
    CHECK(r.err.find("exactly one") != std::string::npos);
  }
  SECTION("neither pool nor instruments") {
    const auto r =
        cli.run_rooted("query --fields '$close' --start 2020-01-01 --end 2020-01-02");
    CHECK(r.code == 2);
  }
  SECTION("unknown --format value") {
    const auto r = cli.run_rooted(
        "query --instruments aaa --fields '$close' --start 2020-01-01 --end 2020-01-02 "
        "--format yaml");
    CHECK(r.code == 2);
  }
  SECTION("unknown subcommand") { CHECK(cli.run_rooted("frobnicate").code == 2); }
  SECTION("missing root") {
    const auto r = cli.run("init --calendar nowhere.txt", "env -u FACTORSTORE_ROOT");
    CHECK(r.code == 2);
    CHECK(r.err.find("--root") != std::string::npos);
  }
}

TEST_CASE("data errors exit 1") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();

  SECTION("unknown pool") {
    const auto r = cli.run_rooted(
        "query --pool nope --fields '$close' --start 2020-01-01 --end 2020-01-02");
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") == 0);
  }
  SECTION("unknown instrument") {
    const auto r = cli.run_rooted(
        "query --instruments zzz --fields '$close' --start 2020-01-01 --end 2020-01-02");
    CHECK(r.code == 1);
  }
  SECTION("append refuses to rewrite history") {
    const auto csv = cli.write("rewrite.csv", "symbol,date,close\naaa,2020-01-02,99\n");
    const auto r = cli.run_rooted("append '" + csv.string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") == 0);
    // The value on disk is unchanged.
    const auto q = cli.run_rooted(
        "query --instruments aaa --fields '$close' --start 2020-01-02 --end 2020-01-02");
    CHECK(q.out.find("2.5") != std::string::npos);
  }
}

TEST_CASE("an empty result is a header and success, not a failure") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();
  const auto r = cli.run_rooted(
      "query --instruments aaa --fields 'MEAN($close,2)' --start 2021-06-01 --end 2021-06-30");
  CHECK(r.code == 0);
  CHECK(r.out == "instrument,datetime,\"MEAN($close,2)\"\n");
  CHECK(r.err.empty());
}

TEST_CASE("cache subcommand lists and clears selectively") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();
  REQUIRE(cli.run_rooted("query --instruments aaa --fields '$close' --start 2020-01-01 "
                         "--end 2020-01-03")
              .code == 0);

  auto listed = cli.run_rooted("cache list");
  CHECK(listed.code == 0);
  CHECK(listed.out.find("expr\t") != std::string::npos);
  CHECK(listed.out.find("dataset\t") != std::string::npos);
  CHECK(listed.out.find("2 entries\n") != std::string::npos);

  const auto cleared = cli.run_rooted("cache clear --dataset");
  CHECK(cleared.code == 0);
  CHECK(cleared.out == "cleared\n");

  listed = cli.run_rooted("cache list");
  CHECK(listed.out.find("dataset\t") == std::string::npos);
  CHECK(listed.out.find("1 entries\n") != std::string::npos);

  REQUIRE(cli.run_rooted("cache clear").code == 0);
  listed = cli.run_rooted("cache list");
  CHECK(listed.out == "0 entries\n");
}

TEST_CASE("query bypass flags keep the caches empty") {
  Cli cli;
  cli.init_store();
  cli.dump_bars();
  REQUIRE(cli.run_rooted("query --instruments aaa --fields '$close' --start 2020-01-01 "
                         "--end 2020-01-03 --no-expr-cache --no-dataset-cache")
              .code == 0);
  CHECK(cli.run_rooted("cache list").out == "0 entries\n");
}

TEST_CASE("FACTORSTORE_ROOT supplies the root when the flag is absent") {
  Cli cli;
  const auto cal = cli.write("cal.txt", "2020-01-01\n");
  const auto r = cli.run("init --calendar '" + cal.string() + "'",
                         "FACTORSTORE_ROOT='" + cli.root.string() + "'");
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(cli.root / "calendars" / "day.txt"));
}

TEST_CASE("hte-sample prints deterministic assignments") {
  Cli cli;
  const auto space = cli.write("space.txt",
                               "lr loguniform 1e-4 1\n"
                               "act categorical relu tanh\n");
  const auto first = cli.run("hte-sample '" + space.string() + "' --n 3 --seed 9");
  REQUIRE(first.code == 0);
  const auto second = cli.run("hte-sample '" + space.string() + "' --n 3 --seed 9");
  CHECK(first.out == second.out);

  std::size_t lines = 0;
  std::istringstream in(first.out);
  std::string line;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.find("lr=") == 0);
    CHECK(line.find(" act=") != std::string::npos);
  }
  CHECK(lines == 3);

  SECTION("reweighted sampling validates its parameters") {
    const auto bad = cli.run("hte-sample '" + space.string() +
                             "' --theta-prev 'lr=5' --sigma 'lr=0.5'");
    CHECK(bad.code == 2);  // theta outside the prior support
    const auto malformed =
        cli.run("hte-sample '" + space.string() + "' --theta-prev 'lr' --sigma 'lr=0.5'");
    CHECK(malformed.code == 2);
    const auto good = cli.run("hte-sample '" + space.string() +
                              "' --n 2 --seed 3 --theta-prev 'lr=0.01' --sigma 'lr=1'");
    CHECK(good.code == 0);
  }
  SECTION("a missing space file is a data error") {
    CHECK(cli.run("hte-sample '" + (cli.dir.path() / "nope.txt").string() + "'").code == 1);
  }
  SECTION("a malformed space file is a data error with the line number") {
    const auto broken = cli.write("broken.txt", "x gaussian 0 1\n");
    const auto r = cli.run("hte-sample '" + broken.string() + "'");
    CHECK(r.code == 1);
    CHECK(r.err.find("line 1") != std::string::npos);
  }
}

TEST_CASE("bench generates, measures and reports") {
  Cli cli;
  const auto r = cli.run_rooted(
      "bench --instruments 4 --days 12 --pool-size 3 --workers 1 --reps 1 --out '" +
      (cli.dir.path() / "report.csv").string() + "'");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("digests: all 4 cells identical") != std::string::npos);
  CHECK(r.out.find("ratio:") != std::string::npos);
  const auto csv = slurp(cli.dir.path() / "report.csv");
  CHECK(csv.rfind("config,workers,stage,mean_s,std_s\n", 0) == 0);

  SECTION("bench refuses a non-empty root") {
    CHECK(cli.run_rooted("bench --instruments 2 --days 5 --pool-size 1 --reps 1").code == 1);
  }
}

TEST_CASE("help exits clean") {
  Cli cli;
  CHECK(cli.run("--help").code == 0);
  CHECK(cli.run("query --help").code == 0);
}
