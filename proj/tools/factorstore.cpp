#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "factorstore/bench.hpp"
#include "factorstore/cache.hpp"
#include "factorstore/dataset.hpp"
#include "factorstore/date.hpp"
#include "factorstore/errors.hpp"
#include "factorstore/frame.hpp"
#include "factorstore/hte.hpp"
#include "factorstore/ingest.hpp"
#include "factorstore/storage.hpp"

namespace fs = factorstore;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;   // environment / data errors
constexpr int kExitUsage = 2;  // usage / parse errors

bool is_usage_error(fs::Errc code) {
  switch (code) {
    case fs::Errc::syntax_error:
    case fs::Errc::unknown_function:
    case fs::Errc::arity_error:
    case fs::Errc::non_integer_window:
      return true;
    default:
      return false;
  }
}

int fail(const fs::Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  return is_usage_error(e.code()) ? kExitUsage : kExitData;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = text.find(sep, pos);
    const auto piece = text.substr(pos, next - pos);
    if (!piece.empty()) out.push_back(piece);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

/// "name=value,name=value" into a map; raises parse_error on malformed pairs.
std::map<std::string, double> parse_named_values(const std::string& text, const char* flag) {
  std::map<std::string, double> out;
  for (const auto& pair : split(text, ',')) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0)
      fs::raise(fs::Errc::parse_error, std::string(flag) + ": expected name=value, got " + pair);
    try {
      out[pair.substr(0, eq)] = std::stod(pair.substr(eq + 1));
    } catch (const std::exception&) {
      fs::raise(fs::Errc::parse_error, std::string(flag) + ": bad number in " + pair);
    }
  }
  return out;
}

std::vector<fs::Date> read_calendar_file(const std::filesystem::path& path) {
  std::vector<fs::Date> dates;
  for (const auto& line : fs::io::read_lines(path)) {
    if (line.empty() || line[0] == '#') continue;
    dates.push_back(fs::parse_date(line));
  }
  return dates;
}

void write_binary_frame(const fs::AlignedFrame& frame, std::ostream& os) {
  const auto put_u32 = [&os](std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    os.write(buf, 4);
  };
  os.write("FSF1", 4);
  put_u32(static_cast<std::uint32_t>(frame.columns.size()));
  for (const auto& c : frame.columns) {
    put_u32(static_cast<std::uint32_t>(c.size()));
    os.write(c.data(), static_cast<std::streamsize>(c.size()));
  }
  // Row index block, then the cell block: the dataset-cache layouts verbatim.
  std::map<std::string, std::vector<std::uint32_t>> per_instrument;
  for (const auto& row : frame.rows)
    per_instrument[row.instrument].push_back(static_cast<std::uint32_t>(row.index));
  put_u32(static_cast<std::uint32_t>(per_instrument.size()));
  for (const auto& [symbol, indices] : per_instrument) {
    put_u32(static_cast<std::uint32_t>(symbol.size()));
    os.write(symbol.data(), static_cast<std::streamsize>(symbol.size()));
    put_u32(static_cast<std::uint32_t>(indices.size()));
    for (const auto i : indices) put_u32(i);
  }
  os.write(reinterpret_cast<const char*>(frame.cells.data()),
           static_cast<std::streamsize>(frame.cells.size() * 4));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factorstore: columnar time-series store and factor engine"};
  app.require_subcommand(1);

  std::string root;
  app.add_option("--root", root, "store root directory (env: FACTORSTORE_ROOT)")
      ->envname("FACTORSTORE_ROOT");
  std::string frequency = "day";
  app.add_option("--freq", frequency, "calendar frequency (default: day)");

  // init
  auto* cmd_init = app.add_subcommand("init", "create the store layout and write the calendar");
  std::string init_calendar;
  cmd_init->add_option("--calendar", init_calendar, "file with one ISO-8601 date per line")
      ->required();

  // dump / append
  auto* cmd_dump = app.add_subcommand("dump", "ingest a CSV of symbol,date,<attr>... rows");
  std::string dump_csv;
  cmd_dump->add_option("csv", dump_csv, "input CSV path")->required();
  auto* cmd_append = app.add_subcommand("append", "like dump, but rows must extend series tails");
  std::string append_csv;
  cmd_append->add_option("csv", append_csv, "input CSV path")->required();

  // query
  auto* cmd_query = app.add_subcommand("query", "build an aligned frame of expressions");
  std::string q_pool, q_instruments, q_fields, q_start, q_end, q_format = "csv";
  std::size_t q_workers = 1;
  bool q_no_expr_cache = false, q_no_dataset_cache = false;
  cmd_query->add_option("--pool", q_pool, "instrument pool name");
  cmd_query->add_option("--instruments", q_instruments, "comma-separated symbols");
  cmd_query->add_option("--fields", q_fields, "';'-separated expressions")->required();
  cmd_query->add_option("--start", q_start, "start date (ISO-8601)")->required();
  cmd_query->add_option("--end", q_end, "end date (ISO-8601)")->required();
  cmd_query->add_option("--workers", q_workers, "parallel workers (default 1)");
  cmd_query->add_flag("--no-expr-cache", q_no_expr_cache, "bypass the expression cache");
  cmd_query->add_flag("--no-dataset-cache", q_no_dataset_cache, "bypass the dataset cache");
  cmd_query->add_option("--format", q_format, "csv | binary")
      ->check(CLI::IsMember({"csv", "binary"}));

  // cache
  auto* cmd_cache = app.add_subcommand("cache", "list or clear the disk caches");
  std::string cache_action;
  bool cache_expr_only = false, cache_dataset_only = false;
  cmd_cache->add_option("action", cache_action, "list | clear")
      ->required()
      ->check(CLI::IsMember({"list", "clear"}));
  cmd_cache->add_flag("--expr", cache_expr_only, "only the expression cache");
  cmd_cache->add_flag("--dataset", cache_dataset_only, "only the dataset cache");

  // bench
  auto* cmd_bench = app.add_subcommand(
      "bench", "generate a synthetic store in --root (must be empty) and run the benchmark");
  fs::bench::BenchConfig bench_config;
  std::string bench_workers = "1", bench_out;
  cmd_bench->add_option("--instruments", bench_config.instruments, "instrument count");
  cmd_bench->add_option("--days", bench_config.days, "calendar length");
  cmd_bench->add_option("--pool-size", bench_config.pool_size, "daily pool membership size");
  cmd_bench->add_option("--workers", bench_workers, "comma-separated worker counts, e.g. 1,4");
  cmd_bench->add_option("--seed", bench_config.seed, "generator seed");
  cmd_bench->add_option("--reps", bench_config.repetitions, "repetitions per cell (default 3)");
  cmd_bench->add_option("--out", bench_out, "write per-stage timings CSV here");

  // hte-sample
  auto* cmd_hte = app.add_subcommand("hte-sample", "sample a hyperparameter search space");
  std::string hte_space, hte_theta, hte_sigma;
  std::size_t hte_n = 1;
  std::uint64_t hte_seed = 0;
  cmd_hte->add_option("space", hte_space, "space file: one `name kind args...` per line")
      ->required();
  cmd_hte->add_option("--n", hte_n, "number of samples");
  cmd_hte->add_option("--seed", hte_seed, "sampler seed");
  cmd_hte->add_option("--theta-prev", hte_theta, "previous best, name=value,...");
  cmd_hte->add_option("--sigma", hte_sigma, "kernel widths, name=value,...");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto need_root = [&]() -> std::string {
    if (root.empty()) {
      std::cerr << "error: --root (or FACTORSTORE_ROOT) is required\n";
      std::exit(kExitUsage);
    }
    return root;
  };

  try {
    if (cmd_init->parsed()) {
      fs::Store store(need_root());
      std::vector<fs::Date> dates;
      try {
        dates = read_calendar_file(init_calendar);
      } catch (const fs::Error& e) {
        return fail(e);
      }
      store.ensure_layout();
      store.write_calendar(frequency, dates);
      std::cout << "calendar '" << frequency << "': " << dates.size() << " timestamps\n";
      return kExitOk;
    }

    if (cmd_dump->parsed() || cmd_append->parsed()) {
      fs::Store store(need_root());
      const auto mode =
          cmd_append->parsed() ? fs::IngestMode::append_only : fs::IngestMode::dump;
      const auto& path = cmd_append->parsed() ? append_csv : dump_csv;
      const auto summary = fs::ingest_csv(store, path, frequency, mode);
      std::cout << summary.rows << " rows, " << summary.series_touched << " series, "
                << summary.values_appended << " values written\n";
      return kExitOk;
    }

    if (cmd_query->parsed()) {
      fs::QuerySpec spec;
      spec.frequency = frequency;
      spec.pool = q_pool;
      spec.instruments = split(q_instruments, ',');
      spec.expressions = split(q_fields, ';');
      // Usage-class validation first: bad dates or expressions exit 2 before
      // any store access.
      try {
        spec.start = fs::parse_date(q_start);
        spec.end = fs::parse_date(q_end);
        if (spec.expressions.empty())
          fs::raise(fs::Errc::syntax_error, "--fields names no expressions");
        for (const auto& f : spec.expressions) fs::parse(f);
        if (spec.pool.empty() == spec.instruments.empty())
          fs::raise(fs::Errc::syntax_error, "give exactly one of --pool / --instruments");
      } catch (const fs::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      fs::Store store(need_root());
      fs::DiskCache cache(store.root());
      fs::BuildConfig config;
      config.use_expr_cache = !q_no_expr_cache;
      config.use_dataset_cache = !q_no_dataset_cache;
      config.workers = q_workers;
      fs::BuildResult result;
      try {
        result = fs::DatasetBuilder(store, cache).build(spec, config);
      } catch (const fs::Error& e) {
        if (e.code() != fs::Errc::empty_range) throw;
        // An empty result is not an error: emit the header and succeed.
        for (const auto& f : spec.expressions)
          result.frame.columns.push_back(fs::canonical_key(*fs::parse(f)));
      }
      if (q_format == "binary") {
        write_binary_frame(result.frame, std::cout);
      } else {
        fs::write_csv(result.frame, store.read_calendar(frequency), std::cout);
      }
      return kExitOk;
    }

    if (cmd_cache->parsed()) {
      fs::Store store(need_root());
      fs::DiskCache cache(store.root());
      const bool both = !cache_expr_only && !cache_dataset_only;
      if (cache_action == "clear") {
        cache.clear(both || cache_expr_only, both || cache_dataset_only);
        std::cout << "cleared\n";
        return kExitOk;
      }
      const auto entries = cache.list(both || cache_expr_only, both || cache_dataset_only);
      for (const auto& e : entries) {
        const bool is_dataset = e.key.rfind("dataset|", 0) == 0;
        std::cout << (is_dataset ? "dataset" : "expr") << '\t' << e.hash << '\t'
                  << e.covered_first << '\t' << e.covered_last << '\t' << e.version << '\t'
                  << e.visited << '\t' << e.bytes << '\t' << e.key << '\n';
      }
      std::cout << entries.size() << " entries\n";
      return kExitOk;
    }

    if (cmd_bench->parsed()) {
      try {
        bench_config.workers.clear();
        for (const auto& w : split(bench_workers, ','))
          bench_config.workers.push_back(static_cast<std::size_t>(std::stoul(w)));
        if (bench_config.workers.empty() || bench_config.repetitions == 0)
          throw std::invalid_argument("empty");
      } catch (const std::exception&) {
        std::cerr << "error: --workers must be a comma-separated list of counts\n";
        return kExitUsage;
      }
      fs::Store store(need_root());
      fs::bench::generate_synthetic(store, bench_config);
      fs::DiskCache cache(store.root());
      const auto report = fs::bench::run_benchmark(store, cache, bench_config);
      fs::bench::print_report(report, std::cout);
      if (!bench_out.empty()) {
        std::ofstream out(bench_out, std::ios::binary | std::ios::trunc);
        if (!out) fs::raise(fs::Errc::parse_error, "cannot open " + bench_out);
        fs::bench::write_report_csv(report, out);
      }
      return kExitOk;
    }

    if (cmd_hte->parsed()) {
      fs::hte::ReweightSpec reweight;
      bool reweighted = false;
      try {
        if (!hte_theta.empty() || !hte_sigma.empty()) {
          reweight.theta_prev = parse_named_values(hte_theta, "--theta-prev");
          reweight.sigma = parse_named_values(hte_sigma, "--sigma");
          reweighted = true;
        }
      } catch (const fs::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      const auto space = fs::hte::SearchSpace::from_file(hte_space);
      if (reweighted) {
        try {
          reweight.validate(space);
        } catch (const fs::Error& e) {
          std::cerr << "error: " << e.what() << "\n";
          return kExitUsage;
        }
      }
      const auto samples = reweighted ? fs::hte::sample_reweighted(space, reweight, hte_n, hte_seed)
                                      : fs::hte::sample_prior(space, hte_n, hte_seed);
      for (const auto& assignment : samples) {
        bool first = true;
        for (const auto& [name, value] : assignment) {
          if (!first) std::cout << ' ';
          std::cout << name << '=' << fs::hte::to_string(value);
          first = false;
        }
        std::cout << '\n';
      }
      return kExitOk;
    }
  } catch (const fs::Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
