#include <algorithm>
#include <cmath>
#include <map>

#include "catch_amalgamated.hpp"
#include "factorstore/hte.hpp"

using namespace factorstore;
using namespace factorstore::hte;

namespace {

auto errc_is(Errc c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

SearchSpace demo_space() {
  return SearchSpace::parse({
      "lr        loguniform 1e-4 1",
      "dropout   uniform 0 0.5",
      "layers    intuniform 1 8",
      "activation categorical relu tanh gelu",
  });
}

double numeric(const Assignment& a, const std::string& name) {
  for (const auto& [k, v] : a)
    if (k == name) {
      if (const auto* d = std::get_if<double>(&v)) return *d;
      if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    }
  FAIL("no numeric parameter " << name);
  return 0.0;
}

std::string text(const Assignment& a, const std::string& name) {
  for (const auto& [k, v] : a)
    if (k == name) return std::get<std::string>(v);
  FAIL("no parameter " << name);
  return {};
}

std::string render(const std::vector<Assignment>& batch) {
  std::string out;
  for (const auto& a : batch)
    for (const auto& [k, v] : a) out += k + "=" + to_string(v) + ";";
  return out;
}

}  // namespace

TEST_CASE("search space files parse all four kinds") {
  const auto space = SearchSpace::parse({
      "# hyperparameters for the demo model",
      "",
      "lr LogUniform 1e-4 1   # kind is case-insensitive",
      "momentum uniform 0.0 0.99",
      "depth intuniform 2 6",
      "act categorical relu tanh",
  });
  REQUIRE(space.dimensions().size() == 4);
  CHECK(space.dimensions()[0].name == "lr");
  CHECK(std::get<LogUniform>(space.dimensions()[0].prior).lo == 1e-4);
  CHECK(std::get<Uniform>(space.find("momentum").prior).hi == 0.99);
  CHECK(std::get<IntUniform>(space.find("depth").prior).lo == 2);
  CHECK(std::get<Categorical>(space.find("act").prior).choices ==
        std::vector<std::string>{"relu", "tanh"});
  CHECK_THROWS_MATCHES(space.find("nope"), Error, errc_is(Errc::parse_error));
}

TEST_CASE("search space parse errors carry line numbers") {
  const auto raises_at = [](const std::vector<std::string>& lines, const std::string& needle) {
    try {
      SearchSpace::parse(lines);
      FAIL("expected parse_error for " << needle);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse_error);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  raises_at({"x"}, "line 1");
  raises_at({"", "x gaussian 0 1"}, "line 2");
  raises_at({"x uniform 1"}, "two numeric bounds");
  raises_at({"x intuniform 1 b"}, "two integer bounds");
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x uniform 1 1"}), Error, errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x uniform 2 1"}), Error, errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x loguniform 0 1"}), Error,
                       errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x loguniform -1 1"}), Error,
                       errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x intuniform 3 3"}), Error,
                       errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x categorical"}), Error, errc_is(Errc::parse_error));
  CHECK_THROWS_MATCHES(SearchSpace::parse({"x uniform 0 1", "x uniform 0 1"}), Error,
                       errc_is(Errc::parse_error));
}

TEST_CASE("prior sampling is reproducible and typed") {
  const auto space = demo_space();
  const auto a = sample_prior(space, 5, 42);
  const auto b = sample_prior(space, 5, 42);
  REQUIRE(a.size() == 5);
  CHECK(render(a) == render(b));
  CHECK(render(a) != render(sample_prior(space, 5, 43)));
  CHECK(sample_prior(space, 0, 42).empty());

  // One pair per dimension, in declaration order, with the right value type.
  const auto& first = a[0];
  REQUIRE(first.size() == 4);
  CHECK(first[0].first == "lr");
  CHECK(std::holds_alternative<double>(first[0].second));
  CHECK(first[1].first == "dropout");
  CHECK(std::holds_alternative<double>(first[1].second));
  CHECK(first[2].first == "layers");
  CHECK(std::holds_alternative<std::int64_t>(first[2].second));
  CHECK(first[3].first == "activation");
  CHECK(std::holds_alternative<std::string>(first[3].second));
}

TEST_CASE("uniform prior covers its interval evenly") {
  const auto space = SearchSpace::parse({"x uniform 0 1"});
  const auto draws = sample_prior(space, 10000, 7);
  double sum = 0.0;
  for (const auto& a : draws) {
    const double x = numeric(a, "x");
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    sum += x;
  }
  CHECK(std::abs(sum / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("loguniform prior is uniform in the log coordinate") {
  const auto space = SearchSpace::parse({"x loguniform 1e-4 1"});
  const auto draws = sample_prior(space, 10000, 11);
  std::size_t below_mid = 0;
  for (const auto& a : draws) {
    const double x = numeric(a, "x");
    REQUIRE(x >= 1e-4);
    REQUIRE(x <= 1.0);
    if (x < 1e-2) ++below_mid;  // geometric midpoint of [1e-4, 1]
  }
  CHECK(std::abs(static_cast<double>(below_mid) / 10000.0 - 0.5) < 0.03);
}

TEST_CASE("intuniform prior hits every value of its inclusive range") {
  const auto space = SearchSpace::parse({"k intuniform -2 5"});
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& a : sample_prior(space, 4000, 3)) {
    const auto k = static_cast<std::int64_t>(numeric(a, "k"));
    REQUIRE(k >= -2);
    REQUIRE(k <= 5);
    ++counts[k];
  }
  CHECK(counts.size() == 8);
  for (const auto& [k, c] : counts) CHECK(c > 350);  // fair share is 500
}

TEST_CASE("categorical prior is unbiased across choices") {
  const auto space = SearchSpace::parse({"c categorical a b c"});
  std::map<std::string, std::size_t> counts;
  for (const auto& a : sample_prior(space, 9000, 5)) ++counts[text(a, "c")];
  REQUIRE(counts.size() == 3);
  for (const auto& [k, c] : counts) {
    CHECK(c > 2700);
    CHECK(c < 3300);
  }

  const auto single = SearchSpace::parse({"c categorical only"});
  for (const auto& a : sample_prior(single, 50, 9)) CHECK(text(a, "c") == "only");
}

TEST_CASE("reweight validation") {
  const auto space = demo_space();
  ReweightSpec ok;
  ok.theta_prev = {{"lr", 1e-2}, {"dropout", 0.25}, {"layers", 4}};
  ok.sigma = {{"lr", 0.5}, {"dropout", 0.1}, {"layers", 1}};
  CHECK_NOTHROW(ok.validate(space));

  SECTION("numeric dimensions need both parameters") {
    ReweightSpec missing = ok;
    missing.sigma.erase("dropout");
    CHECK_THROWS_MATCHES(missing.validate(space), Error, errc_is(Errc::parse_error));
    ReweightSpec none;
    CHECK_THROWS_MATCHES(sample_reweighted(space, none, 1, 0), Error,
                         errc_is(Errc::parse_error));
  }
  SECTION("sigma must be positive") {
    ReweightSpec bad = ok;
    bad.sigma["dropout"] = 0.0;
    CHECK_THROWS_MATCHES(bad.validate(space), Error, errc_is(Errc::parse_error));
  }
  SECTION("theta-prev must lie inside the prior support") {
    ReweightSpec bad = ok;
    bad.theta_prev["dropout"] = 0.9;  // prior is uniform [0, 0.5]
    CHECK_THROWS_MATCHES(bad.validate(space), Error, errc_is(Errc::parse_error));
  }
  SECTION("categorical-only spaces need no parameters") {
    const auto cats = SearchSpace::parse({"c categorical a b"});
    ReweightSpec none;
    CHECK_NOTHROW(none.validate(cats));
    CHECK(sample_reweighted(cats, none, 3, 1).size() == 3);
  }
}

TEST_CASE("reweighted draws stay inside the prior support") {
  const auto space = SearchSpace::parse({
      "u uniform 2 3",
      "g loguniform 1e-3 1",
      "k intuniform 0 9",
  });
  ReweightSpec rw;
  rw.theta_prev = {{"u", 2.5}, {"g", 0.03}, {"k", 4}};
  rw.sigma = {{"u", 0.1}, {"g", 0.5}, {"k", 1.5}};
  for (const auto& a : sample_reweighted(space, rw, 5000, 13)) {
    const double u = numeric(a, "u");
    CHECK(u >= 2.0);
    CHECK(u <= 3.0);
    const double g = numeric(a, "g");
    CHECK(g >= 1e-3);
    CHECK(g <= 1.0);
    const double k = numeric(a, "k");
    CHECK(k >= 0);
    CHECK(k <= 9);
  }
}

TEST_CASE("reweighting concentrates mass near theta-prev") {
  const auto space = SearchSpace::parse({"x uniform 0 1"});
  const auto mass_near_half = [&](double sigma) {
    ReweightSpec rw;
    rw.theta_prev = {{"x", 0.5}};
    rw.sigma = {{"x", sigma}};
    std::size_t inside = 0;
    const std::size_t n = 10000;
    for (const auto& a : sample_reweighted(space, rw, n, 17)) {
      const double x = numeric(a, "x");
      if (x >= 0.4 && x <= 0.6) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(n);
  };

  // The prior puts 0.2 in [0.4, 0.6]; a Gaussian at 0.5 with sigma 0.1 puts
  // about 0.68 there.
  const double tight = mass_near_half(0.1);
  const double medium = mass_near_half(0.2);
  const double loose = mass_near_half(0.5);
  CHECK(tight > 0.6);
  CHECK(tight > medium + 0.1);
  CHECK(medium > loose + 0.1);
  CHECK(loose > 0.2);  // still tighter than the flat prior
}

TEST_CASE("integer reweighting peaks at theta-prev") {
  const auto space = SearchSpace::parse({"k intuniform 0 20"});
  ReweightSpec rw;
  rw.theta_prev = {{"k", 10}};
  rw.sigma = {{"k", 1}};
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& a : sample_reweighted(space, rw, 5000, 19))
    ++counts[static_cast<std::int64_t>(numeric(a, "k"))];
  const auto mode =
      std::max_element(counts.begin(), counts.end(),
                       [](const auto& a, const auto& b) { return a.second < b.second; });
  CHECK(mode->first == 10);
  CHECK(counts[10] > counts[8]);
  CHECK(counts[10] > counts[12]);
}

TEST_CASE("categorical dimensions ignore reweighting entirely") {
  const auto space = SearchSpace::parse({"x uniform 0 1", "c categorical a b c"});
  ReweightSpec rw;
  rw.theta_prev = {{"x", 0.5}};
  rw.sigma = {{"x", 0.05}};
  std::map<std::string, std::size_t> counts;
  for (const auto& a : sample_reweighted(space, rw, 9000, 23)) ++counts[text(a, "c")];
  REQUIRE(counts.size() == 3);
  for (const auto& [k, c] : counts) {
    CHECK(c > 2700);
    CHECK(c < 3300);
  }
}

TEST_CASE("vanishing sigma is reported, not looped on") {
  const auto space = SearchSpace::parse({"x uniform 0 1"});
  ReweightSpec rw;
  rw.theta_prev = {{"x", 0.5}};
  rw.sigma = {{"x", 1e-12}};
  CHECK_THROWS_MATCHES(sample_reweighted(space, rw, 1, 29), Error,
                       errc_is(Errc::degenerate_acceptance));
}

TEST_CASE("reweighted sampling is reproducible") {
  const auto space = demo_space();
  ReweightSpec rw;
  rw.theta_prev = {{"lr", 1e-2}, {"dropout", 0.25}, {"layers", 4}};
  rw.sigma = {{"lr", 1.0}, {"dropout", 0.2}, {"layers", 2}};
  CHECK(render(sample_reweighted(space, rw, 8, 31)) ==
        render(sample_reweighted(space, rw, 8, 31)));
  CHECK(render(sample_reweighted(space, rw, 8, 31)) !=
        render(sample_reweighted(space, rw, 8, 32)));
}

TEST_CASE("parameter values render cleanly") {
  CHECK(to_string(ParamValue{0.5}) == "0.5");
  CHECK(to_string(ParamValue{std::int64_t{7}}) == "7");
  CHECK(to_string(ParamValue{std::string{"relu"}}) == "relu");
}
