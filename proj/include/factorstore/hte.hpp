#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "factorstore/errors.hpp"
#include "factorstore/expr.hpp"
#include "factorstore/io.hpp"
#include "factorstore/rng.hpp"

namespace factorstore::hte {

struct Uniform {
  double lo = 0.0, hi = 1.0;
};
struct LogUniform {
  double lo = 1e-6, hi = 1.0;  // requires 0 < lo < hi
};
struct IntUniform {
  std::int64_t lo = 0, hi = 1;  // inclusive
};
struct Categorical {
  std::vector<std::string> choices;
};

using Prior = std::variant<Uniform, LogUniform, IntUniform, Categorical>;

struct Dimension {
  std::string name;
  Prior prior;
};

inline bool is_numeric(const Prior& p) { return !std::holds_alternative<Categorical>(p); }

class SearchSpace {
 public:
  explicit SearchSpace(std::vector<Dimension> dimensions) : dims_(std::move(dimensions)) {
    std::set<std::string> names;
    for (const auto& d : dims_) {
      if (d.name.empty() || !names.insert(d.name).second)
        raise(Errc::parse_error, "duplicate or empty dimension name '" + d.name + "'");
      struct Check {
        const std::string& name;
        void operator()(const Uniform& u) const {
          if (!(std::isfinite(u.lo) && std::isfinite(u.hi) && u.lo < u.hi))
            raise(Errc::parse_error, name + ": uniform requires finite lo < hi");
        }
        void operator()(const LogUniform& u) const {
          if (!(std::isfinite(u.lo) && std::isfinite(u.hi) && 0 < u.lo && u.lo < u.hi))
            raise(Errc::parse_error, name + ": loguniform requires finite 0 < lo < hi");
        }
        void operator()(const IntUniform& u) const {
          if (!(u.lo < u.hi)) raise(Errc::parse_error, name + ": intuniform requires lo < hi");
        }
        void operator()(const Categorical& c) const {
          if (c.choices.empty()) raise(Errc::parse_error, name + ": categorical needs choices");
        }
      };
      std::visit(Check{d.name}, d.prior);
    }
  }

  const std::vector<Dimension>& dimensions() const { return dims_; }

  const Dimension& find(const std::string& name) const {
    for (const auto& d : dims_)
      if (d.name == name) return d;
    raise(Errc::parse_error, "no dimension named '" + name + "'");
  }

  /// One dimension per line: `name kind args...`, '#' starts a comment.
  /// Kinds (case-insensitive): uniform lo hi | loguniform lo hi |
  /// intuniform lo hi | categorical choice...
  static SearchSpace parse(const std::vector<std::string>& lines) {
    std::vector<Dimension> dims;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
      std::string line = lines[ln];
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream in(line);
      std::string name, kind;
      if (!(in >> name)) continue;  // blank line
      if (!(in >> kind))
        raise(Errc::parse_error, "line " + std::to_string(ln + 1) + ": missing kind");
      std::transform(kind.begin(), kind.end(), kind.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      const auto need_two = [&](double& a, double& b) {
        if (!(in >> a >> b))
          raise(Errc::parse_error, "line " + std::to_string(ln + 1) + ": " + kind +
                                       " needs two numeric bounds");
      };
      if (kind == "uniform") {
        Uniform u;
        need_two(u.lo, u.hi);
        dims.push_back({name, u});
      } else if (kind == "loguniform") {
        LogUniform u;
        need_two(u.lo, u.hi);
        dims.push_back({name, u});
      } else if (kind == "intuniform") {
        IntUniform u;
        if (!(in >> u.lo >> u.hi))
          raise(Errc::parse_error,
                "line " + std::to_string(ln + 1) + ": intuniform needs two integer bounds");
        dims.push_back({name, u});
      } else if (kind == "categorical") {
        Categorical c;
        std::string choice;
        while (in >> choice) c.choices.push_back(choice);
        dims.push_back({name, c});
      } else {
        raise(Errc::parse_error,
              "line " + std::to_string(ln + 1) + ": unknown kind '" + kind + "'");
      }
    }
    return SearchSpace(std::move(dims));
  }

  static SearchSpace from_file(const std::filesystem::path& path) {
    return parse(io::read_lines(path));
  }

 private:
  std::vector<Dimension> dims_;
};

using ParamValue = std::variant<double, std::int64_t, std::string>;
using Assignment = std::vector<std::pair<std::string, ParamValue>>;

inline std::string to_string(const ParamValue& v) {
  struct Render {
    std::string operator()(double d) const { return render_number(d); }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(const std::string& s) const { return s; }
  };
  return std::visit(Render{}, v);
}

/// Per-dimension Gaussian reweighting parameters. Categorical dimensions never
/// need entries; numeric dimensions need both, with sigma in the dimension's
/// sampling coordinate (log coordinate for LogUniform).
struct ReweightSpec {
  std::map<std::string, double> theta_prev;
  std::map<std::string, double> sigma;

  void validate(const SearchSpace& space) const {
    for (const auto& d : space.dimensions()) {
      if (!is_numeric(d.prior)) continue;
      const auto t = theta_prev.find(d.name);
      const auto s = sigma.find(d.name);
      if (t == theta_prev.end() || s == sigma.end())
        raise(Errc::parse_error, d.name + ": reweighting needs theta-prev and sigma");
      if (!(s->second > 0.0)) raise(Errc::parse_error, d.name + ": sigma must be positive");
      struct InSupport {
        double theta;
        bool operator()(const Uniform& u) const { return u.lo <= theta && theta <= u.hi; }
        bool operator()(const LogUniform& u) const { return u.lo <= theta && theta <= u.hi; }
        bool operator()(const IntUniform& u) const {
          return static_cast<double>(u.lo) <= theta && theta <= static_cast<double>(u.hi);
        }
        bool operator()(const Categorical&) const { return true; }
      };
      if (!std::visit(InSupport{t->second}, d.prior))
        raise(Errc::parse_error, d.name + ": theta-prev outside the prior's support");
    }
  }
};

namespace detail {

/// Draw in the prior's sampling coordinate. Returns (value, coordinate).
struct Draw {
  double value = 0.0;       // numeric kinds
  double coordinate = 0.0;  // identity, or log for LogUniform
};

inline Draw draw_numeric(const Prior& prior, Rng& rng) {
  struct Visit {
    Rng& rng;
    Draw operator()(const Uniform& u) const {
      const double x = rng.runif(u.lo, u.hi);
      return {x, x};
    }
    Draw operator()(const LogUniform& u) const {
      const double c = rng.runif(std::log(u.lo), std::log(u.hi));
      return {std::clamp(std::exp(c), u.lo, u.hi), c};
    }
    Draw operator()(const IntUniform& u) const {
      const auto span = static_cast<std::uint64_t>(u.hi - u.lo + 1);
      const auto x = static_cast<double>(u.lo + static_cast<std::int64_t>(rng.below(span)));
      return {x, x};
    }
    Draw operator()(const Categorical&) const { return {}; }
  };
  return std::visit(Visit{rng}, prior);
}

inline ParamValue to_value(const Prior& prior, const Draw& d) {
  if (std::holds_alternative<IntUniform>(prior))
    return static_cast<std::int64_t>(std::llround(d.value));
  return d.value;
}

inline constexpr std::uint64_t kProbeTrials = 1'000'000;

}  // namespace detail

/// i.i.d. draws from each dimension's prior, in dimension order; LogUniform is
/// uniform in log coordinate. Fixed seed, fixed output.
inline std::vector<Assignment> sample_prior(const SearchSpace& space, std::size_t n,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Assignment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Assignment a;
    a.reserve(space.dimensions().size());
    for (const auto& d : space.dimensions()) {
      if (const auto* c = std::get_if<Categorical>(&d.prior)) {
        a.emplace_back(d.name, c->choices[rng.below(c->choices.size())]);
      } else {
        a.emplace_back(d.name, detail::to_value(d.prior, detail::draw_numeric(d.prior, rng)));
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Draws from p_new(x) ∝ p_prior(x) · exp(−(u − u_prev)² / (2σ²)) by
/// rejection in the sampling coordinate u: the kernel is bounded by 1, so
/// accepting a prior draw with the kernel's probability realizes p_new
/// exactly and the intractable normalizer never appears. Categorical
/// dimensions keep their unmodified prior. A dimension rejecting a full probe
/// batch in a row is reported as degenerate rather than looping forever.
inline std::vector<Assignment> sample_reweighted(const SearchSpace& space,
                                                 const ReweightSpec& reweight, std::size_t n,
                                                 std::uint64_t seed) {
  reweight.validate(space);
  Rng rng(seed);
  std::vector<Assignment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Assignment a;
    a.reserve(space.dimensions().size());
    for (const auto& d : space.dimensions()) {
      if (const auto* c = std::get_if<Categorical>(&d.prior)) {
        a.emplace_back(d.name, c->choices[rng.below(c->choices.size())]);
        continue;
      }
      const double theta = reweight.theta_prev.at(d.name);
      const double sigma = reweight.sigma.at(d.name);
      const double u_prev =
          std::holds_alternative<LogUniform>(d.prior) ? std::log(theta) : theta;
      std::uint64_t rejected = 0;
      while (true) {
        const auto draw = detail::draw_numeric(d.prior, rng);
        const double delta = draw.coordinate - u_prev;
        const double accept_p = std::exp(-delta * delta / (2.0 * sigma * sigma));
        if (rng.runif() < accept_p) {
          a.emplace_back(d.name, detail::to_value(d.prior, draw));
          break;
        }
        if (++rejected >= detail::kProbeTrials)
          raise(Errc::degenerate_acceptance,
                d.name + ": no draw accepted in " + std::to_string(detail::kProbeTrials) +
                    " trials (sigma far below the prior's width)");
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace factorstore::hte
