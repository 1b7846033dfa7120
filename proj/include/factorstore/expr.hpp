#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "factorstore/errors.hpp"

namespace factorstore {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

enum class UnaryOp { neg, abs, log };
enum class BinaryOp { add, sub, mul, div, gt, lt, ge, le, eq };
enum class RollingOp { mean, std, sum, max, min };

/// Leaf referencing a stored attribute ($close, $volume, ...). Names are
/// normalized to lower case.
struct RawAttr {
  std::string name;
};

struct Constant {
  double value = 0.0;
};

struct Unary {
  UnaryOp op;
  ExprPtr child;
};

struct Binary {
  BinaryOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};

/// Trailing-window operator over the last `window` values (window >= 1).
struct Rolling {
  RollingOp op;
  ExprPtr child;
  int window = 1;
};

/// Value shifted back by `shift` calendar points (shift >= 0).
struct Ref {
  ExprPtr child;
  int shift = 0;
};

/// Factor formula as an immutable syntax tree; freely shareable across threads.
struct Expr {
  std::variant<RawAttr, Constant, Unary, Binary, Rolling, Ref> node;
};

inline const char* to_string(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "+";
    case BinaryOp::sub: return "-";
    case BinaryOp::mul: return "*";
    case BinaryOp::div: return "/";
    case BinaryOp::gt: return ">";
    case BinaryOp::lt: return "<";
    case BinaryOp::ge: return ">=";
    case BinaryOp::le: return "<=";
    case BinaryOp::eq: return "==";
  }
  return "?";
}

inline const char* to_string(RollingOp op) {
  switch (op) {
    case RollingOp::mean: return "MEAN";
    case RollingOp::std: return "STD";
    case RollingOp::sum: return "SUM";
    case RollingOp::max: return "MAX";
    case RollingOp::min: return "MIN";
  }
  return "?";
}

/// Shortest decimal that round-trips the value.
inline std::string render_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Deterministic, fully parenthesized text rendering. Identical trees render
/// identically and parse(render(e)) reproduces the tree; no operand
/// reordering (floating-point arithmetic is not associative).
inline std::string canonical_key(const Expr& e) {
  struct Render {
    std::string operator()(const RawAttr& a) const { return "$" + a.name; }
    std::string operator()(const Constant& c) const { return render_number(c.value); }
    std::string operator()(const Unary& u) const {
      switch (u.op) {
        case UnaryOp::neg: return "(-" + canonical_key(*u.child) + ")";
        case UnaryOp::abs: return "ABS(" + canonical_key(*u.child) + ")";
        case UnaryOp::log: return "LOG(" + canonical_key(*u.child) + ")";
      }
      return {};
    }
    std::string operator()(const Binary& b) const {
      return "(" + canonical_key(*b.lhs) + to_string(b.op) + canonical_key(*b.rhs) + ")";
    }
    std::string operator()(const Rolling& r) const {
      return std::string(to_string(r.op)) + "(" + canonical_key(*r.child) + "," +
             std::to_string(r.window) + ")";
    }
    std::string operator()(const Ref& r) const {
      return "REF(" + canonical_key(*r.child) + "," + std::to_string(r.shift) + ")";
    }
  };
  return std::visit(Render{}, e.node);
}

/// Extra leading calendar points needed so evaluation at a range start is
/// exact: rolling ops add window-1, REF adds its shift.
inline int lookback(const Expr& e) {
  struct Visit {
    int operator()(const RawAttr&) const { return 0; }
    int operator()(const Constant&) const { return 0; }
    int operator()(const Unary& u) const { return lookback(*u.child); }
    int operator()(const Binary& b) const {
      return std::max(lookback(*b.lhs), lookback(*b.rhs));
    }
    int operator()(const Rolling& r) const { return lookback(*r.child) + r.window - 1; }
    int operator()(const Ref& r) const { return lookback(*r.child) + r.shift; }
  };
  return std::visit(Visit{}, e.node);
}

inline bool tree_equal(const Expr& a, const Expr& b) {
  return canonical_key(a) == canonical_key(b);
}

/// Unique raw attribute names referenced by the tree.
inline void collect_attributes(const Expr& e, std::set<std::string>& out) {
  struct Visit {
    std::set<std::string>& out;
    void operator()(const RawAttr& a) const { out.insert(a.name); }
    void operator()(const Constant&) const {}
    void operator()(const Unary& u) const { collect_attributes(*u.child, out); }
    void operator()(const Binary& b) const {
      collect_attributes(*b.lhs, out);
      collect_attributes(*b.rhs, out);
    }
    void operator()(const Rolling& r) const { collect_attributes(*r.child, out); }
    void operator()(const Ref& r) const { collect_attributes(*r.child, out); }
  };
  std::visit(Visit{out}, e.node);
}

inline std::set<std::string> attributes(const Expr& e) {
  std::set<std::string> out;
  collect_attributes(e, out);
  return out;
}

inline bool contains_rolling(const Expr& e) {
  struct Visit {
    bool operator()(const RawAttr&) const { return false; }
    bool operator()(const Constant&) const { return false; }
    bool operator()(const Unary& u) const { return contains_rolling(*u.child); }
    bool operator()(const Binary& b) const {
      return contains_rolling(*b.lhs) || contains_rolling(*b.rhs);
    }
    bool operator()(const Rolling&) const { return true; }
    bool operator()(const Ref& r) const { return contains_rolling(*r.child); }
  };
  return std::visit(Visit{}, e.node);
}

namespace detail {

/// Recursive-descent parser for the factor grammar. Precedence, loosest to
/// tightest: comparisons, +/-, */, unary minus; all left-associative.
class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  ExprPtr parse() {
    ExprPtr e = comparison();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    raise(Errc::syntax_error, what + " at byte " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  ExprPtr comparison() {
    ExprPtr lhs = sum();
    while (true) {
      skip_ws();
      BinaryOp op;
      if (starts_with(">=")) {
        op = BinaryOp::ge;
        pos_ += 2;
      } else if (starts_with("<=")) {
        op = BinaryOp::le;
        pos_ += 2;
      } else if (starts_with("==")) {
        op = BinaryOp::eq;
        pos_ += 2;
      } else if (starts_with(">")) {
        op = BinaryOp::gt;
        pos_ += 1;
      } else if (starts_with("<")) {
        op = BinaryOp::lt;
        pos_ += 1;
      } else {
        return lhs;
      }
      lhs = make(Binary{op, lhs, sum()});
    }
  }

  ExprPtr sum() {
    ExprPtr lhs = term();
    while (true) {
      if (eat('+'))
        lhs = make(Binary{BinaryOp::add, lhs, term()});
      else if (eat('-'))
        lhs = make(Binary{BinaryOp::sub, lhs, term()});
      else
        return lhs;
    }
  }

  ExprPtr term() {
    ExprPtr lhs = factor();
    while (true) {
      if (eat('*'))
        lhs = make(Binary{BinaryOp::mul, lhs, factor()});
      else if (eat('/'))
        lhs = make(Binary{BinaryOp::div, lhs, factor()});
      else
        return lhs;
    }
  }

  ExprPtr factor() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '-') {
      ++pos_;
      return make(Unary{UnaryOp::neg, factor()});
    }
    if (c == '(') {
      ++pos_;
      ExprPtr e = comparison();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (c == '$') {
      ++pos_;
      const std::string name = ident();
      if (name.empty()) fail("expected attribute name after '$'");
      return make(RawAttr{lowercase(name)});
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return call();
    fail(std::string("unexpected character '") + c + "'");
  }

  ExprPtr number() {
    double v = 0.0;
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc()) fail("invalid number");
    pos_ += static_cast<std::size_t>(res.ptr - begin);
    return make(Constant{v});
  }

  ExprPtr call() {
    const std::size_t name_pos = pos_;
    const std::string name = uppercase(ident());
    if (!eat('(')) {
      pos_ = name_pos;
      fail("bare identifier '" + name + "' (attributes are written $name)");
    }
    std::vector<ExprPtr> args;
    std::vector<std::size_t> arg_offsets;
    if (peek() != ')') {
      do {
        skip_ws();
        arg_offsets.push_back(pos_);
        args.push_back(comparison());
      } while (eat(','));
    }
    if (!eat(')')) fail("expected ')'");

    const auto require_arity = [&](std::size_t n) {
      if (args.size() != n) {
        pos_ = name_pos;
        raise(Errc::arity_error, name + " takes " + std::to_string(n) + " argument" +
                                     (n == 1 ? "" : "s") + ", got " + std::to_string(args.size()) +
                                     " at byte " + std::to_string(name_pos));
      }
    };

    if (name == "ABS" || name == "LOG") {
      require_arity(1);
      return make(Unary{name == "ABS" ? UnaryOp::abs : UnaryOp::log, args[0]});
    }
    if (name == "REF") {
      require_arity(2);
      const int shift = literal_int(*args[1], arg_offsets[1], /*min=*/0, "shift");
      return make(Ref{args[0], shift});
    }
    RollingOp op;
    if (name == "MEAN")
      op = RollingOp::mean;
    else if (name == "STD")
      op = RollingOp::std;
    else if (name == "SUM")
      op = RollingOp::sum;
    else if (name == "MAX")
      op = RollingOp::max;
    else if (name == "MIN")
      op = RollingOp::min;
    else {
      pos_ = name_pos;
      raise(Errc::unknown_function,
            "unknown function '" + name + "' at byte " + std::to_string(name_pos));
    }
    require_arity(2);
    const int window = literal_int(*args[1], arg_offsets[1], /*min=*/1, "window");
    return make(Rolling{op, args[0], window});
  }

  /// Windows and shifts must be plain integer literals so lookback stays
  /// static and cache keys stay well-defined.
  int literal_int(const Expr& e, std::size_t offset, int min, const char* what) {
    const auto* c = std::get_if<Constant>(&e.node);
    if (c == nullptr || c->value != static_cast<double>(static_cast<int>(c->value)) ||
        static_cast<int>(c->value) < min)
      raise(Errc::non_integer_window, std::string(what) + " must be an integer literal >= " +
                                          std::to_string(min) + " at byte " +
                                          std::to_string(offset));
    return static_cast<int>(c->value);
  }

  std::string ident() {
    skip_ws();
    const std::size_t begin = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    return std::string(text_.substr(begin, pos_ - begin));
  }

  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  static std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  static std::string uppercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }

  template <typename Node>
  static ExprPtr make(Node&& n) {
    return std::make_shared<Expr>(Expr{std::forward<Node>(n)});
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a factor formula. Function names are case-insensitive, `$name`
/// denotes a raw attribute. Errors carry the byte offset of the problem.
inline ExprPtr parse(std::string_view text) { return detail::Parser(text).parse(); }

inline std::string canonical_key(std::string_view text) { return canonical_key(*parse(text)); }

}  // namespace factorstore
