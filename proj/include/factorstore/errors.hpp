#pragma once

#include <stdexcept>
#include <string>

namespace factorstore {

/// Stable error codes for every failure mode the library can report.
/// CLI exit-code mapping: expression-syntax class errors map to exit 2,
/// everything else to exit 1.
enum class Errc {
  non_monotonic_calendar,
  prefix_mismatch,
  out_of_range,
  index_beyond_calendar,
  missing_calendar,
  missing_series,
  missing_pool,
  non_monotonic_update,
  syntax_error,
  unknown_function,
  arity_error,
  non_integer_window,
  unknown_attribute,
  corrupt_entry,
  non_contiguous_append,
  degenerate_acceptance,
  non_empty_target,
  digest_mismatch,
  empty_range,
  parse_error,
  immutable_history,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::non_monotonic_calendar: return "NonMonotonicCalendar";
    case Errc::prefix_mismatch: return "PrefixMismatch";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::index_beyond_calendar: return "IndexBeyondCalendar";
    case Errc::missing_calendar: return "MissingCalendar";
    case Errc::missing_series: return "MissingSeries";
    case Errc::missing_pool: return "MissingPool";
    case Errc::non_monotonic_update: return "NonMonotonicUpdate";
    case Errc::syntax_error: return "SyntaxError";
    case Errc::unknown_function: return "UnknownFunction";
    case Errc::arity_error: return "ArityError";
    case Errc::non_integer_window: return "NonIntegerWindow";
    case Errc::unknown_attribute: return "UnknownAttribute";
    case Errc::corrupt_entry: return "CorruptEntry";
    case Errc::non_contiguous_append: return "NonContiguousAppend";
    case Errc::degenerate_acceptance: return "DegenerateAcceptance";
    case Errc::non_empty_target: return "NonEmptyTarget";
    case Errc::digest_mismatch: return "DigestMismatch";
    case Errc::empty_range: return "EmptyRange";
    case Errc::parse_error: return "ParseError";
    case Errc::immutable_history: return "ImmutableHistory";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace factorstore
