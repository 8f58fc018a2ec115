#pragma once

#include <stdexcept>
#include <string>

namespace cotsteer {

enum class Errc {
  config_invalid,
  seq_too_long,
  unknown_token,
  unknown_option,
  empty_corpus,
  checkpoint_format,
  capability_missing,
  malformed_logprobs,
  rate_limited,
  transport,
  bad_request,
  no_steps_found,
  no_answer_found,
  non_contiguous_steps,
  curve_too_short,
  pool_too_small,
  empty_pool,
  context_overflow,
  degenerate_labels,
  single_class,
  zero_direction,
  k_too_large,
  bad_split,
  format_error,
  too_many_malformed,
  io_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::config_invalid: return "config_invalid";
    case Errc::seq_too_long: return "seq_too_long";
    case Errc::unknown_token: return "unknown_token";
    case Errc::unknown_option: return "unknown_option";
    case Errc::empty_corpus: return "empty_corpus";
    case Errc::checkpoint_format: return "checkpoint_format";
    case Errc::capability_missing: return "capability_missing";
    case Errc::malformed_logprobs: return "malformed_logprobs";
    case Errc::rate_limited: return "rate_limited";
    case Errc::transport: return "transport";
    case Errc::bad_request: return "bad_request";
    case Errc::no_steps_found: return "no_steps_found";
    case Errc::no_answer_found: return "no_answer_found";
    case Errc::non_contiguous_steps: return "non_contiguous_steps";
    case Errc::curve_too_short: return "curve_too_short";
    case Errc::pool_too_small: return "pool_too_small";
    case Errc::empty_pool: return "empty_pool";
    case Errc::context_overflow: return "context_overflow";
    case Errc::degenerate_labels: return "degenerate_labels";
    case Errc::single_class: return "single_class";
    case Errc::zero_direction: return "zero_direction";
    case Errc::k_too_large: return "k_too_large";
    case Errc::bad_split: return "bad_split";
    case Errc::format_error: return "format_error";
    case Errc::too_many_malformed: return "too_many_malformed";
    case Errc::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace cotsteer
