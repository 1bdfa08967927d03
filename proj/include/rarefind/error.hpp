#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rarefind {

enum class Errc {
  invalid_argument,
  not_found,
  io_error,
  format_error,
  dimension_mismatch,
  non_finite,
  overlapping_splits,
  empty_split,
  single_class_pool,
  invalid_index,
  class_too_small,
  label_mismatch,
  unknown_strategy,
};

std::string_view to_string(Errc code);

/// Error raised by every rarefind module. The code lets callers (the HTTP
/// layer in particular) map failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace rarefind
