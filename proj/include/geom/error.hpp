#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geom {

enum class Errc {
  invalid_config,
  invalid_size,
  too_large,
  out_of_memory,
  invalid_free,
  invalid_handle,
  trap,
  out_of_bounds,
  unbacked,
  backing_failure,
  structural,
  parse,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI, the differential harness) can branch without parsing
/// messages.
class GeomError : public std::runtime_error {
 public:
  GeomError(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geom
