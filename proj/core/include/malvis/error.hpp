#pragma once

#include <stdexcept>
#include <string>

namespace malvis {

// Every failure the library reports. The CLI maps these onto process exit
// codes: configuration/usage problems -> 1, data problems -> 2, numeric
// failures -> 3.
enum class errc {
  not_pe,
  truncated,
  malformed_header,
  unsupported_maxval,
  size_mismatch,
  empty_input,
  zero_size,
  unreadable_image,
  empty_corpus,
  family_too_small,
  shape_mismatch,
  label_out_of_range,
  unknown_architecture,
  incompatible_shape,
  malformed_snapshot,
  config_error,
  io_failure,
  diverged_loss,
};

const char* errc_name(errc code);

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace malvis
