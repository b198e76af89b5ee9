#include "malvis/error.hpp"

namespace malvis {

const char* errc_name(errc code) {
  switch (code) {
    case errc::not_pe: return "NotPE";
    case errc::truncated: return "Truncated";
    case errc::malformed_header: return "MalformedHeader";
    case errc::unsupported_maxval: return "UnsupportedMaxval";
    case errc::size_mismatch: return "SizeMismatch";
    case errc::empty_input: return "EmptyInput";
    case errc::zero_size: return "ZeroSize";
    case errc::unreadable_image: return "UnreadableImage";
    case errc::empty_corpus: return "EmptyCorpus";
    case errc::family_too_small: return "FamilyTooSmall";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::label_out_of_range: return "LabelOutOfRange";
    case errc::unknown_architecture: return "UnknownArchitecture";
    case errc::incompatible_shape: return "IncompatibleShape";
    case errc::malformed_snapshot: return "MalformedSnapshot";
    case errc::config_error: return "ConfigError";
    case errc::io_failure: return "IoFailure";
    case errc::diverged_loss: return "DivergedLoss";
  }
  return "UnknownError";
}

}  // namespace malvis
