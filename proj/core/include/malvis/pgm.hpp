#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <ostream>

#include "malvis/image.hpp"

namespace malvis {

// Binary PGM (P5), maxval 255, written bit-exactly as
//   "P5\n<width> <height>\n255\n" + width*height raw bytes, row-major.
// Returns the number of bytes written.
std::size_t write_pgm(const GrayImage& image, std::ostream& out);
std::size_t write_pgm(const GrayImage& image, const std::filesystem::path& path);

// Reads a binary PGM. `#` comments are allowed between header tokens. The
// payload must hold exactly width*height bytes.
// Throws errc::malformed_header, errc::unsupported_maxval (maxval != 255) or
// errc::size_mismatch.
GrayImage read_pgm(std::istream& in);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace malvis
