#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "malvis/image.hpp"

namespace malvis {

// One row of the COFF section table, as stored on disk.
struct SectionRecord {
  std::string name;               // section name, trailing NULs stripped
  std::uint64_t file_offset = 0;  // PointerToRawData
  std::uint64_t file_size = 0;    // SizeOfRawData
  std::uint32_t characteristics = 0;

  bool operator==(const SectionRecord&) const = default;
};

// Parses the section table of a PE/COFF binary. Only the DOS "MZ" magic, the
// PE signature offset at 0x3c, the "PE\0\0" signature, the COFF
// NumberOfSections / SizeOfOptionalHeader fields and the 40-byte section
// headers are interpreted; section order is preserved as on disk.
// Nonstandard section names are reported verbatim.
//
// Throws errc::not_pe when the magic or signature is missing and
// errc::truncated when a declared header or section extends past the input.
std::vector<SectionRecord> parse_sections(std::span<const std::uint8_t> file);

// Identity mapping: each byte becomes one pixel intensity with its unsigned
// value, 0x00 -> 0 through 0xFF -> 255.
std::vector<std::uint8_t> bytes_to_pixels(std::span<const std::uint8_t> bytes);

// Fixed width schedule over the file size in bytes (1 KB = 1024 bytes):
//   < 10 KB -> 32    | 10-30 KB  -> 64  | 30-60 KB    -> 128 | 60-100 KB -> 256
//   100-200 KB -> 384| 200-500 KB-> 512 | 500-1000 KB -> 768 | > 1000 KB -> 1024
// Monotonically non-decreasing. Throws errc::zero_size for an empty file.
std::size_t choose_width(std::uint64_t file_size);

// Lays the bytes out row-major at the given width; height = ceil(len/width)
// and the final row is padded with intensity 0. Deterministic.
// Throws errc::empty_input when bytes is empty or width is 0.
GrayImage render_image(std::span<const std::uint8_t> bytes, std::size_t width);

}  // namespace malvis
