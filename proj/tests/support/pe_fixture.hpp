#pragma once

// Builds minimal PE files byte-by-byte following the on-disk layout: DOS
// header with the PE offset at 0x3c, "PE\0\0", 20-byte COFF header, optional
// header, then 40-byte section headers. The expected parse results are known
// by construction.

#include <cstdint>
#include <string>
#include <vector>

namespace testsupport {

struct FixtureSection {
  std::string name;
  std::uint32_t raw_offset;
  std::uint32_t raw_size;
  std::uint32_t characteristics = 0x60000020;
};

inline void put16(std::vector<std::uint8_t>& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v & 0xFF);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

inline void put32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
}

// total_size of 0 means "just large enough for headers and section payloads".
inline std::vector<std::uint8_t> build_pe(const std::vector<FixtureSection>& sections,
                                          std::size_t total_size = 0,
                                          std::uint16_t optional_header_size = 224) {
  constexpr std::uint32_t pe_offset = 0x80;
  const std::size_t table_offset = pe_offset + 4 + 20 + optional_header_size;
  std::size_t needed = table_offset + sections.size() * 40;
  for (const FixtureSection& s : sections)
    needed = std::max(needed, static_cast<std::size_t>(s.raw_offset) + s.raw_size);
  const std::size_t size = total_size ? total_size : needed;

  std::vector<std::uint8_t> file(size, 0);
  file[0] = 'M';
  file[1] = 'Z';
  put32(file, 0x3c, pe_offset);
  file[pe_offset] = 'P';
  file[pe_offset + 1] = 'E';
  // COFF header
  put16(file, pe_offset + 4, 0x014c);  // Machine: i386
  put16(file, pe_offset + 6, static_cast<std::uint16_t>(sections.size()));
  put16(file, pe_offset + 20, optional_header_size);
  put16(file, pe_offset + 22, 0x0102);  // Characteristics: executable, 32-bit

  for (std::size_t i = 0; i < sections.size(); ++i) {
    const std::size_t hdr = table_offset + i * 40;
    for (std::size_t c = 0; c < 8 && c < sections[i].name.size(); ++c)
      file[hdr + c] = static_cast<std::uint8_t>(sections[i].name[c]);
    put32(file, hdr + 8, sections[i].raw_size);        // VirtualSize
    put32(file, hdr + 12, 0x1000 * static_cast<std::uint32_t>(i + 1));  // VirtualAddress
    put32(file, hdr + 16, sections[i].raw_size);       // SizeOfRawData
    put32(file, hdr + 20, sections[i].raw_offset);     // PointerToRawData
    put32(file, hdr + 36, sections[i].characteristics);
    // fill the payload with a recognizable pattern
    for (std::size_t p = 0; p < sections[i].raw_size && sections[i].raw_offset + p < size; ++p)
      file[sections[i].raw_offset + p] = static_cast<std::uint8_t>((i * 37 + p) & 0xFF);
  }
  return file;
}

}  // namespace testsupport
