#include "malvis/pe.hpp"

#include <algorithm>

#include "malvis/error.hpp"

namespace malvis {

namespace {

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

constexpr std::size_t kDosHeaderSize = 0x40;
constexpr std::size_t kPeSignatureOffsetField = 0x3c;
constexpr std::size_t kCoffHeaderSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;

}  // namespace

std::vector<SectionRecord> parse_sections(std::span<const std::uint8_t> file) {
  if (file.size() < 2 || file[0] != 'M' || file[1] != 'Z')
    raise(errc::not_pe, "missing MZ magic");
  if (file.size() < kDosHeaderSize)
    raise(errc::truncated, "DOS header extends past end of input");

  const std::uint32_t pe_offset = read_u32(file, kPeSignatureOffsetField);
  if (static_cast<std::uint64_t>(pe_offset) + 4 > file.size())
    raise(errc::truncated, "PE signature offset beyond end of input");
  if (file[pe_offset] != 'P' || file[pe_offset + 1] != 'E' || file[pe_offset + 2] != 0 ||
      file[pe_offset + 3] != 0)
    raise(errc::not_pe, "missing PE\\0\\0 signature at declared offset");

  const std::uint64_t coff = static_cast<std::uint64_t>(pe_offset) + 4;
  if (coff + kCoffHeaderSize > file.size())
    raise(errc::truncated, "COFF header extends past end of input");
  const std::uint16_t num_sections = read_u16(file, coff + 2);
  const std::uint16_t optional_size = read_u16(file, coff + 16);

  const std::uint64_t table = coff + kCoffHeaderSize + optional_size;
  if (table + static_cast<std::uint64_t>(num_sections) * kSectionHeaderSize > file.size())
    raise(errc::truncated, "section table extends past end of input");

  std::vector<SectionRecord> sections;
  sections.reserve(num_sections);
  for (std::uint16_t i = 0; i < num_sections; ++i) {
    const std::size_t hdr = static_cast<std::size_t>(table) + i * kSectionHeaderSize;
    SectionRecord rec;
    rec.name.assign(reinterpret_cast<const char*>(file.data() + hdr), 8);
    while (!rec.name.empty() && rec.name.back() == '\0') rec.name.pop_back();
    rec.file_size = read_u32(file, hdr + 16);      // SizeOfRawData
    rec.file_offset = read_u32(file, hdr + 20);    // PointerToRawData
    rec.characteristics = read_u32(file, hdr + 36);
    if (rec.file_offset + rec.file_size > file.size())
      raise(errc::truncated, "section '" + rec.name + "' raw data extends past end of input");
    sections.push_back(std::move(rec));
  }
  return sections;
}

std::vector<std::uint8_t> bytes_to_pixels(std::span<const std::uint8_t> bytes) {
  return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

std::size_t choose_width(std::uint64_t file_size) {
  if (file_size == 0) raise(errc::zero_size, "cannot choose a width for an empty file");
  constexpr std::uint64_t kb = 1024;
  if (file_size < 10 * kb) return 32;
  if (file_size < 30 * kb) return 64;
  if (file_size < 60 * kb) return 128;
  if (file_size < 100 * kb) return 256;
  if (file_size < 200 * kb) return 384;
  if (file_size < 500 * kb) return 512;
  if (file_size < 1000 * kb) return 768;
  return 1024;
}

GrayImage render_image(std::span<const std::uint8_t> bytes, std::size_t width) {
  if (bytes.empty()) raise(errc::empty_input, "no bytes to render");
  if (width == 0) raise(errc::empty_input, "width must be at least 1");
  const std::size_t height = (bytes.size() + width - 1) / width;
  GrayImage image(width, height);
  const std::vector<std::uint8_t> pixels = bytes_to_pixels(bytes);
  std::copy(pixels.begin(), pixels.end(), image.pixels.begin());
  return image;
}

}  // namespace malvis
