#include "malvis/pgm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "malvis/error.hpp"

namespace malvis {

namespace {

void check_valid(const GrayImage& image) {
  if (image.width == 0 || image.height == 0)
    raise(errc::size_mismatch, "image dimensions must be at least 1x1");
  if (image.pixels.size() != image.width * image.height)
    raise(errc::size_mismatch, "pixel payload does not match width*height");
}

// Skips whitespace and '#' comments; returns the next unsigned decimal token.
std::uint64_t next_number(const std::string& data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= data.size() || !std::isdigit(static_cast<unsigned char>(data[pos])))
    raise(errc::malformed_header, "expected a decimal header field");
  std::uint64_t value = 0;
  while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
    value = value * 10 + static_cast<std::uint64_t>(data[pos] - '0');
    if (value > 0xFFFFFFFFULL) raise(errc::malformed_header, "header field out of range");
    ++pos;
  }
  return value;
}

GrayImage parse_pgm(const std::string& data) {
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5')
    raise(errc::malformed_header, "missing P5 magic");
  std::size_t pos = 2;
  const std::uint64_t width = next_number(data, pos);
  const std::uint64_t height = next_number(data, pos);
  const std::uint64_t maxval = next_number(data, pos);
  if (width == 0 || height == 0) raise(errc::malformed_header, "zero image dimension");
  if (maxval != 255) raise(errc::unsupported_maxval, "maxval " + std::to_string(maxval));
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    raise(errc::malformed_header, "missing whitespace before payload");
  ++pos;  // exactly one whitespace byte separates header and payload

  const std::uint64_t expected = width * height;
  const std::uint64_t available = data.size() - pos;
  if (available != expected)
    raise(errc::size_mismatch, "payload holds " + std::to_string(available) + " bytes, expected " +
                                   std::to_string(expected));

  GrayImage image(static_cast<std::size_t>(width), static_cast<std::size_t>(height));
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos), data.end(),
            reinterpret_cast<char*>(image.pixels.data()));
  return image;
}

}  // namespace

std::size_t write_pgm(const GrayImage& image, std::ostream& out) {
  check_valid(image);
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) raise(errc::io_failure, "failed to write PGM stream");
  return header.size() + image.pixels.size();
}

std::size_t write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(errc::io_failure, "cannot open '" + path.string() + "' for writing");
  return write_pgm(image, out);
}

GrayImage read_pgm(std::istream& in) {
  std::string data(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  return parse_pgm(data);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(errc::io_failure, "cannot open '" + path.string() + "' for reading");
  return read_pgm(in);
}

}  // namespace malvis
