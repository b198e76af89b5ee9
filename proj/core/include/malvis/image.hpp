#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace malvis {

// Row-major 8-bit grayscale image, top-left origin.
// Invariant: pixels.size() == width * height.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  std::uint8_t& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }

  bool operator==(const GrayImage&) const = default;
};

}  // namespace malvis
