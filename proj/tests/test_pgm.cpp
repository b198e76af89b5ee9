#include <doctest.h>

#include <sstream>

#include "malvis/error.hpp"
#include "malvis/pgm.hpp"
#include "malvis/rng.hpp"
#include "support/tmpdir.hpp"

using namespace malvis;

namespace {

GrayImage random_image(SplitMix64& rng, std::size_t w, std::size_t h) {
  GrayImage image(w, h);
  for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  return image;
}

}  // namespace

TEST_CASE("write_pgm emits the exact minimal encoding") {
  GrayImage one(1, 1);
  one.pixels[0] = 0;
  std::ostringstream out;
  const std::size_t written = write_pgm(one, out);
  const std::string expected = std::string("P5\n1 1\n255\n") + '\0';
  CHECK(out.str() == expected);
  CHECK(written == expected.size());
}

TEST_CASE("pgm round-trip is bit-exact") {
  SplitMix64 rng(23);
  for (int round = 0; round < 1000; ++round) {
    const GrayImage image =
        random_image(rng, 1 + rng.next_below(80), 1 + rng.next_below(60));
    std::ostringstream out;
    write_pgm(image, out);
    std::istringstream in(out.str());
    REQUIRE(read_pgm(in) == image);
  }
}

TEST_CASE("pgm round-trip through a file") {
  testsupport::TempDir tmp("pgm");
  SplitMix64 rng(29);
  const GrayImage image = random_image(rng, 64, 48);
  const auto path = tmp.path() / "img.pgm";
  write_pgm(image, path);
  CHECK(read_pgm(path) == image);
}

TEST_CASE("read_pgm rejects malformed headers") {
  for (const std::string bad : {"", "P6\n1 1\n255\nx", "P5\nx 1\n255\nx", "P5\n1 1\n"}) {
    std::istringstream in(bad);
    try {
      read_pgm(in);
      FAIL("expected MalformedHeader for: " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == errc::malformed_header);
    }
  }
}

TEST_CASE("read_pgm rejects unsupported maxval") {
  std::istringstream in(std::string("P5\n1 1\n65535\n") + "xy");
  try {
    read_pgm(in);
    FAIL("expected UnsupportedMaxval");
  } catch (const Error& e) {
    CHECK(e.code() == errc::unsupported_maxval);
  }
}

TEST_CASE("read_pgm rejects payload size mismatches") {
  SUBCASE("declares 4x4 but carries 15 bytes") {
    std::istringstream in("P5\n4 4\n255\n" + std::string(15, 'a'));
    try {
      read_pgm(in);
      FAIL("expected SizeMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == errc::size_mismatch);
    }
  }
  SUBCASE("trailing bytes after the payload") {
    std::istringstream in("P5\n2 2\n255\n" + std::string(5, 'a'));
    CHECK_THROWS_AS(read_pgm(in), Error);
  }
}

TEST_CASE("read_pgm skips header comments") {
  std::istringstream in("P5\n# a comment\n2 1\n255\nab");
  const GrayImage image = read_pgm(in);
  CHECK(image.width == 2);
  CHECK(image.height == 1);
  CHECK(image.pixels == std::vector<std::uint8_t>({'a', 'b'}));
}

TEST_CASE("write_pgm validates the image invariant") {
  GrayImage broken(3, 2);
  broken.pixels.pop_back();
  std::ostringstream out;
  try {
    write_pgm(broken, out);
    FAIL("expected SizeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::size_mismatch);
  }
}
