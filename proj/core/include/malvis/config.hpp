#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "malvis/model.hpp"
#include "malvis/train.hpp"

namespace malvis {

// Flat "section.key = value" text. Blank lines and lines starting with '#'
// are skipped; later assignments win, which is how CLI overrides work.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(const std::string& text);
  static KeyValueConfig parse_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void set_pair(const std::string& key_equals_value);  // "a.b=c"
  bool contains(const std::string& key) const;

  // Typed removal; a taken key no longer counts as unknown. Malformed values
  // raise errc::config_error naming the key.
  std::optional<std::string> take(const std::string& key);
  std::string take_string(const std::string& key, const std::string& fallback);
  double take_double(const std::string& key, double fallback);
  std::size_t take_size(const std::string& key, std::size_t fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);

  std::vector<std::string> remaining_keys() const;
  bool empty() const { return values_.empty(); }

 private:
  std::map<std::string, std::string> values_;
};

struct DataOptions {
  std::filesystem::path root;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t channels = 1;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t split_seed = 1;
};

// Fully resolved run description. Every seed is an explicit constant; a run
// directory always receives the to_text() form of the config that produced
// it.
struct RunConfig {
  DataOptions data;
  ModelSpec model;    // input shape mirrors data.image_* / data.channels
  TrainConfig train;
  std::filesystem::path output_dir = "run";

  // Consumes the key-value set; any key left over is a hard error
  // (errc::config_error naming the key).
  static RunConfig resolve(KeyValueConfig kv);
  std::string to_text() const;
};

}  // namespace malvis
