#include "malvis/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "malvis/error.hpp"

namespace malvis {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_';
  });
}

std::string double_repr(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      raise(errc::config_error, "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (!valid_key(key))
      raise(errc::config_error, "line " + std::to_string(line_no) + ": bad key '" + key + "'");
    config.values_[key] = value;
  }
  return config;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(errc::io_failure, "cannot open config '" + path.string() + "'");
  std::string text(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  return parse_text(text);
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) raise(errc::config_error, "bad key '" + key + "'");
  values_[key] = value;
}

void KeyValueConfig::set_pair(const std::string& key_equals_value) {
  const std::size_t eq = key_equals_value.find('=');
  if (eq == std::string::npos)
    raise(errc::config_error, "expected key=value, got '" + key_equals_value + "'");
  set(trim(key_equals_value.substr(0, eq)), trim(key_equals_value.substr(eq + 1)));
}

bool KeyValueConfig::contains(const std::string& key) const { return values_.count(key) > 0; }

std::optional<std::string> KeyValueConfig::take(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  std::string value = it->second;
  values_.erase(it);
  return value;
}

std::string KeyValueConfig::take_string(const std::string& key, const std::string& fallback) {
  return take(key).value_or(fallback);
}

double KeyValueConfig::take_double(const std::string& key, double fallback) {
  const auto value = take(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const double parsed = std::stod(*value, &used);
    if (used != value->size()) throw std::invalid_argument("trailing junk");
    return parsed;
  } catch (...) {
    raise(errc::config_error, key + ": '" + *value + "' is not a number");
  }
}

std::uint64_t KeyValueConfig::take_u64(const std::string& key, std::uint64_t fallback) {
  const auto value = take(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const std::uint64_t parsed = std::stoull(*value, &used);
    if (used != value->size()) throw std::invalid_argument("trailing junk");
    return parsed;
  } catch (...) {
    raise(errc::config_error, key + ": '" + *value + "' is not an unsigned integer");
  }
}

std::size_t KeyValueConfig::take_size(const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(take_u64(key, fallback));
}

std::vector<std::string> KeyValueConfig::remaining_keys() const {
  std::vector<std::string> keys;
  keys.reserve(values_.size());
  for (const auto& [key, value] : values_) keys.push_back(key);
  return keys;
}

RunConfig RunConfig::resolve(KeyValueConfig kv) {
  RunConfig config;

  config.data.root = kv.take_string("data.root", "");
  config.data.image_height = kv.take_size("data.image_height", 64);
  config.data.image_width = kv.take_size("data.image_width", 64);
  config.data.channels = kv.take_size("data.channels", 1);
  config.data.train_fraction = kv.take_double("data.train_fraction", 0.7);
  config.data.val_fraction = kv.take_double("data.val_fraction", 0.15);
  config.data.test_fraction = kv.take_double("data.test_fraction", 0.15);
  config.data.split_seed = kv.take_u64("data.split_seed", 1);

  config.model.architecture =
      architecture_from_name(kv.take_string("model.architecture", "tiny_vgg"));
  config.model.input_channels = config.data.channels;
  config.model.input_height = config.data.image_height;
  config.model.input_width = config.data.image_width;
  config.model.num_classes = kv.take_size("model.num_classes", 0);  // 0: derive from corpus
  config.model.width_multiplier = kv.take_double("model.width_multiplier", 1.0);
  const bool svm_arch = config.model.architecture == Architecture::cnn_svm ||
                        config.model.architecture == Architecture::gru_svm ||
                        config.model.architecture == Architecture::mlp_svm;
  config.model.head =
      head_from_name(kv.take_string("model.head", svm_arch ? "hinge_l2" : "softmax"));
  config.model.seed = kv.take_u64("model.seed", 42);

  config.train.epochs = kv.take_size("train.epochs", 30);
  config.train.batch_size = kv.take_size("train.batch_size", 64);
  config.train.learning_rate = kv.take_double("train.learning_rate", 0.01);
  config.train.momentum = kv.take_double("train.momentum", 0.9);
  config.train.seed = kv.take_u64("train.seed", 7);
  config.train.patience = kv.take_size("train.patience", 0);
  config.train.aux_weight = kv.take_double("train.aux_weight", 0.3);

  config.output_dir = kv.take_string("output.dir", "run");

  for (const std::string& key : kv.remaining_keys())
    raise(errc::config_error, "unknown config key '" + key + "'");

  if (config.data.channels != 1 && config.data.channels != 3)
    raise(errc::config_error, "data.channels: must be 1 or 3");
  if (config.data.image_height < 1 || config.data.image_width < 1)
    raise(errc::config_error, "data.image_height/width: must be >= 1");
  const double frac_sum =
      config.data.train_fraction + config.data.val_fraction + config.data.test_fraction;
  if (std::abs(frac_sum - 1.0) > 1e-9)
    raise(errc::config_error, "data.*_fraction: fractions must sum to 1");
  if (config.train.epochs < 1) raise(errc::config_error, "train.epochs: must be >= 1");
  if (config.train.batch_size < 1) raise(errc::config_error, "train.batch_size: must be >= 1");
  if (!(config.train.learning_rate > 0.0))
    raise(errc::config_error, "train.learning_rate: must be > 0");
  if (config.train.momentum < 0.0 || config.train.momentum >= 1.0)
    raise(errc::config_error, "train.momentum: must be in [0,1)");
  if (!(config.model.width_multiplier > 0.0))
    raise(errc::config_error, "model.width_multiplier: must be > 0");

  return config;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "data.channels = " << data.channels << "\n"
      << "data.image_height = " << data.image_height << "\n"
      << "data.image_width = " << data.image_width << "\n"
      << "data.root = " << data.root.generic_string() << "\n"
      << "data.split_seed = " << data.split_seed << "\n"
      << "data.test_fraction = " << double_repr(data.test_fraction) << "\n"
      << "data.train_fraction = " << double_repr(data.train_fraction) << "\n"
      << "data.val_fraction = " << double_repr(data.val_fraction) << "\n"
      << "model.architecture = " << architecture_name(model.architecture) << "\n"
      << "model.head = " << head_name(model.head) << "\n"
      << "model.num_classes = " << model.num_classes << "\n"
      << "model.seed = " << model.seed << "\n"
      << "model.width_multiplier = " << double_repr(model.width_multiplier) << "\n"
      << "output.dir = " << output_dir.generic_string() << "\n"
      << "train.aux_weight = " << double_repr(train.aux_weight) << "\n"
      << "train.batch_size = " << train.batch_size << "\n"
      << "train.epochs = " << train.epochs << "\n"
      << "train.learning_rate = " << double_repr(train.learning_rate) << "\n"
      << "train.momentum = " << double_repr(train.momentum) << "\n"
      << "train.patience = " << train.patience << "\n"
      << "train.seed = " << train.seed << "\n";
  return out.str();
}

}  // namespace malvis
