#include "malvis/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "malvis/error.hpp"
#include "malvis/pgm.hpp"
#include "malvis/rng.hpp"

namespace malvis {

namespace {

std::vector<ImageDecoder>& decoder_registry() {
  static std::vector<ImageDecoder> registry;
  return registry;
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double mean = (static_cast<double>(r) + g + b) / 3.0;
  return static_cast<std::uint8_t>(std::floor(mean + 0.5));
}

// Binary PPM (P6), maxval 255; shares the header grammar with PGM.
std::optional<DecodedImage> decode_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') return std::nullopt;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> width >> height >> maxval;
  if (!in || width == 0 || height == 0 || maxval != 255) return std::nullopt;
  in.get();  // single whitespace byte
  DecodedImage img{width, height, 3, std::vector<std::uint8_t>(width * height * 3)};
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.data.size()) return std::nullopt;
  return img;
}

}  // namespace

CorpusIndex scan_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    raise(errc::empty_corpus, "'" + root.string() + "' is not a directory");

  std::vector<std::string> families;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    families.push_back(name);
  }
  std::sort(families.begin(), families.end());

  CorpusIndex index;
  index.root = root;
  index.families = families;
  index.counts.assign(families.size(), 0);
  for (std::size_t id = 0; id < families.size(); ++id) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / families[id])) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      if (name.empty() || name[0] == '.') continue;
      files.push_back(name);
    }
    std::sort(files.begin(), files.end());
    for (const std::string& file : files)
      index.samples.push_back({families[id] + "/" + file, families[id], id});
    index.counts[id] = files.size();
  }
  std::sort(index.samples.begin(), index.samples.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  if (index.samples.empty())
    raise(errc::empty_corpus, "no image files under '" + root.string() + "'");
  return index;
}

void register_image_decoder(ImageDecoder decoder) {
  decoder_registry().push_back(std::move(decoder));
}

GrayImage load_gray(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path))
    raise(errc::unreadable_image, "'" + path.string() + "' does not exist");

  // native PGM first
  {
    std::ifstream in(path, std::ios::binary);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in && magic[0] == 'P' && magic[1] == '5') {
      try {
        return read_pgm(path);
      } catch (const Error& e) {
        raise(errc::unreadable_image, "'" + path.string() + "': " + e.what());
      }
    }
  }

  std::optional<DecodedImage> decoded = decode_ppm(path);
  if (!decoded) {
    for (const ImageDecoder& decoder : decoder_registry()) {
      decoded = decoder(path);
      if (decoded) break;
    }
  }
  if (!decoded) raise(errc::unreadable_image, "'" + path.string() + "': unrecognized format");

  const DecodedImage& img = *decoded;
  if (img.channels != 1 && img.channels != 3)
    raise(errc::unreadable_image, "'" + path.string() + "': unsupported channel count");
  if (img.data.size() != img.width * img.height * img.channels)
    raise(errc::unreadable_image, "'" + path.string() + "': truncated pixel data");

  GrayImage gray(img.width, img.height);
  if (img.channels == 1) {
    std::copy(img.data.begin(), img.data.end(), gray.pixels.begin());
  } else {
    for (std::size_t i = 0; i < gray.pixels.size(); ++i)
      gray.pixels[i] = luma(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
  }
  return gray;
}

GrayImage resize(const GrayImage& image, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0)
    raise(errc::shape_mismatch, "resize target must be at least 1x1");
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height)
    raise(errc::size_mismatch, "resize input image is malformed");
  if (target_h == image.height && target_w == image.width) return image;

  GrayImage out(target_w, target_h);
  const double scale_y =
      target_h > 1 ? static_cast<double>(image.height - 1) / static_cast<double>(target_h - 1)
                   : 0.0;
  const double scale_x =
      target_w > 1 ? static_cast<double>(image.width - 1) / static_cast<double>(target_w - 1)
                   : 0.0;
  for (std::size_t r = 0; r < target_h; ++r) {
    const double sy = static_cast<double>(r) * scale_y;
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t c = 0; c < target_w; ++c) {
      const double sx = static_cast<double>(c) * scale_x;
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double v = (1.0 - fy) * (1.0 - fx) * image.at(y0, x0) +
                       (1.0 - fy) * fx * image.at(y0, x1) +
                       fy * (1.0 - fx) * image.at(y1, x0) + fy * fx * image.at(y1, x1);
      out.at(r, c) = static_cast<std::uint8_t>(std::floor(v + 0.5));
    }
  }
  return out;
}

Tensor to_tensor(const GrayImage& image, std::size_t channels) {
  if (channels != 1 && channels != 3)
    raise(errc::shape_mismatch, "channels must be 1 or 3");
  Tensor out({channels, image.height, image.width});
  const std::size_t plane = image.pixels.size();
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = static_cast<double>(image.pixels[i]) / 255.0;
  for (std::size_t c = 1; c < channels; ++c)
    std::copy(out.data(), out.data() + plane, out.data() + c * plane);
  return out;
}

SplitResult stratified_split(const CorpusIndex& index, const SplitSpec& spec) {
  const double sum = spec.train_fraction + spec.val_fraction + spec.test_fraction;
  if (std::abs(sum - 1.0) > 1e-9)
    raise(errc::config_error, "split fractions must sum to 1");
  for (double f : {spec.train_fraction, spec.val_fraction, spec.test_fraction})
    if (f < 0.0 || f >= 1.0 + 1e-9)
      raise(errc::config_error, "split fractions must lie in [0,1]");
  const bool all_nonzero =
      spec.train_fraction > 0.0 && spec.val_fraction > 0.0 && spec.test_fraction > 0.0;

  SplitResult result;
  for (CorpusIndex* part : {&result.train, &result.val, &result.test}) {
    part->root = index.root;
    part->families = index.families;
    part->counts.assign(index.families.size(), 0);
  }

  // per-family sample indices, families processed in sorted (id) order
  std::vector<std::vector<std::size_t>> by_family(index.families.size());
  for (std::size_t i = 0; i < index.samples.size(); ++i)
    by_family[index.samples[i].family_id].push_back(i);

  SplitMix64 rng(spec.seed);
  for (std::size_t id = 0; id < by_family.size(); ++id) {
    std::vector<std::size_t>& members = by_family[id];
    const std::size_t n = members.size();
    if (all_nonzero && n < 3)
      raise(errc::family_too_small, "family '" + index.families[id] + "' has " +
                                        std::to_string(n) + " samples, need at least 3");
    rng.shuffle(members);

    std::size_t n_val = static_cast<std::size_t>(std::lround(spec.val_fraction * n));
    std::size_t n_test = static_cast<std::size_t>(std::lround(spec.test_fraction * n));
    if (n_val + n_test > n) {  // degenerate half-rounding; shrink test, then val
      n_test = std::min(n_test, n - std::min(n_val, n));
      n_val = std::min(n_val, n - n_test);
    }
    const std::size_t n_train = n - n_val - n_test;

    for (std::size_t i = 0; i < n; ++i) {
      CorpusIndex& dest =
          i < n_train ? result.train : (i < n_train + n_val ? result.val : result.test);
      dest.samples.push_back(index.samples[members[i]]);
      dest.counts[id] += 1;
    }
  }

  for (CorpusIndex* part : {&result.train, &result.val, &result.test})
    std::sort(part->samples.begin(), part->samples.end(),
              [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  return result;
}

std::vector<StatsRow> class_stats(const CorpusIndex& index) {
  std::vector<StatsRow> rows;
  rows.reserve(index.families.size() + 1);
  for (std::size_t id = 0; id < index.families.size(); ++id)
    rows.push_back({index.families[id], index.counts[id]});
  rows.push_back({"TOTAL", index.total()});
  return rows;
}

std::string class_stats_csv(const CorpusIndex& index) {
  std::ostringstream out;
  out << "family,count\n";
  for (const StatsRow& row : class_stats(index)) out << row.family << "," << row.count << "\n";
  return out.str();
}

void write_manifest(const CorpusIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(errc::io_failure, "cannot open '" + path.string() + "' for writing");
  for (const SampleRecord& sample : index.samples)
    out << sample.path << "\t" << sample.family << "\n";
  if (!out) raise(errc::io_failure, "failed writing '" + path.string() + "'");
}

CorpusIndex read_manifest(const std::filesystem::path& manifest,
                          const std::filesystem::path& root) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) raise(errc::io_failure, "cannot open '" + manifest.string() + "' for reading");

  std::vector<std::pair<std::string, std::string>> entries;  // (path, family)
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      raise(errc::config_error, manifest.string() + ":" + std::to_string(line_no) +
                                    ": expected '<path>\\t<family>'");
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (entries.empty()) raise(errc::empty_corpus, "manifest '" + manifest.string() + "' is empty");

  CorpusIndex index;
  index.root = root;
  for (const auto& [path, family] : entries) index.families.push_back(family);
  std::sort(index.families.begin(), index.families.end());
  index.families.erase(std::unique(index.families.begin(), index.families.end()),
                       index.families.end());
  index.counts.assign(index.families.size(), 0);
  for (const auto& [path, family] : entries) {
    const std::size_t id = static_cast<std::size_t>(
        std::lower_bound(index.families.begin(), index.families.end(), family) -
        index.families.begin());
    index.samples.push_back({path, family, id});
    index.counts[id] += 1;
  }
  std::sort(index.samples.begin(), index.samples.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  return index;
}

BatchIterator::BatchIterator(const CorpusIndex& index, BatchOptions options)
    : index_(&index), options_(options) {
  if (options_.batch_size < 1) raise(errc::config_error, "batch_size must be >= 1");
  order_.resize(index.samples.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (options_.shuffle) reshuffle(options_.shuffle_seed);
}

void BatchIterator::reshuffle(std::uint64_t seed) {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (options_.shuffle) {
    SplitMix64 rng(seed);
    rng.shuffle(order_);
  }
  position_ = 0;
}

void BatchIterator::reset() { position_ = 0; }

const GrayImage& BatchIterator::plane_for(const SampleRecord& sample) {
  if (options_.cache_decoded) {
    auto it = cache_.find(sample.path);
    if (it != cache_.end()) return it->second;
  }
  GrayImage plane = resize(load_gray(index_->root / sample.path), options_.target_height,
                           options_.target_width);
  if (!options_.cache_decoded) {
    static thread_local GrayImage scratch;
    scratch = std::move(plane);
    return scratch;
  }
  return cache_.emplace(sample.path, std::move(plane)).first->second;
}

std::optional<Batch> BatchIterator::next() {
  if (position_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(options_.batch_size, order_.size() - position_);
  Batch batch{Tensor({n, options_.channels, options_.target_height, options_.target_width}),
              std::vector<std::size_t>(n)};
  const std::size_t plane_elems = options_.target_height * options_.target_width;
  for (std::size_t i = 0; i < n; ++i) {
    const SampleRecord& sample = index_->samples[order_[position_ + i]];
    const GrayImage& plane = plane_for(sample);
    double* dst = batch.input.data() + i * options_.channels * plane_elems;
    for (std::size_t p = 0; p < plane_elems; ++p)
      dst[p] = static_cast<double>(plane.pixels[p]) / 255.0;
    for (std::size_t c = 1; c < options_.channels; ++c)
      std::copy(dst, dst + plane_elems, dst + c * plane_elems);
    batch.labels[i] = sample.family_id;
  }
  position_ += n;
  return batch;
}

}  // namespace malvis
