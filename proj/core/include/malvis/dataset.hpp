#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "malvis/image.hpp"
#include "malvis/tensor.hpp"

namespace malvis {

// One labeled image. Paths are stored relative to the corpus root so that
// split manifests stay shareable.
struct SampleRecord {
  std::string path;       // relative to CorpusIndex::root, '/' separators
  std::string family;
  std::size_t family_id;  // index into CorpusIndex::families
};

// Labeled catalog of a directory-per-family image corpus. families is sorted
// lexicographically and defines the corpus-wide family<->id mapping; samples
// are sorted lexicographically by path.
struct CorpusIndex {
  std::filesystem::path root;
  std::vector<std::string> families;
  std::vector<SampleRecord> samples;
  std::vector<std::size_t> counts;  // per family, same order as families

  std::size_t total() const { return samples.size(); }
};

// Walks <root>/<FamilyName>/<file>. Family names come verbatim from the
// directory names; files are indexed without decoding.
// Throws errc::empty_corpus when no family directory holds a file.
CorpusIndex scan_corpus(const std::filesystem::path& root);

// Raster image decoded by a pluggable decoder: interleaved 8-bit samples,
// 1 or 3 channels.
struct DecodedImage {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> data;
};

// Decoders return nullopt for formats they do not recognize; registered
// decoders are consulted after the built-in PGM/PPM readers, in registration
// order.
using ImageDecoder = std::function<std::optional<DecodedImage>(const std::filesystem::path&)>;
void register_image_decoder(ImageDecoder decoder);

// Decodes PGM (P5) natively and PPM (P6) through the 3-channel path, then
// falls back to registered decoders. Multi-channel inputs collapse to one
// channel via round((r+g+b)/3), round half up.
// Throws errc::unreadable_image with the offending path.
GrayImage load_gray(const std::filesystem::path& path);

// Bilinear resize with corner-aligned sampling:
//   src = t * (S-1)/(T-1) for T > 1, else 0
// and intensities rounded half up. Identity when the size is unchanged.
GrayImage resize(const GrayImage& image, std::size_t target_h, std::size_t target_w);

// (channels,H,W) tensor scaled to [0,1] by /255; channels=3 replicates the
// gray plane.
Tensor to_tensor(const GrayImage& image, std::size_t channels);

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = 1;
};

struct SplitResult {
  CorpusIndex train, val, test;
};

// Stratified per family: with n samples, val and test receive
// lround(fraction*n) each and train the remainder. Sample order inside each
// family is a Fisher-Yates permutation from one SplitMix64(seed) stream,
// families processed in sorted order; the first train-many permuted samples
// go to train, then val, then test. Every split keeps the parent's full
// family list, so labels stay corpus-wide consistent.
// Throws errc::family_too_small when all fractions are nonzero and a family
// has fewer than 3 samples; errc::config_error for bad fractions.
SplitResult stratified_split(const CorpusIndex& index, const SplitSpec& spec);

struct StatsRow {
  std::string family;
  std::size_t count;
};

// Per-family counts sorted by family name, with a final TOTAL row.
std::vector<StatsRow> class_stats(const CorpusIndex& index);

// CSV form: header "family,count", one row per family, final "TOTAL,<n>".
std::string class_stats_csv(const CorpusIndex& index);

// Split manifest: one "<relative path>\t<family>" line per sample, UTF-8.
void write_manifest(const CorpusIndex& index, const std::filesystem::path& path);
CorpusIndex read_manifest(const std::filesystem::path& manifest,
                          const std::filesystem::path& root);

struct Batch {
  Tensor input;  // (N,channels,H,W)
  std::vector<std::size_t> labels;
};

struct BatchOptions {
  std::size_t batch_size = 64;
  std::uint64_t shuffle_seed = 0;
  bool shuffle = true;           // identity order when false
  std::size_t target_height = 64;
  std::size_t target_width = 64;
  std::size_t channels = 1;
  bool cache_decoded = true;     // keep resized planes across epochs
};

// One epoch visits every sample exactly once in a seeded permutation; the
// final short batch is emitted as-is. Decoding failures propagate as
// errc::unreadable_image with the sample path.
class BatchIterator {
 public:
  BatchIterator(const CorpusIndex& index, BatchOptions options);

  void reshuffle(std::uint64_t seed);  // new permutation, position 0
  void reset();                        // same permutation, position 0
  std::optional<Batch> next();
  std::size_t size() const { return order_.size(); }

 private:
  const GrayImage& plane_for(const SampleRecord& sample);

  const CorpusIndex* index_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  std::unordered_map<std::string, GrayImage> cache_;
};

}  // namespace malvis
