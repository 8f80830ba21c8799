#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepguard/image.hpp"
#include "sleepguard/tensor.hpp"

namespace sleepguard {

inline constexpr int kOpen = 0;
inline constexpr int kClosed = 1;

std::string label_name(int label);
int parse_label(const std::string& name);

struct ImageRecord {
  std::string id;  // "open/<file>" or "closed/<file>"
  Tensor pixels;   // (H, W) in [0, 1]
  int label = kOpen;
};

struct Dataset {
  std::vector<ImageRecord> records;
  std::string split;  // "train", "val", "test", or empty when unsplit
  std::string provenance;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::array<std::size_t, 2> label_counts() const;
  std::vector<const Tensor*> inputs() const;
  std::vector<int> labels() const;

  /// Throws DataError unless ids are unique, labels binary, and every image
  /// has the same shape with pixels in [0, 1].
  void validate() const;
};

struct LoadOptions {
  std::size_t height = 100;
  std::size_t width = 100;
  double rescale = 1.0 / 255.0;
  bool skip_undecodable = false;
  int threads = 1;
};

/// Loads root/open/* and root/closed/*. Every image becomes grayscale,
/// bilinearly resized to the configured size and rescaled to [0, 1].
/// Records are sorted by id.
Dataset load_directory(const std::filesystem::path& root, const LoadOptions& options = {});

/// Writes each record as root/<id stem>.png (8-bit, so values are quantized).
void write_directory(const Dataset& data, const std::filesystem::path& root);

struct SplitFractions {
  double train = 3108.0 / 4846.0;
  double val = 776.0 / 4846.0;
  double test = 962.0 / 4846.0;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded, class-stratified partition. Each class is shuffled on its own
/// stream and cut by rounded fractions; every split keeps at least one
/// sample of each class or the call fails. Splits are sorted by id.
DatasetSplits split_dataset(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed);

/// CSV with header "id,split,label", one row per record.
void write_split_manifest(const DatasetSplits& splits, const std::filesystem::path& path);

/// Rebuilds splits from a manifest written by write_split_manifest.
DatasetSplits apply_split_manifest(const Dataset& data, const std::filesystem::path& path);

enum class SyntheticStyle { kEye, kFace };

std::string synthetic_style_name(SyntheticStyle style);
SyntheticStyle parse_synthetic_style(const std::string& name);

struct SyntheticConfig {
  SyntheticStyle style = SyntheticStyle::kEye;
  // Eye patches are drawn at source_size and upscaled; faces are drawn at
  // the output size directly.
  std::size_t source_size = 24;
  std::size_t height = 100;
  std::size_t width = 100;
  double noise = 0.06;  // std of additive pixel noise
  std::uint64_t seed = 0;
};

/// 2n records (n open eyes, n closed), deterministic in the seed.
Dataset generate_synthetic(const SyntheticConfig& config, std::size_t n_per_class);

/// Test accuracy of a logistic-regression probe on raw pixels trained on
/// `train`. Used to confirm the synthetic classes are not linearly separable.
double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::uint64_t seed,
                             std::size_t epochs = 20);

}  // namespace sleepguard
