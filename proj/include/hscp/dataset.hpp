#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hscp/parallel.hpp"
#include "hscp/signal.hpp"

namespace hscp {

/// Parses "a:b" (step 1), "a:b:step", a single value, or "clean" (+inf).
/// Throws ValidationError on malformed input.
std::vector<double> parse_snr_range(std::string_view text);

/// Reads a raw complex64 little-endian file. Files under kMinRecordBytes are
/// rejected before decoding.
std::vector<std::complex<float>> read_iq_file(const std::filesystem::path& path);

struct LabelEntry {
  std::string file;
  std::int64_t label = 0;
  std::string split;  // "train", "test", or empty for the hashed default
};

/// `file,label[,split]` rows; a header row is skipped.
std::vector<LabelEntry> read_labels_csv(const std::filesystem::path& path);

struct PreprocessConfig {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::filesystem::path labels_csv;  // defaults to input_dir / "labels.csv"
  std::vector<double> snr_train = parse_snr_range("0:10");
  std::vector<double> snr_test = parse_snr_range("-5:20:5");
  double mixup_alpha = 0.5;
  double test_fraction = 0.2;
  StftParams stft{};
  std::size_t first_bin = 0;
  std::size_t bins = 102;
  std::uint64_t seed = 42;
  Parallelism par{};
};

struct PreprocessSummary {
  std::size_t records = 0;
  std::map<std::string, std::string> skipped;  // file -> reason
  std::map<std::string, std::map<double, std::size_t>> per_snr;  // split -> snr -> samples
  std::size_t mixup_samples = 0;
};

/// Normalizes, noise-injects and transforms every labeled record, then writes
/// <output>/train and <output>/test as activation-format sets holding
/// "spectrogram" [N, 1, bins, frames] and "label" [N, classes, 1, 1], plus
/// <output>/dataset.json describing every sample. Each training record gets
/// one SNR drawn from snr_train; each test record is emitted at every snr_test
/// value. With mixup_alpha > 0 one mixed sample per training sample is appended.
PreprocessSummary preprocess(const PreprocessConfig& config);

}  // namespace hscp
