#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "hscp/matrix.hpp"

namespace hscp {

inline constexpr std::size_t kRecordLength = 50'000;
inline constexpr std::uintmax_t kMinRecordBytes = 200 * 1024;
inline constexpr std::size_t kClassCount = 7;

struct IqRecord {
  std::vector<std::complex<float>> samples;
  std::int64_t label = 0;
  std::string source_id;
};

/// Mean |s|^2, accumulated in double.
double mean_power(const std::vector<std::complex<float>>& samples);

/// Keeps the first `length` samples and scales them to unit mean power. Throws
/// ValidationError for short or zero-power records.
IqRecord normalize_truncate(IqRecord raw, std::size_t length = kRecordLength);

/// Adds complex white Gaussian noise of total variance 10^(-snr_db/10) times
/// the record's power. snr_db = +inf returns the record unchanged.
IqRecord inject_awgn(const IqRecord& record, double snr_db, std::uint64_t seed);

/// 10 log10(P_clean / P_noise) with noise = noisy - clean.
double measured_snr_db(const IqRecord& clean, const IqRecord& noisy);

struct StftParams {
  std::size_t win_len = 256;
  std::size_t hop = 128;
  std::size_t fft_len = 256;
  friend bool operator==(const StftParams&, const StftParams&) = default;
};

inline constexpr double kLogFloor = 1e-12;

struct Spectrogram {
  Matrix data;                // frames x bins
  std::vector<double> label;  // soft label over kClassCount classes
  StftParams params;
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

inline std::size_t frame_count(std::size_t samples, const StftParams& p) {
  return samples < p.win_len ? 0 : (samples - p.win_len) / p.hop + 1;
}

/// log10(|X(t, f)|^2 + kLogFloor) of the Hann-windowed DFT of every frame.
Spectrogram stft_spectrogram(const IqRecord& record, const StftParams& params = {});

/// Bins [first, first + count) of the fftshifted spectrum, i.e. zero frequency at column fft_len / 2.
Spectrogram crop_bins(const Spectrogram& spec, std::size_t first = 0, std::size_t count = 102);

/// lambda ~ Beta(alpha, alpha) as G1 / (G1 + G2) with G ~ Gamma(alpha, 1);
/// alpha = 0 yields 1 (mixing disabled).
double draw_mixup_lambda(double alpha, std::uint64_t seed);

/// lambda * a + (1 - lambda) * b for data and labels.
Spectrogram mix(const Spectrogram& a, const Spectrogram& b, double lambda);
Spectrogram mixup(const Spectrogram& a, const Spectrogram& b, double alpha, std::uint64_t seed);

}  // namespace hscp
