#include "hscp/signal.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>

#include <fftw3.h>

#include "hscp/error.hpp"

namespace hscp {
namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Owns an FFTW plan and its buffers. FFTW's planner is not thread-safe,
// execution is.
class Dft {
 public:
  explicit Dft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_complex(n);
    out_ = fftw_alloc_complex(n);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  ~Dft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  Dft(const Dft&) = delete;
  Dft& operator=(const Dft&) = delete;

  fftw_complex* in() { return in_; }
  const fftw_complex* out() const { return out_; }
  void run() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

double mean_power(const std::vector<std::complex<float>>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += std::norm(std::complex<double>(s));
  return sum / static_cast<double>(samples.size());
}

IqRecord normalize_truncate(IqRecord raw, std::size_t length) {
  if (raw.samples.size() < length) {
    throw ValidationError("record '" + raw.source_id + "' has " + std::to_string(raw.samples.size()) +
                          " samples, fewer than " + std::to_string(length));
  }
  raw.samples.resize(length);
  for (const auto& s : raw.samples) {
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
      throw ValidationError("record '" + raw.source_id + "' contains non-finite samples");
    }
  }
  const double power = mean_power(raw.samples);
  if (!(power > 0.0)) throw ValidationError("record '" + raw.source_id + "' has zero power");
  const double scale = 1.0 / std::sqrt(power);
  for (auto& s : raw.samples) s = std::complex<float>(std::complex<double>(s) * scale);
  return raw;
}

IqRecord inject_awgn(const IqRecord& record, double snr_db, std::uint64_t seed) {
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw ValidationError("SNR must be finite or +inf, got " + std::to_string(snr_db));
  }
  if (snr_db == std::numeric_limits<double>::infinity()) return record;
  const double variance = std::pow(10.0, -snr_db / 10.0) * mean_power(record.samples);
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance / 2.0));
  IqRecord out = record;
  for (auto& s : out.samples) {
    const double re = noise(engine);
    const double im = noise(engine);
    s = std::complex<float>(static_cast<float>(s.real() + re), static_cast<float>(s.imag() + im));
  }
  return out;
}

double measured_snr_db(const IqRecord& clean, const IqRecord& noisy) {
  if (clean.samples.size() != noisy.samples.size()) throw ValidationError("records differ in length");
  double noise = 0.0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    noise += std::norm(std::complex<double>(noisy.samples[i]) - std::complex<double>(clean.samples[i]));
  }
  noise /= static_cast<double>(clean.samples.size());
  return 10.0 * std::log10(mean_power(clean.samples) / noise);
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t m = 0; m < n; ++m) {
    w[m] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n));
  }
  return w;
}

Spectrogram stft_spectrogram(const IqRecord& record, const StftParams& params) {
  if (params.win_len == 0 || params.hop == 0 || params.fft_len < params.win_len) {
    throw ValidationError("STFT needs win_len > 0, hop > 0 and fft_len >= win_len");
  }
  const std::size_t frames = frame_count(record.samples.size(), params);
  if (frames == 0) {
    throw ValidationError("record '" + record.source_id + "' is shorter than one " +
                          std::to_string(params.win_len) + "-sample window");
  }
  const auto window = hann_window(params.win_len);
  Spectrogram spec;
  spec.params = params;
  spec.data = Matrix(frames, params.fft_len);
  spec.label.assign(kClassCount, 0.0);
  if (record.label >= 0 && record.label < static_cast<std::int64_t>(kClassCount)) {
    spec.label[static_cast<std::size_t>(record.label)] = 1.0;
  }
  Dft dft(params.fft_len);
  for (std::size_t t = 0; t < frames; ++t) {
    fftw_complex* in = dft.in();
    for (std::size_t m = 0; m < params.fft_len; ++m) {
      if (m < params.win_len) {
        const auto& s = record.samples[t * params.hop + m];
        in[m][0] = window[m] * s.real();
        in[m][1] = window[m] * s.imag();
      } else {
        in[m][0] = in[m][1] = 0.0;
      }
    }
    dft.run();
    const fftw_complex* out = dft.out();
    for (std::size_t f = 0; f < params.fft_len; ++f) {
      spec.data(t, f) = std::log10(out[f][0] * out[f][0] + out[f][1] * out[f][1] + kLogFloor);
    }
  }
  return spec;
}

Spectrogram crop_bins(const Spectrogram& spec, std::size_t first, std::size_t count) {
  const std::size_t bins = spec.data.cols;
  if (count == 0 || first + count > bins) {
    throw ValidationError("bin range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                          ") exceeds " + std::to_string(bins) + " bins");
  }
  Spectrogram out;
  out.label = spec.label;
  out.params = spec.params;
  out.data = Matrix(spec.data.rows, count);
  for (std::size_t t = 0; t < spec.data.rows; ++t) {
    for (std::size_t i = 0; i < count; ++i) out.data(t, i) = spec.data(t, (first + i + bins / 2) % bins);
  }
  return out;
}

double draw_mixup_lambda(double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("mixup alpha must be >= 0");
  if (alpha == 0.0) return 1.0;
  std::mt19937_64 engine(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double g1 = gamma(engine);
    const double g2 = gamma(engine);
    if (g1 + g2 > 0.0) return g1 / (g1 + g2);
  }
}

Spectrogram mix(const Spectrogram& a, const Spectrogram& b, double lambda) {
  if (a.data.rows != b.data.rows || a.data.cols != b.data.cols || a.label.size() != b.label.size()) {
    throw ValidationError("mixup inputs differ in shape");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixup lambda must lie in [0, 1]");
  Spectrogram out = a;
  if (lambda == 1.0) return out;
  for (std::size_t i = 0; i < out.data.data.size(); ++i) {
    out.data.data[i] = lambda * a.data.data[i] + (1.0 - lambda) * b.data.data[i];
  }
  for (std::size_t i = 0; i < out.label.size(); ++i) out.label[i] = lambda * a.label[i] + (1.0 - lambda) * b.label[i];
  return out;
}

Spectrogram mixup(const Spectrogram& a, const Spectrogram& b, double alpha, std::uint64_t seed) {
  return mix(a, b, draw_mixup_lambda(alpha, seed));
}

}  // namespace hscp
