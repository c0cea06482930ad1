#include "hscp/dataset.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "hscp/activations.hpp"
#include "hscp/error.hpp"
#include "hscp/log.hpp"
#include "hscp/rng.hpp"

namespace hscp {
namespace {

std::optional<double> to_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

struct Sample {
  std::string source;
  std::int64_t label = 0;
  double snr_db = 0.0;
  Spectrogram spec;
  std::optional<std::size_t> partner;  // mixup partner, index into the training samples
  double lambda = 1.0;
};

struct RecordResult {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::optional<std::string> skipped;
};

Sample make_sample(const IqRecord& clean, double snr, std::uint64_t noise_seed, const PreprocessConfig& cfg) {
  Sample s;
  s.source = clean.source_id;
  s.label = clean.label;
  s.snr_db = snr;
  s.spec = crop_bins(stft_spectrogram(inject_awgn(clean, snr, noise_seed), cfg.stft), cfg.first_bin, cfg.bins);
  return s;
}

RecordResult process_record(const LabelEntry& entry, const PreprocessConfig& cfg) {
  RecordResult result;
  IqRecord record;
  record.source_id = entry.file;
  record.label = entry.label;
  try {
    record.samples = read_iq_file(cfg.input_dir / entry.file);
    record = normalize_truncate(std::move(record));
  } catch (const ValidationError& e) {
    result.skipped = e.what();
    return result;
  }
  const std::uint64_t rseed = derive_seed(cfg.seed, entry.file);
  bool test = entry.split == "test";
  if (entry.split.empty()) test = unit_interval(derive_seed(rseed, "split")) < cfg.test_fraction;
  if (test) {
    for (std::size_t i = 0; i < cfg.snr_test.size(); ++i) {
      result.test.push_back(make_sample(record, cfg.snr_test[i], derive_seed(rseed, "noise:" + std::to_string(i)), cfg));
    }
  } else {
    std::uint64_t state = derive_seed(rseed, "snr");
    const std::size_t n = cfg.snr_train.size();
    const auto pick = std::min(n - 1, static_cast<std::size_t>(unit_interval(splitmix64(state)) * static_cast<double>(n)));
    result.train.push_back(make_sample(record, cfg.snr_train[pick], derive_seed(rseed, "noise"), cfg));
  }
  return result;
}

nlohmann::json snr_json(double snr) {
  if (std::isinf(snr)) return "clean";
  return snr;
}

std::string snr_key(double snr) { return std::isinf(snr) ? "clean" : nlohmann::json(snr).dump(); }

nlohmann::json write_split(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                           const std::filesystem::path& output_dir) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json j{{"source", s.source}, {"label", s.label}, {"snr_db", snr_json(s.snr_db)}};
    if (s.partner) j["mixup"] = {{"partner", *s.partner}, {"lambda", s.lambda}};
    list.push_back(std::move(j));
  }
  nlohmann::json split{{"count", samples.size()}, {"samples", std::move(list)}, {"manifest", nullptr}};
  if (samples.empty()) return split;

  const auto n = static_cast<std::int64_t>(samples.size());
  const auto frames = static_cast<std::int64_t>(samples.front().spec.data.rows);
  const auto bins = static_cast<std::int64_t>(samples.front().spec.data.cols);
  const auto classes = static_cast<std::int64_t>(kClassCount);
  Tensor image{{n, 1, bins, frames}, std::vector<float>(static_cast<std::size_t>(n * bins * frames))};
  Tensor labels{{n, classes, 1, 1}, std::vector<float>(static_cast<std::size_t>(n * classes))};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Matrix& d = samples[i].spec.data;
    float* dst = image.data.data() + i * static_cast<std::size_t>(bins * frames);
    for (std::size_t f = 0; f < d.cols; ++f) {
      for (std::size_t t = 0; t < d.rows; ++t) dst[f * d.rows + t] = static_cast<float>(d(t, f));
    }
    for (std::size_t c = 0; c < kClassCount; ++c) {
      labels.data[i * kClassCount + c] = static_cast<float>(samples[i].spec.label[c]);
    }
  }
  ActivationSet set(n);
  set.insert("spectrogram", std::move(image));
  set.insert("label", std::move(labels));
  write_activations(set, dir / "manifest.json");
  split["manifest"] = std::filesystem::relative(dir / "manifest.json", output_dir).generic_string();
  return split;
}

}  // namespace

std::vector<double> parse_snr_range(std::string_view text) {
  if (text == "clean" || text == "inf") return {std::numeric_limits<double>::infinity()};
  std::vector<std::string_view> parts;
  for (std::size_t start = 0;;) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  const std::string shown(text);
  if (parts.size() > 3) throw ValidationError("malformed SNR range '" + shown + "': expected a[:b[:step]]");
  std::vector<double> v;
  for (auto p : parts) {
    auto d = to_double(p);
    if (!d) throw ValidationError("malformed SNR range '" + shown + "': '" + std::string(p) + "' is not a number");
    v.push_back(*d);
  }
  if (v.size() == 1) return v;
  const double step = v.size() == 3 ? v[2] : 1.0;
  if (!(step > 0.0)) throw ValidationError("malformed SNR range '" + shown + "': step must be positive");
  if (v[1] < v[0]) throw ValidationError("malformed SNR range '" + shown + "': end precedes start");
  const double count = std::floor((v[1] - v[0]) / step + 1e-9) + 1.0;
  if (count > 10'000) throw ValidationError("SNR range '" + shown + "' has too many values");
  std::vector<double> out;
  for (int i = 0; i < static_cast<int>(count); ++i) out.push_back(v[0] + i * step);
  return out;
}

std::vector<std::complex<float>> read_iq_file(const std::filesystem::path& path) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot read IQ file " + path.string());
  if (bytes < kMinRecordBytes) {
    throw ValidationError("file " + path.filename().string() + " is " + std::to_string(bytes) +
                          " bytes, below the " + std::to_string(kMinRecordBytes) + "-byte minimum");
  }
  if (bytes % 8 != 0) {
    throw ValidationError("file " + path.filename().string() + " is not a whole number of complex64 samples");
  }
  std::vector<float> raw(bytes / sizeof(float));
  std::ifstream in(path, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes))) {
    throw IoError("failed reading " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : raw) {
      std::uint32_t b;
      std::memcpy(&b, &f, 4);
      b = __builtin_bswap32(b);
      std::memcpy(&f, &b, 4);
    }
  }
  std::vector<std::complex<float>> out(raw.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {raw[2 * i], raw[2 * i + 1]};
  return out;
}

std::vector<LabelEntry> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file " + path.string());
  std::vector<LabelEntry> entries;
  std::string line;
  for (std::size_t row = 1; std::getline(in, line); ++row) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (auto comma = line.find(','); ; comma = line.find(',', start)) {
      cols.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const auto where = path.filename().string() + " row " + std::to_string(row);
    if (cols.size() < 2 || cols.size() > 3) throw ValidationError(where + ": expected file,label[,split]");
    auto label = to_double(cols[1]);
    if (!label) {
      if (entries.empty() && row == 1) continue;  // header
      throw ValidationError(where + ": label '" + cols[1] + "' is not an integer");
    }
    if (*label != std::floor(*label) || *label < 0 || *label >= static_cast<double>(kClassCount)) {
      throw ValidationError(where + ": label must be an integer in [0, " + std::to_string(kClassCount) + ")");
    }
    LabelEntry e{cols[0], static_cast<std::int64_t>(*label), cols.size() == 3 ? cols[2] : ""};
    if (!e.split.empty() && e.split != "train" && e.split != "test") {
      throw ValidationError(where + ": split must be train or test");
    }
    if (e.file.empty()) throw ValidationError(where + ": empty file name");
    entries.push_back(std::move(e));
  }
  return entries;
}

PreprocessSummary preprocess(const PreprocessConfig& config) {
  PreprocessConfig cfg = config;
  if (cfg.labels_csv.empty()) cfg.labels_csv = cfg.input_dir / "labels.csv";
  if (cfg.snr_train.empty() || cfg.snr_test.empty()) throw ValidationError("SNR sweeps must be nonempty");
  if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction <= 1.0)) throw ValidationError("test fraction must lie in [0, 1]");
  if (!(cfg.mixup_alpha >= 0.0)) throw ValidationError("mixup alpha must be >= 0");
  if (!std::filesystem::is_directory(cfg.input_dir)) throw IoError("input directory " + cfg.input_dir.string() + " not found");
  const auto entries = read_labels_csv(cfg.labels_csv);

  std::vector<RecordResult> results(entries.size());
  parallel_for(entries.size(), cfg.par, [&](std::size_t i) { results[i] = process_record(entries[i], cfg); });

  PreprocessSummary summary;
  summary.records = entries.size();
  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (results[i].skipped) {
      summary.skipped[entries[i].file] = *results[i].skipped;
      log::info("skipping " + entries[i].file + ": " + *results[i].skipped);
      continue;
    }
    for (auto& s : results[i].train) train.push_back(std::move(s));
    for (auto& s : results[i].test) test.push_back(std::move(s));
  }
  for (const auto& s : train) ++summary.per_snr["train"][s.snr_db];
  for (const auto& s : test) ++summary.per_snr["test"][s.snr_db];

  if (cfg.mixup_alpha > 0.0 && !train.empty()) {
    const std::size_t base = train.size();
    std::vector<Sample> mixed(base);
    parallel_for(base, cfg.par, [&](std::size_t i) {
      std::uint64_t state = derive_seed(cfg.seed, "mixup:" + std::to_string(i));
      const auto j = std::min(base - 1, static_cast<std::size_t>(unit_interval(splitmix64(state)) * static_cast<double>(base)));
      const double lambda = draw_mixup_lambda(cfg.mixup_alpha, splitmix64(state));
      Sample& m = mixed[i];
      m.source = train[i].source;
      m.label = train[i].label;
      m.snr_db = train[i].snr_db;
      m.partner = j;
      m.lambda = lambda;
      m.spec = mix(train[i].spec, train[j].spec, lambda);
    });
    summary.mixup_samples = mixed.size();
    for (auto& m : mixed) train.push_back(std::move(m));
  }

  std::filesystem::create_directories(cfg.output_dir);
  nlohmann::json per_snr = nlohmann::json::object();
  for (const auto& [split, counts] : summary.per_snr) {
    for (const auto& [snr, n] : counts) per_snr[split][snr_key(snr)] = n;
  }
  nlohmann::json doc{
      {"version", 1},
      {"seed", cfg.seed},
      {"stft", {{"window", "hann"}, {"win_len", cfg.stft.win_len}, {"hop", cfg.stft.hop}, {"fft_len", cfg.stft.fft_len}}},
      {"bins", {{"first", cfg.first_bin}, {"count", cfg.bins}, {"fftshift", true}}},
      {"mixup_alpha", cfg.mixup_alpha},
      {"classes", kClassCount},
      {"per_snr", std::move(per_snr)},
      {"skipped", summary.skipped},
      {"splits",
       {{"train", write_split(train, cfg.output_dir / "train", cfg.output_dir)},
        {"test", write_split(test, cfg.output_dir / "test", cfg.output_dir)}}},
  };
  std::ofstream out(cfg.output_dir / "dataset.json");
  if (!out) throw IoError("cannot write " + (cfg.output_dir / "dataset.json").string());
  out << doc.dump(2) << '\n';
  return summary;
}

}  // namespace hscp
