#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "envtrack/rng.hpp"
#include "envtrack/sigproc.hpp"
#include "envtrack/tensor.hpp"

namespace envtrack {

// A preprocessed recording: synchronized EEG and stimulus envelope at 64 Hz.
// Samples are stored as 32-bit floats, matching the on-disk container
// bit-for-bit so write(read(x)) and read(write(x)) are exact.
struct Recording {
  std::string subject_id;
  std::string recording_id;
  std::uint32_t sample_rate = 64;
  std::uint32_t n_channels = 0;
  std::vector<float> eeg;       // channel-major, n_channels * n_samples
  std::vector<float> envelope;  // n_samples

  std::int64_t n_samples() const { return static_cast<std::int64_t>(envelope.size()); }

  void validate() const {
    if (eeg.size() != static_cast<std::size_t>(n_channels) * envelope.size()) {
      throw std::invalid_argument("Recording: eeg size " + std::to_string(eeg.size()) +
                                  " does not equal channels (" + std::to_string(n_channels) +
                                  ") x samples (" + std::to_string(envelope.size()) + ")");
    }
  }
};

// ---------------------------------------------------------------------------
// Binary containers
// ---------------------------------------------------------------------------
// Recording container ("NMM1"): magic, u32 {version=1, n_channels, n_samples,
// sample_rate}, u16-length-prefixed subject and recording ids, EEG as 32-bit
// little-endian floats channel-major, then the envelope floats.
// Weights container ("NMW1"): magic, u32 tensor count, per tensor
// {u16 name length, name, u8 ndim, u32 dims..., f32 data}.
// All integers little-endian; this code assumes a little-endian host.

namespace detail {

class ByteReader {
 public:
  ByteReader(std::string path) : path_(std::move(path)), in_(path_, std::ios::binary) {
    if (!in_) throw std::runtime_error(path_ + ": cannot open for reading");
  }

  void read_raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error(path_ + ": truncated at offset " + std::to_string(offset_) +
                               " (wanted " + std::to_string(n) + " bytes)");
    }
    offset_ += n;
  }

  template <typename T>
  T read() {
    T v;
    read_raw(&v, sizeof(T));
    return v;
  }

  std::string read_string(std::size_t n) {
    std::string s(n, '\0');
    if (n) read_raw(s.data(), n);
    return s;
  }

  void expect_magic(const char* magic) {
    char buf[4];
    read_raw(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0) {
      throw std::runtime_error(path_ + ": bad magic at offset 0, expected \"" +
                               std::string(magic) + "\"");
    }
  }

  std::uint64_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

class ByteWriter {
 public:
  ByteWriter(std::string path) : path_(std::move(path)), out_(path_, std::ios::binary) {
    if (!out_) throw std::runtime_error(path_ + ": cannot open for writing");
  }

  void write_raw(const void* src, std::size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }

  template <typename T>
  void write(T v) {
    write_raw(&v, sizeof(T));
  }

  void write_string16(const std::string& s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument(path_ + ": id longer than 65535 bytes");
    write<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    write_raw(s.data(), s.size());
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error(path_ + ": write failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace detail

inline void write_recording(const Recording& rec, const std::string& path) {
  rec.validate();
  detail::ByteWriter w(path);
  w.write_raw("NMM1", 4);
  w.write<std::uint32_t>(1);  // version
  w.write<std::uint32_t>(rec.n_channels);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(rec.envelope.size()));
  w.write<std::uint32_t>(rec.sample_rate);
  w.write_string16(rec.subject_id);
  w.write_string16(rec.recording_id);
  if (!rec.eeg.empty()) w.write_raw(rec.eeg.data(), rec.eeg.size() * sizeof(float));
  if (!rec.envelope.empty()) w.write_raw(rec.envelope.data(), rec.envelope.size() * sizeof(float));
  w.close();
}

inline Recording read_recording(const std::string& path) {
  detail::ByteReader r(path);
  r.expect_magic("NMM1");
  const auto version = r.read<std::uint32_t>();
  if (version != 1) {
    throw std::runtime_error(path + ": unsupported container version " + std::to_string(version));
  }
  Recording rec;
  rec.n_channels = r.read<std::uint32_t>();
  const auto n_samples = r.read<std::uint32_t>();
  rec.sample_rate = r.read<std::uint32_t>();
  const auto sub_len = r.read<std::uint16_t>();
  rec.subject_id = r.read_string(sub_len);
  const auto rid_len = r.read<std::uint16_t>();
  rec.recording_id = r.read_string(rid_len);
  rec.eeg.resize(static_cast<std::size_t>(rec.n_channels) * n_samples);
  if (!rec.eeg.empty()) r.read_raw(rec.eeg.data(), rec.eeg.size() * sizeof(float));
  rec.envelope.resize(n_samples);
  if (!rec.envelope.empty()) r.read_raw(rec.envelope.data(), rec.envelope.size() * sizeof(float));
  rec.validate();
  return rec;
}

inline void write_weights(const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                          const std::string& path) {
  detail::ByteWriter w(path);
  w.write_raw("NMW1", 4);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.write_string16(name);
    w.write<std::uint8_t>(static_cast<std::uint8_t>(t->ndim()));
    for (int d : t->shape()) w.write<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t->data()) w.write<float>(static_cast<float>(v));
  }
  w.close();
}

inline void write_weights(const std::vector<std::pair<std::string, Tensor*>>& tensors,
                          const std::string& path) {
  std::vector<std::pair<std::string, const Tensor*>> view;
  view.reserve(tensors.size());
  for (const auto& [name, t] : tensors) view.emplace_back(name, t);
  write_weights(view, path);
}

inline std::vector<std::pair<std::string, Tensor>> read_weights(const std::string& path) {
  detail::ByteReader r(path);
  r.expect_magic("NMW1");
  const auto count = r.read<std::uint32_t>();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.read<std::uint16_t>();
    std::string name = r.read_string(name_len);
    const auto ndim = r.read<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.read<std::uint32_t>());
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<double>(r.read<float>());
    out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data), true));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation and mismatch sampling
// ---------------------------------------------------------------------------

inline int hop_from_overlap(int window, double overlap) {
  if (!(overlap >= 0.0) || overlap >= 1.0) {
    throw std::invalid_argument("hop_from_overlap: overlap must be in [0, 1)");
  }
  const int hop = static_cast<int>(std::lround(window * (1.0 - overlap)));
  if (hop < 1) {
    throw std::invalid_argument("hop_from_overlap: window " + std::to_string(window) +
                                " with overlap " + std::to_string(overlap) +
                                " rounds to a zero hop");
  }
  return hop;
}

// Window start positions inside [lo, hi): lo, lo+hop, ... while the whole
// window fits. A range shorter than the window yields no starts.
inline std::vector<std::int64_t> segment_starts(std::int64_t lo, std::int64_t hi, int window,
                                                int hop) {
  if (window < 1 || hop < 1) {
    throw std::invalid_argument("segment_starts: window and hop must be >= 1");
  }
  std::vector<std::int64_t> starts;
  for (std::int64_t s = lo; s + window <= hi; s += hop) starts.push_back(s);
  return starts;
}

// Mismatched envelope start for a given EEG window: either one second after
// the window ends or one second before it starts, uniform when both fit in
// the recording. The rng is consumed only when there is an actual choice, so
// skipped and forced cases do not shift the stream.
inline std::optional<std::int64_t> sample_mismatch(std::int64_t n_samples, std::int64_t eeg_start,
                                                   int window, Rng& rng, int gap_samples = 64) {
  const std::int64_t after = eeg_start + window + gap_samples;
  const std::int64_t before = eeg_start - gap_samples - window;
  const bool after_ok = after + window <= n_samples;
  const bool before_ok = before >= 0;
  if (after_ok && before_ok) return rng.coin() ? after : before;
  if (after_ok) return after;
  if (before_ok) return before;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct SegmentPair {
  int rec;                 // index into Dataset::recordings
  std::int64_t eeg_start;
  std::int64_t env_start;  // == eeg_start iff matched
  int label;               // 1 matched, 0 mismatched
};

struct DatasetConfig {
  double window_s = 10.0;
  double overlap = 0.9;
  int gap_samples = 64;
};

struct Dataset {
  int window = 0;  // samples
  std::vector<Recording> recordings;
  std::vector<SegmentPair> train, validation, test;

  const std::vector<SegmentPair>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val" || name == "validation") return validation;
    if (name == "test") return test;
    throw std::invalid_argument("Dataset: unknown split \"" + name + "\"");
  }
};

// Cuts windows per split range (never straddling a boundary) and pairs every
// position with one matched and, bounds permitting, one mismatched envelope.
// Negatives may take their envelope from anywhere inside the same recording;
// leakage is defined over EEG indices only. Each recording derives its own
// rng stream (seed + index), keeping assembly order-independent across
// recordings.
inline Dataset build_dataset(std::vector<Recording> recordings, const DatasetConfig& cfg,
                             std::uint64_t seed) {
  Dataset ds;
  if (recordings.empty()) throw std::invalid_argument("build_dataset: no recordings");
  for (const Recording& r : recordings) {
    r.validate();
    if (r.sample_rate != recordings.front().sample_rate) {
      throw std::invalid_argument("build_dataset: mixed sample rates");
    }
  }
  const double rate = recordings.front().sample_rate;
  ds.window = static_cast<int>(std::lround(cfg.window_s * rate));
  const int hop = hop_from_overlap(ds.window, cfg.overlap);

  ds.recordings = std::move(recordings);
  for (std::size_t ri = 0; ri < ds.recordings.size(); ++ri) {
    const Recording& rec = ds.recordings[ri];
    const std::int64_t n = rec.n_samples();
    if (n < ds.window) continue;  // too short: contributes nothing
    const SplitSpec split = split_recording(n);
    Rng rng(seed + ri);

    auto emit = [&](std::vector<SegmentPair>& dst, std::int64_t lo, std::int64_t hi) {
      for (std::int64_t s : segment_starts(lo, hi, ds.window, hop)) {
        dst.push_back({static_cast<int>(ri), s, s, 1});
        if (auto m = sample_mismatch(n, s, ds.window, rng, cfg.gap_samples)) {
          dst.push_back({static_cast<int>(ri), s, *m, 0});
        }
      }
    };
    for (const auto& [lo, hi] : split.train) emit(ds.train, lo, hi);
    emit(ds.validation, split.validation.first, split.validation.second);
    emit(ds.test, split.test.first, split.test.second);
  }
  return ds;
}

// Tensor views of one segment; data converted from the stored 32-bit floats.
inline Tensor eeg_window_tensor(const Recording& rec, std::int64_t start, int window) {
  const int C = static_cast<int>(rec.n_channels);
  std::vector<double> data(static_cast<std::size_t>(C) * window);
  const std::int64_t n = rec.n_samples();
  if (start < 0 || start + window > n) {
    throw std::invalid_argument("eeg_window_tensor: window [" + std::to_string(start) + ", " +
                                std::to_string(start + window) + ") outside recording of " +
                                std::to_string(n) + " samples");
  }
  for (int c = 0; c < C; ++c) {
    const float* src = rec.eeg.data() + static_cast<std::size_t>(c) * n + start;
    double* dst = data.data() + static_cast<std::size_t>(c) * window;
    for (int t = 0; t < window; ++t) dst[t] = static_cast<double>(src[t]);
  }
  return Tensor::from_data({C, window}, std::move(data));
}

inline Tensor env_window_tensor(const Recording& rec, std::int64_t start, int window) {
  const std::int64_t n = rec.n_samples();
  if (start < 0 || start + window > n) {
    throw std::invalid_argument("env_window_tensor: window [" + std::to_string(start) + ", " +
                                std::to_string(start + window) + ") outside recording of " +
                                std::to_string(n) + " samples");
  }
  std::vector<double> data(static_cast<std::size_t>(window));
  for (int t = 0; t < window; ++t) {
    data[static_cast<std::size_t>(t)] = static_cast<double>(rec.envelope[start + t]);
  }
  return Tensor::from_data({1, window}, std::move(data));
}

// Per-channel and envelope standardization, one recording at a time. Math in
// doubles, results stored back as f32. Idempotent up to float rounding, so
// re-normalizing an already-normalized container is harmless.
inline void zscore_recording(Recording& rec) {
  rec.validate();
  const std::int64_t n = rec.n_samples();
  if (n == 0) return;
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (std::uint32_t c = 0; c < rec.n_channels; ++c) {
    float* ch = rec.eeg.data() + static_cast<std::size_t>(c) * n;
    for (std::int64_t t = 0; t < n; ++t) buf[static_cast<std::size_t>(t)] = ch[t];
    const std::vector<double> z = zscore(buf);
    for (std::int64_t t = 0; t < n; ++t) ch[t] = static_cast<float>(z[static_cast<std::size_t>(t)]);
  }
  for (std::int64_t t = 0; t < n; ++t) buf[static_cast<std::size_t>(t)] = rec.envelope[static_cast<std::size_t>(t)];
  const std::vector<double> z = zscore(buf);
  for (std::int64_t t = 0; t < n; ++t) rec.envelope[static_cast<std::size_t>(t)] = static_cast<float>(z[static_cast<std::size_t>(t)]);
}

}  // namespace envtrack
