#pragma once

// Preprocessing pipeline for real recordings: stimulus audio to a 64 Hz
// envelope, raw multi-rate EEG down to the same clock, both band-limited to
// 0.5-32 Hz and normalized per recording. Synthetic data skips all of this
// (it is generated at the target rate directly).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/dataio.hpp"
#include "envtrack/sigproc.hpp"

namespace envtrack {

struct PrepConfig {
  double bandpass_lo_hz = 0.5;
  double bandpass_hi_hz = 32.0;
  std::uint32_t target_rate_hz = 64;
  EnvelopeConfig envelope;

  void validate() const {
    if (target_rate_hz == 0) throw std::invalid_argument("PrepConfig: target rate must be > 0");
    if (!(bandpass_lo_hz > 0.0) || !(bandpass_hi_hz > bandpass_lo_hz)) {
      throw std::invalid_argument("PrepConfig: need 0 < lo < hi for the bandpass");
    }
    if (2.0 * bandpass_hi_hz > static_cast<double>(target_rate_hz)) {
      throw std::invalid_argument(
          "PrepConfig: band edge " + std::to_string(bandpass_hi_hz) +
          " Hz exceeds the target Nyquist, decimation would alias");
    }
  }
};

namespace detail {

inline int decimation_factor(double rate_hz, std::uint32_t target, const char* who) {
  const auto rate = static_cast<std::int64_t>(rate_hz);
  if (static_cast<double>(rate) != rate_hz || rate <= 0 ||
      rate % static_cast<std::int64_t>(target) != 0) {
    throw std::invalid_argument(std::string(who) + ": rate " + std::to_string(rate_hz) +
                                " Hz is not an integer multiple of " + std::to_string(target) +
                                " Hz");
  }
  return static_cast<int>(rate / static_cast<std::int64_t>(target));
}

}  // namespace detail

// Audio to a normalized envelope at the target rate. The 0.5-32 Hz bandpass
// runs at the audio rate and doubles as the anti-alias stage.
inline std::vector<double> prep_stimulus(const Waveform& audio, const PrepConfig& cfg = {}) {
  cfg.validate();
  const int factor = detail::decimation_factor(audio.sample_rate_hz, cfg.target_rate_hz,
                                               "prep_stimulus: audio");
  Waveform env = extract_envelope(audio, cfg.envelope);
  env = bandpass_zero_phase(env, cfg.bandpass_lo_hz, cfg.bandpass_hi_hz);
  env = decimate(env, factor);
  return zscore(env.samples);
}

// Per-recording mean/variance normalization of every EEG channel and the
// envelope. Containers store raw values; consumers normalize at load time.
inline void normalize_recording(Recording& rec) {
  rec.validate();
  const std::size_t n = rec.envelope.size();
  if (n == 0) return;
  std::vector<double> buf(n);
  auto apply = [&](float* dst) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = dst[i];
    const std::vector<double> z = zscore(buf);
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(z[i]);
  };
  for (std::uint32_t c = 0; c < rec.n_channels; ++c) apply(rec.eeg.data() + c * n);
  apply(rec.envelope.data());
}

// Raw EEG container (any integer multiple of the target rate) plus its
// stimulus audio to a synchronized 64 Hz Recording. Both sides are cut to
// the shorter stream before normalization so the stored channels are exactly
// zero-mean over the samples that survive.
inline Recording prep_recording(const Recording& raw, const Waveform& audio,
                                const PrepConfig& cfg = {}) {
  cfg.validate();
  raw.validate();
  if (raw.n_channels == 0 || raw.envelope.empty()) {
    throw std::invalid_argument("prep_recording: empty raw recording");
  }
  const double eeg_rate = static_cast<double>(raw.sample_rate);
  if (!(eeg_rate > 2.0 * cfg.bandpass_hi_hz)) {
    throw std::invalid_argument("prep_recording: EEG rate " + std::to_string(raw.sample_rate) +
                                " Hz leaves no room for the " +
                                std::to_string(cfg.bandpass_hi_hz) + " Hz band edge");
  }
  const int factor =
      detail::decimation_factor(eeg_rate, cfg.target_rate_hz, "prep_recording: EEG");

  const std::size_t n_raw = raw.envelope.size();
  std::vector<std::vector<double>> channels(raw.n_channels);
  for (std::uint32_t c = 0; c < raw.n_channels; ++c) {
    Waveform ch;
    ch.sample_rate_hz = eeg_rate;
    ch.samples.assign(raw.eeg.begin() + static_cast<std::ptrdiff_t>(c * n_raw),
                      raw.eeg.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_raw));
    ch = bandpass_zero_phase(ch, cfg.bandpass_lo_hz, cfg.bandpass_hi_hz);
    ch = decimate(ch, factor);
    channels[c] = std::move(ch.samples);
  }
  std::vector<double> env = prep_stimulus(audio, cfg);

  std::size_t n = std::min(env.size(), channels.front().size());
  if (n == 0) {
    throw std::invalid_argument("prep_recording: no overlap between EEG and audio streams");
  }
  env.resize(n);

  Recording out;
  out.subject_id = raw.subject_id;
  out.recording_id = raw.recording_id;
  out.sample_rate = cfg.target_rate_hz;
  out.n_channels = raw.n_channels;
  out.eeg.reserve(static_cast<std::size_t>(raw.n_channels) * n);
  for (std::uint32_t c = 0; c < raw.n_channels; ++c) {
    channels[c].resize(n);
    const std::vector<double> z = zscore(channels[c]);
    for (double v : z) out.eeg.push_back(static_cast<float>(v));
  }
  const std::vector<double> ez = zscore(env);
  out.envelope.reserve(n);
  for (double v : ez) out.envelope.push_back(static_cast<float>(v));
  out.validate();
  return out;
}

}  // namespace envtrack
