#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/dataio.hpp"
#include "envtrack/fft.hpp"
#include "envtrack/rng.hpp"
#include "envtrack/sigproc.hpp"

namespace envtrack {

// Forward-model simulator: a stimulus envelope driving per-channel FIR
// responses plus pink background noise. Everything is derived from explicit
// seeds so a generated subject set is reproducible bit for bit.

// Splitmix-style hash so derived streams (envelope, response draws, one per
// noise channel) never overlap even for adjacent base seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + salt;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

enum class SynthMode { kLinear, kNonlinear };

inline SynthMode parse_synth_mode(const std::string& s) {
  if (s == "linear") return SynthMode::kLinear;
  if (s == "nonlinear") return SynthMode::kNonlinear;
  throw std::invalid_argument("mode must be 'linear' or 'nonlinear', got '" + s + "'");
}

struct SubjectProfile {
  std::string subject_id;
  double delay_ms = 0.0;       // subject-level response delay, uniform [80, 200]
  int n_channels = 64;
  int n_taps = 32;             // 500 ms at 64 Hz
  std::vector<double> kernels; // n_channels x n_taps, each row unit L2 norm
  bool nonlinear = false;
  double drift_amp_ms = 30.0;
  double drift_period_s = 60.0;
  double drift_phase = 0.0;
  std::uint64_t seed = 0;

  const double* kernel(int c) const { return kernels.data() + static_cast<std::size_t>(c) * n_taps; }
};

struct SynthConfig {
  int n_subjects = 1;
  double minutes = 10.0;
  double snr_db = std::numeric_limits<double>::infinity();
  SynthMode mode = SynthMode::kLinear;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_subjects < 1) throw std::invalid_argument("n_subjects must be >= 1");
    if (!(minutes > 0.0)) throw std::invalid_argument("minutes must be > 0");
  }
};

// 1/f-amplitude Gaussian noise, exactly unit variance. White noise is shaped
// in the frequency domain at the next power of two, then truncated.
inline std::vector<double> pink_noise(std::int64_t n, std::uint64_t seed) {
  if (n < 64) {
    throw std::invalid_argument("pink_noise: need at least 64 samples, got " + std::to_string(n));
  }
  const std::size_t m = next_pow2(static_cast<std::size_t>(n));
  Rng rng(seed);
  std::vector<std::complex<double>> spec(m);
  for (auto& v : spec) v = std::complex<double>(rng.normal(), 0.0);
  fft_radix2(spec, false);
  spec[0] = 0.0;  // no DC; the mean is removed below anyway
  for (std::size_t k = 1; k <= m / 2; ++k) {
    const double w = 1.0 / std::sqrt(static_cast<double>(k));
    spec[k] *= w;
    if (k != m - k) spec[m - k] *= w;
  }
  fft_radix2(spec, true);

  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = spec[static_cast<std::size_t>(i)].real();
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : out) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_sd = 1.0 / std::sqrt(var);
  for (auto& v : out) v = (v - mean) * inv_sd;
  return out;
}

// Speech-like stimulus stand-in: band-limited (0.5-10 Hz) Gaussian noise,
// half-wave rectified, z-scored, shifted so the minimum sits at zero.
inline Waveform synth_envelope(double duration_s, std::uint64_t seed) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("synth_envelope: duration must be > 0");
  const std::int64_t n = static_cast<std::int64_t>(std::llround(duration_s * 64.0));
  if (n <= 0) throw std::invalid_argument("synth_envelope: duration too short");

  Rng rng(seed);
  Waveform w;
  w.sample_rate_hz = 64.0;
  w.samples.resize(static_cast<std::size_t>(n));
  for (auto& v : w.samples) v = rng.normal();
  w = bandpass_zero_phase(w, 0.5, 10.0);
  for (auto& v : w.samples) v = std::max(v, 0.0);
  w.samples = zscore(w.samples);
  double lo = w.samples[0];
  for (double v : w.samples) lo = std::min(lo, v);
  for (auto& v : w.samples) v -= lo;
  return w;
}

namespace detail {

// Gamma bump normalized to peak value 1 at t = tau.
inline double gamma_bump(double t, double tau, double shape) {
  if (t <= 0.0) return 0.0;
  const double r = t / tau;
  return std::pow(r, shape) * std::exp(shape * (1.0 - r));
}

}  // namespace detail

// Per-channel temporal response functions: a sharp Gamma lobe at
// delay + jitter minus a delayed opposite lobe, random sign per channel,
// unit L2 energy. The trough lobe's support starts at the main peak, so the
// continuous-time extremum sits exactly at delay + jitter and the sampled
// argmax can only land on an adjacent tap.
inline SubjectProfile make_subject_trf(std::uint64_t seed, const std::string& subject_id = "synth") {
  SubjectProfile p;
  p.subject_id = subject_id;
  p.seed = seed;

  Rng rng(mix_seed(seed, 2));
  p.delay_ms = rng.uniform(80.0, 200.0);
  p.drift_phase = rng.uniform(0.0, 2.0 * M_PI);
  p.kernels.assign(static_cast<std::size_t>(p.n_channels) * p.n_taps, 0.0);
  for (int c = 0; c < p.n_channels; ++c) {
    const double jitter_ms = rng.uniform(-15.0, 15.0);
    const double sign = rng.coin() ? 1.0 : -1.0;
    const double trough_gain = rng.uniform(0.3, 0.6);
    const double tau1 = (p.delay_ms + jitter_ms) / 1000.0;
    double* k = p.kernels.data() + static_cast<std::size_t>(c) * p.n_taps;
    double energy = 0.0;
    for (int i = 0; i < p.n_taps; ++i) {
      const double t = static_cast<double>(i) / 64.0;
      const double trough = t > tau1 ? detail::gamma_bump(t - tau1, 0.100, 3.0) : 0.0;
      k[i] = sign * (detail::gamma_bump(t, tau1, 6.0) - trough_gain * trough);
      energy += k[i] * k[i];
    }
    const double inv = 1.0 / std::sqrt(energy);
    for (int i = 0; i < p.n_taps; ++i) k[i] *= inv;
  }
  return p;
}

// Stimulus after the "brain" transformations but before the TRF: identity in
// linear mode; compressive power law plus a slow sinusoidal delay drift
// (fractional-delay linear interpolation) in nonlinear mode.
inline std::vector<double> effective_stimulus(const std::vector<double>& env,
                                              const SubjectProfile& p, SynthMode mode) {
  if (mode == SynthMode::kLinear) return env;
  std::vector<double> u(env.size());
  std::vector<double> comp(env.size());
  for (std::size_t i = 0; i < env.size(); ++i) {
    comp[i] = std::pow(std::max(env[i], 0.0), 0.4);
  }
  const double n = static_cast<double>(env.size());
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double t_s = static_cast<double>(i) / 64.0;
    const double d_samples =
        (p.drift_amp_ms / 1000.0) * 64.0 *
        std::sin(2.0 * M_PI * t_s / p.drift_period_s + p.drift_phase);
    double pos = static_cast<double>(i) - d_samples;
    pos = std::min(std::max(pos, 0.0), n - 1.0);
    const double f = std::floor(pos);
    const std::size_t j = static_cast<std::size_t>(f);
    const double frac = pos - f;
    u[i] = (j + 1 < comp.size()) ? comp[j] * (1.0 - frac) + comp[j + 1] * frac : comp[j];
  }
  return u;
}

// Causal FIR response of one channel to the effective stimulus.
inline std::vector<double> convolve_trf(const std::vector<double>& u, const double* k, int taps) {
  std::vector<double> y(u.size(), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t) {
    const int kmax = static_cast<int>(std::min<std::size_t>(taps, t + 1));
    double acc = 0.0;
    for (int i = 0; i < kmax; ++i) acc += k[i] * u[t - static_cast<std::size_t>(i)];
    y[t] = acc;
  }
  return y;
}

namespace detail {

inline double population_variance(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return var / static_cast<double>(x.size());
}

}  // namespace detail

// Channel gains chosen so var(signal*g)/var(noise) hits the requested SNR
// exactly on this realization. Exposed for tests that re-derive the mix.
struct SynthParts {
  std::vector<std::vector<double>> signal;  // per channel, pre-gain
  std::vector<std::vector<double>> noise;   // per channel; empty when snr is infinite
  std::vector<double> gain;                 // per channel
};

inline SynthParts synth_recording_parts(const Waveform& envelope, const SubjectProfile& p,
                                        double snr_db, SynthMode mode) {
  validate_waveform(envelope, "synth_recording");
  if (envelope.sample_rate_hz != 64.0) {
    throw std::invalid_argument("synth_recording: envelope must be at 64 Hz, got " +
                                std::to_string(envelope.sample_rate_hz));
  }
  const std::int64_t n = static_cast<std::int64_t>(envelope.samples.size());
  const bool noiseless = std::isinf(snr_db) && snr_db > 0.0;

  const std::vector<double> u = effective_stimulus(envelope.samples, p, mode);

  SynthParts parts;
  parts.signal.resize(static_cast<std::size_t>(p.n_channels));
  parts.gain.assign(static_cast<std::size_t>(p.n_channels), 1.0);
  if (!noiseless) parts.noise.resize(static_cast<std::size_t>(p.n_channels));

  const double snr_linear = noiseless ? 0.0 : std::pow(10.0, snr_db / 10.0);
  for (int c = 0; c < p.n_channels; ++c) {
    auto& sig = parts.signal[static_cast<std::size_t>(c)];
    sig = convolve_trf(u, p.kernel(c), p.n_taps);
    const double sig_var = detail::population_variance(sig);
    // A subject whose response carries no stimulus signal is junk data no
    // matter what the noise settings are, so the guard is unconditional.
    if (sig_var < 1e-18) {
      throw std::invalid_argument("synth_recording: zero-variance signal on channel " +
                                  std::to_string(c) + " (is the envelope constant?)");
    }
    if (!noiseless) {
      auto& noise = parts.noise[static_cast<std::size_t>(c)];
      noise = pink_noise(n, mix_seed(p.seed, 1000 + static_cast<std::uint64_t>(c)));
      const double noise_var = detail::population_variance(noise);
      parts.gain[static_cast<std::size_t>(c)] = std::sqrt(snr_linear * noise_var / sig_var);
    }
  }
  return parts;
}

inline Recording synth_recording(const Waveform& envelope, const SubjectProfile& p,
                                 double snr_db, SynthMode mode) {
  const SynthParts parts = synth_recording_parts(envelope, p, snr_db, mode);
  const std::size_t n = envelope.samples.size();

  Recording rec;
  rec.subject_id = p.subject_id;
  rec.recording_id = p.subject_id + "_r01";
  rec.sample_rate = 64;
  rec.n_channels = static_cast<std::uint32_t>(p.n_channels);
  rec.eeg.resize(static_cast<std::size_t>(p.n_channels) * n);
  rec.envelope.resize(n);
  for (std::size_t i = 0; i < n; ++i) rec.envelope[i] = static_cast<float>(envelope.samples[i]);
  for (int c = 0; c < p.n_channels; ++c) {
    const auto& sig = parts.signal[static_cast<std::size_t>(c)];
    const double g = parts.gain[static_cast<std::size_t>(c)];
    float* out = rec.eeg.data() + static_cast<std::size_t>(c) * n;
    if (parts.noise.empty()) {
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sig[i]);
    } else {
      const auto& noise = parts.noise[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sig[i] * g + noise[i]);
    }
  }
  rec.validate();
  return rec;
}

// One subject of a generated set: profile and recording derive from
// seed + subject index, so sets are reproducible and extendable.
inline Recording synth_subject(const SynthConfig& cfg, int subject_index) {
  cfg.validate();
  if (subject_index < 0 || subject_index >= cfg.n_subjects) {
    throw std::invalid_argument("subject index out of range");
  }
  const std::uint64_t subject_seed = cfg.seed + static_cast<std::uint64_t>(subject_index);
  char name[16];
  std::snprintf(name, sizeof(name), "s%02d", subject_index + 1);
  SubjectProfile profile = make_subject_trf(subject_seed, name);
  profile.nonlinear = cfg.mode == SynthMode::kNonlinear;
  const Waveform env = synth_envelope(cfg.minutes * 60.0, mix_seed(subject_seed, 1));
  return synth_recording(env, profile, cfg.snr_db, cfg.mode);
}

}  // namespace envtrack
