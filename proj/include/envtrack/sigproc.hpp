#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace envtrack {

struct Waveform {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
};

inline void validate_waveform(const Waveform& w, const char* who) {
  if (!(w.sample_rate_hz > 0.0)) {
    throw std::invalid_argument(std::string(who) + ": sample rate must be positive");
  }
  for (double v : w.samples) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(who) + ": non-finite sample");
    }
  }
}

// ---------------------------------------------------------------------------
// Envelope extraction: gammatone filterbank + power-law compression
// ---------------------------------------------------------------------------

// Glasberg & Moore equivalent rectangular bandwidth and ERB-number scale.
inline double erb_bandwidth(double f_hz) { return 24.7 * (1.0 + 4.37 * f_hz / 1000.0); }
inline double erb_number(double f_hz) { return 21.4 * std::log10(1.0 + 0.00437 * f_hz); }
inline double erb_number_inverse(double e) { return (std::pow(10.0, e / 21.4) - 1.0) / 0.00437; }

inline std::vector<double> erb_spaced_centers(double lo_hz, double hi_hz, int n) {
  if (n < 1 || !(lo_hz > 0.0) || !(hi_hz > lo_hz)) {
    throw std::invalid_argument("erb_spaced_centers: need n >= 1 and 0 < lo < hi");
  }
  std::vector<double> cf(static_cast<std::size_t>(n));
  const double e_lo = erb_number(lo_hz), e_hi = erb_number(hi_hz);
  for (int i = 0; i < n; ++i) {
    const double e = n == 1 ? e_lo : e_lo + (e_hi - e_lo) * i / (n - 1);
    cf[static_cast<std::size_t>(i)] = erb_number_inverse(e);
  }
  return cf;
}

struct EnvelopeConfig {
  int n_subbands = 28;
  double cf_lo_hz = 50.0;
  double cf_hi_hz = 5000.0;
  double exponent = 0.6;
};

// Gammatone subband magnitudes via a cascade of 4 identical complex one-pole
// filters centered on each cf. Running the filter in the complex (analytic)
// domain gives the subband magnitude directly, so a pure tone yields a flat
// envelope instead of a rectified oscillation. Per-stage gain 1-|pole|
// normalizes the peak response to ~1. Linear filter + |.|^q makes the whole
// map homogeneous: envelope(a*x) = a^q * envelope(x).
inline Waveform extract_envelope(const Waveform& audio, const EnvelopeConfig& cfg = {}) {
  validate_waveform(audio, "extract_envelope");
  if (audio.sample_rate_hz < 8000.0) {
    throw std::invalid_argument("extract_envelope: sample rate " +
                                std::to_string(audio.sample_rate_hz) +
                                " Hz is below the 8 kHz minimum");
  }
  // Centers above Nyquist (possible at exactly 8 kHz with the default 5 kHz
  // top) simply wrap in the complex resonator; the averaged envelope stays
  // well-defined, so they are not rejected.
  const std::vector<double> centers = erb_spaced_centers(cfg.cf_lo_hz, cfg.cf_hi_hz,
                                                         cfg.n_subbands);
  const std::size_t n = audio.samples.size();
  const double T = 1.0 / audio.sample_rate_hz;

  Waveform out;
  out.sample_rate_hz = audio.sample_rate_hz;
  out.samples.assign(n, 0.0);

  constexpr int kStages = 4;
  for (double cf : centers) {
    const double bw = 1.019 * erb_bandwidth(cf);
    const std::complex<double> pole =
        std::exp(std::complex<double>(-2.0 * M_PI * bw * T, 2.0 * M_PI * cf * T));
    const double gain = 1.0 - std::abs(pole);
    std::array<std::complex<double>, kStages> state{};
    for (std::size_t t = 0; t < n; ++t) {
      std::complex<double> v(audio.samples[t], 0.0);
      for (int s = 0; s < kStages; ++s) {
        state[static_cast<std::size_t>(s)] = gain * v + pole * state[static_cast<std::size_t>(s)];
        v = state[static_cast<std::size_t>(s)];
      }
      out.samples[t] += std::pow(std::abs(v), cfg.exponent);
    }
  }
  const double inv = 1.0 / cfg.n_subbands;
  for (double& v : out.samples) v *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Zero-phase Butterworth bandpass
// ---------------------------------------------------------------------------

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// 4th-order Butterworth bandpass (order-2 lowpass prototype through the
// standard s -> (s^2+w0^2)/(Bs) transform, then bilinear with pre-warping),
// returned as two second-order sections. Gain is normalized to 1 at the
// geometric center frequency.
inline std::array<Biquad, 2> design_bandpass4(double lo_hz, double hi_hz, double fs) {
  if (!(lo_hz > 0.0) || !(hi_hz > lo_hz)) {
    throw std::invalid_argument("design_bandpass4: need 0 < lo < hi");
  }
  if (hi_hz >= fs / 2.0) {
    throw std::invalid_argument("design_bandpass4: upper edge " + std::to_string(hi_hz) +
                                " Hz reaches Nyquist " + std::to_string(fs / 2.0) + " Hz");
  }
  const double k = 2.0 * fs;
  const double wl = k * std::tan(M_PI * lo_hz / fs);
  const double wh = k * std::tan(M_PI * hi_hz / fs);
  const double w0 = std::sqrt(wl * wh);
  const double bw = wh - wl;

  // Order-2 Butterworth prototype pole (upper half plane); its conjugate and
  // the transform's second root cover the remaining three bandpass poles.
  const std::complex<double> proto(-std::sqrt(0.5), std::sqrt(0.5));
  const std::complex<double> bp = bw * proto;
  const std::complex<double> disc = std::sqrt(bp * bp - 4.0 * w0 * w0);
  const std::complex<double> s_a = (bp + disc) / 2.0;
  const std::complex<double> s_b = (bp - disc) / 2.0;

  auto bilinear = [k](std::complex<double> s) { return (k + s) / (k - s); };
  const std::complex<double> z_a = bilinear(s_a);
  const std::complex<double> z_b = bilinear(s_b);

  // Each section takes one conjugate pole pair and one (z-1)(z+1) zero pair.
  std::array<Biquad, 2> sos{};
  sos[0] = {1.0, 0.0, -1.0, -2.0 * z_a.real(), std::norm(z_a)};
  sos[1] = {1.0, 0.0, -1.0, -2.0 * z_b.real(), std::norm(z_b)};

  const double wc = 2.0 * std::atan(w0 / k);
  const std::complex<double> e1 = std::exp(std::complex<double>(0.0, -wc));
  const std::complex<double> e2 = e1 * e1;
  double mag = 1.0;
  for (const Biquad& s : sos) {
    mag *= std::abs((s.b0 + s.b1 * e1 + s.b2 * e2) / (1.0 + s.a1 * e1 + s.a2 * e2));
  }
  const double scale = std::sqrt(1.0 / mag);
  for (Biquad& s : sos) {
    s.b0 *= scale;
    s.b1 *= scale;
    s.b2 *= scale;
  }
  return sos;
}

inline void biquad_cascade_inplace(std::vector<double>& x, const std::array<Biquad, 2>& sos) {
  for (const Biquad& s : sos) {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + s.b1 * x1 + s.b2 * x2 - s.a1 * y1 - s.a2 * y2;
      x2 = x1;
      x1 = in;
      y2 = y1;
      y1 = out;
      v = out;
    }
  }
}

// Forward-backward application: zero phase, squared magnitude response.
inline Waveform bandpass_zero_phase(const Waveform& x, double lo_hz = 0.5, double hi_hz = 32.0) {
  validate_waveform(x, "bandpass_zero_phase");
  const std::array<Biquad, 2> sos = design_bandpass4(lo_hz, hi_hz, x.sample_rate_hz);
  Waveform out = x;
  biquad_cascade_inplace(out.samples, sos);
  std::reverse(out.samples.begin(), out.samples.end());
  biquad_cascade_inplace(out.samples, sos);
  std::reverse(out.samples.begin(), out.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// Decimation, normalization, splits
// ---------------------------------------------------------------------------

// Plain sample dropping; the caller is responsible for having band-limited
// the input (the 0.5-32 Hz bandpass is the anti-alias stage in this
// pipeline).
inline Waveform decimate(const Waveform& x, int factor) {
  validate_waveform(x, "decimate");
  if (factor < 1) throw std::invalid_argument("decimate: factor must be >= 1");
  const double q = x.sample_rate_hz / factor;
  if (std::fmod(x.sample_rate_hz, static_cast<double>(factor)) != 0.0) {
    throw std::invalid_argument("decimate: rate " + std::to_string(x.sample_rate_hz) +
                                " not divisible by factor " + std::to_string(factor));
  }
  Waveform out;
  out.sample_rate_hz = q;
  out.samples.reserve(x.samples.size() / factor + 1);
  for (std::size_t i = 0; i < x.samples.size(); i += static_cast<std::size_t>(factor)) {
    out.samples.push_back(x.samples[i]);
  }
  return out;
}

// (x - mean) / population std; constant input maps to zeros instead of
// blowing up. Never throws: degenerate lengths are guarded the same way.
inline std::vector<double> zscore(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  std::vector<double> out(n);
  if (sd < 1e-12) return out;  // zeros
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

struct SplitSpec {
  using Range = std::pair<std::int64_t, std::int64_t>;  // [lo, hi)
  std::vector<Range> train;
  Range validation;
  Range test;
};

// Train on the outer 40% + 40%; the middle 20% splits into validation then
// test, in that order. Integer arithmetic keeps the boundaries exact.
inline SplitSpec split_recording(std::int64_t n_samples) {
  if (n_samples < 10) {
    throw std::invalid_argument("split_recording: need at least 10 samples, got " +
                                std::to_string(n_samples));
  }
  const std::int64_t b40 = 2 * n_samples / 5;
  const std::int64_t b50 = n_samples / 2;
  const std::int64_t b60 = 3 * n_samples / 5;
  SplitSpec s;
  s.train = {{0, b40}, {b60, n_samples}};
  s.validation = {b40, b50};
  s.test = {b50, b60};
  return s;
}

}  // namespace envtrack
