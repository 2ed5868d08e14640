#pragma once

// Minimal RIFF/WAVE reader for stimulus audio. Deliberately narrow: 16-bit
// PCM, mono. Anything else is rejected so callers convert up front instead
// of silently training on a downmix we picked for them.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "envtrack/sigproc.hpp"

namespace envtrack {

inline Waveform read_wav_mono(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav_mono: cannot open " + path);

  auto fail = [&](const std::string& what) {
    throw std::runtime_error("read_wav_mono: " + path + ": " + what + " at offset " +
                             std::to_string(static_cast<long long>(f.tellg())));
  };
  auto read_bytes = [&](char* dst, std::streamsize n, const char* what) {
    if (!f.read(dst, n)) fail(std::string("truncated ") + what);
  };
  auto read_u16 = [&](const char* what) {
    unsigned char b[2];
    read_bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  };
  auto read_u32 = [&](const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };

  char tag[4];
  read_bytes(tag, 4, "RIFF header");
  if (std::string(tag, 4) != "RIFF") fail("bad magic, not a RIFF file");
  read_u32("RIFF size");
  read_bytes(tag, 4, "WAVE tag");
  if (std::string(tag, 4) != "WAVE") fail("bad form type, not a WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  Waveform out;
  bool have_data = false;

  while (f.read(tag, 4)) {
    const std::uint32_t size = read_u32("chunk size");
    const std::string id(tag, 4);
    if (id == "fmt ") {
      if (size < 16) fail("fmt chunk too small");
      format = read_u16("format tag");
      channels = read_u16("channel count");
      rate = read_u32("sample rate");
      read_u32("byte rate");
      read_u16("block align");
      bits = read_u16("bits per sample");
      f.seekg(size - 16, std::ios::cur);  // format extension, if any
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (format != 1) {
        throw std::runtime_error("read_wav_mono: " + path + ": format tag " +
                                 std::to_string(format) + " unsupported, expected PCM (1)");
      }
      if (bits != 16) {
        throw std::runtime_error("read_wav_mono: " + path + ": " + std::to_string(bits) +
                                 "-bit samples unsupported, expected 16");
      }
      if (channels != 1) {
        throw std::runtime_error("read_wav_mono: " + path + ": " + std::to_string(channels) +
                                 " channels unsupported, downmix to mono first");
      }
      const std::size_t n = size / 2;
      std::vector<char> raw(static_cast<std::size_t>(size));
      read_bytes(raw.data(), static_cast<std::streamsize>(size), "sample data");
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto lo = static_cast<unsigned char>(raw[2 * i]);
        const auto hi = static_cast<unsigned char>(raw[2 * i + 1]);
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        out.samples[i] = static_cast<double>(v) / 32768.0;
      }
      out.sample_rate_hz = static_cast<double>(rate);
      have_data = true;
    } else {
      f.seekg(size, std::ios::cur);
    }
    if (size & 1u) f.seekg(1, std::ios::cur);  // chunks are word-aligned
  }

  if (!have_data) {
    throw std::runtime_error("read_wav_mono: " + path + ": no data chunk found");
  }
  return out;
}

}  // namespace envtrack
