#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "emocross/errors.hpp"

namespace emocross::audio {

// A mono waveform with samples in [-1, 1]. The mel bank spans up to 8 kHz,
// so rates below 16 kHz are rejected (no resampler).
struct Waveform {
  std::vector<double> samples;
  unsigned sample_rate = 0;

  double duration_ms() const {
    return 1000.0 * static_cast<double>(samples.size()) /
           static_cast<double>(sample_rate);
  }
};

// Minimal RIFF/WAVE reader for 16-bit PCM mono files.
inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  const auto u16 = [&](std::size_t at) -> std::uint32_t {
    return bytes[at] | (bytes[at + 1] << 8);
  };
  const auto u32 = [&](std::size_t at) -> std::uint32_t {
    return bytes[at] | (bytes[at + 1] << 8) | (bytes[at + 2] << 16) |
           (static_cast<std::uint32_t>(bytes[at + 3]) << 24);
  };
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("wav: " + path.string() + " is not a RIFF/WAVE file");
  }

  unsigned sample_rate = 0, channels = 0, bits = 0, format = 0;
  std::size_t data_at = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::size_t chunk_len = u32(pos + 4);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (pos + 8 + 16 > bytes.size()) throw DataError("wav: truncated fmt chunk");
      format = u16(pos + 8);
      channels = u16(pos + 10);
      sample_rate = u32(pos + 12);
      bits = u16(pos + 22);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data_at = pos + 8;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (format != 1 || bits != 16) {
    throw DataError("wav: " + path.string() + " must be 16-bit PCM");
  }
  if (channels != 1) {
    throw DataError("wav: " + path.string() + " must be mono, has " +
                    std::to_string(channels) + " channels");
  }
  if (data_at == 0 || data_at + data_len > bytes.size()) {
    throw DataError("wav: " + path.string() + " has no valid data chunk");
  }
  if (sample_rate < 16000) {
    throw DataError("wav: " + path.string() + " sample rate " +
                    std::to_string(sample_rate) + " is below 16 kHz");
  }

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    std::int16_t v;
    std::memcpy(&v, bytes.data() + data_at + 2 * i, 2);
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

// Writer used by tests and the synthetic tooling.
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::vector<std::uint8_t> out;
  const auto put_u32 = [&](std::uint32_t v) {
    out.push_back(v & 0xFF);
    out.push_back((v >> 8) & 0xFF);
    out.push_back((v >> 16) & 0xFF);
    out.push_back((v >> 24) & 0xFF);
  };
  const auto put_u16 = [&](std::uint32_t v) {
    out.push_back(v & 0xFF);
    out.push_back((v >> 8) & 0xFF);
  };
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(w.sample_rate);
  put_u32(w.sample_rate * 2);
  put_u16(2);
  put_u16(16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(data_len);
  for (double s : w.samples) {
    double clamped = s;
    if (clamped > 1.0) clamped = 1.0;
    if (clamped < -1.0) clamped = -1.0;
    const auto v = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    put_u16(static_cast<std::uint16_t>(v));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("wav: cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
}

}  // namespace emocross::audio
