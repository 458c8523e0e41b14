#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "emocross/bytes.hpp"
#include "emocross/tensor.hpp"
#include "emocross/wav.hpp"

namespace emocross::audio {

// One 64x64x3 (mel bins x frames x {static, delta, delta-delta}) feature
// block cut from an utterance.
struct MelSegment {
  Tensor data;  // [F, T, 3]
  std::string utterance_id;
  std::size_t start_frame = 0;
};

namespace detail {

constexpr double kPi = 3.14159265358979323846;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// framing
// ---------------------------------------------------------------------------

// Cuts the signal into Hamming-windowed frames. T = floor((len-win)/hop)+1;
// the partial tail frame is dropped.
inline Tensor frame_signal(const Waveform& w, double window_ms = 25.0,
                           double hop_ms = 10.0) {
  const std::size_t win = static_cast<std::size_t>(
      std::lround(window_ms * w.sample_rate / 1000.0));
  const std::size_t hop = static_cast<std::size_t>(
      std::lround(hop_ms * w.sample_rate / 1000.0));
  if (win < 2 || hop == 0) throw ConfigError("frame_signal: window/hop too small");
  if (w.samples.size() < win) {
    throw DataError("frame_signal: signal of " + std::to_string(w.samples.size()) +
                    " samples is shorter than one " + std::to_string(win) +
                    "-sample window");
  }
  const std::size_t frames = (w.samples.size() - win) / hop + 1;
  std::vector<double> hamming(win);
  for (std::size_t i = 0; i < win; ++i) {
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * detail::kPi * static_cast<double>(i) /
                                        static_cast<double>(win - 1));
  }
  Tensor out(Shape{frames, win});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * hop;
    double* dst = out.data() + t * win;
    for (std::size_t i = 0; i < win; ++i) dst[i] = src[i] * hamming[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// mel filterbank
// ---------------------------------------------------------------------------

// Triangular filters with band edges equally spaced on the mel scale between
// fmin and fmax; rows index filters, columns index FFT bins.
inline Tensor mel_filterbank(std::size_t n_mels, std::size_t nfft,
                             unsigned sample_rate, double fmin, double fmax) {
  const std::size_t bins = nfft / 2 + 1;
  std::vector<double> edges(n_mels + 2);
  const double mlo = detail::hz_to_mel(fmin);
  const double mhi = detail::hz_to_mel(fmax);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = detail::mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                 static_cast<double>(n_mels + 1));
  }
  // pin the outer edges so the support is exactly (fmin, fmax) despite the
  // mel round trip
  edges.front() = fmin;
  edges.back() = fmax;
  Tensor fb(Shape{n_mels, bins});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate /
                       static_cast<double>(nfft);
      double wgt = 0.0;
      if (f > lo && f < mid) {
        wgt = (f - lo) / (mid - lo);
      } else if (f == mid) {
        wgt = 1.0;
      } else if (f > mid && f < hi) {
        wgt = (hi - f) / (hi - mid);
      }
      fb(m, k) = wgt;
    }
  }
  return fb;
}

/// Centre frequency (Hz) of each mel filter; the test oracle for peak bins.
inline std::vector<double> mel_center_frequencies(std::size_t n_mels, double fmin,
                                                  double fmax) {
  std::vector<double> centers(n_mels);
  const double mlo = detail::hz_to_mel(fmin);
  const double mhi = detail::hz_to_mel(fmax);
  for (std::size_t m = 0; m < n_mels; ++m) {
    centers[m] = detail::mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(m + 1) /
                                   static_cast<double>(n_mels + 1));
  }
  return centers;
}

constexpr double kLogFloor = 1e-10;

// Log mel energies [n_mels, T] of windowed frames: power spectrum through the
// triangular bank, natural log floored at log(1e-10).
inline Tensor log_mel(const Tensor& frames, unsigned sample_rate,
                      std::size_t n_mels = 64, double fmin = 20.0,
                      double fmax = 8000.0) {
  if (frames.ndim() != 2) {
    throw DimensionError("log_mel: frames must be [T,window], got " +
                         shape_str(frames.shape()));
  }
  if (fmax > sample_rate / 2.0) {
    throw ConfigError("log_mel: fmax " + std::to_string(fmax) +
                      " exceeds the Nyquist frequency " +
                      std::to_string(sample_rate / 2.0));
  }
  const std::size_t t_count = frames.dim(0), win = frames.dim(1);
  const std::size_t nfft = detail::next_pow2(win);
  const std::size_t bins = nfft / 2 + 1;
  const Tensor fb = mel_filterbank(n_mels, nfft, sample_rate, fmin, fmax);

  Tensor out(Shape{n_mels, t_count});
  std::vector<std::complex<double>> buf(nfft);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < nfft; ++i) {
      buf[i] = i < win ? std::complex<double>(frames(t, i), 0.0)
                       : std::complex<double>(0.0, 0.0);
    }
    detail::fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      const double* row = fb.data() + m * bins;
      for (std::size_t k = 0; k < bins; ++k) e += row[k] * power[k];
      out(m, t) = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// regression deltas
// ---------------------------------------------------------------------------

// d_t = sum_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 sum n^2), edges replicated.
inline Tensor delta(const Tensor& feat, std::size_t window = 2) {
  if (feat.ndim() != 2) {
    throw DimensionError("delta: features must be [F,T], got " +
                         shape_str(feat.shape()));
  }
  const std::size_t f_count = feat.dim(0), t_count = feat.dim(1);
  if (window == 0) throw ConfigError("delta: window must be positive");
  if (t_count < 2 * window + 1) {
    throw DataError("delta: need at least " + std::to_string(2 * window + 1) +
                    " frames, got " + std::to_string(t_count));
  }
  double denom = 0.0;
  for (std::size_t n = 1; n <= window; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;
  Tensor out(feat.shape());
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t t = 0; t < t_count; ++t) {
      double acc = 0.0;
      for (std::size_t n = 1; n <= window; ++n) {
        const std::size_t fwd = std::min(t + n, t_count - 1);
        const std::size_t bwd = t >= n ? t - n : 0;
        acc += static_cast<double>(n) * (feat(f, fwd) - feat(f, bwd));
      }
      out(f, t) = acc / denom;
    }
  }
  return out;
}

/// Stacks static/delta/delta-delta planes into [F,T,3].
inline Tensor stack_channels(const Tensor& st, const Tensor& d1, const Tensor& d2) {
  check_same_shape(st, d1, "stack_channels");
  check_same_shape(st, d2, "stack_channels");
  const std::size_t f = st.dim(0), t = st.dim(1);
  Tensor out(Shape{f, t, 3});
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      out(i, j, 0) = st(i, j);
      out(i, j, 1) = d1(i, j);
      out(i, j, 2) = d2(i, j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// context-window segmentation
// ---------------------------------------------------------------------------

// Windows of `length` frames starting at multiples of length-overlap;
// count = floor((T-length)/(length-overlap)) + 1, tail dropped.
inline std::vector<MelSegment> segment(const Tensor& spec3,
                                       const std::string& utterance_id = "",
                                       std::size_t length = 64,
                                       std::size_t overlap = 30) {
  if (spec3.ndim() != 3 || spec3.dim(2) != 3) {
    throw DimensionError("segment: expected [F,T,3], got " +
                         shape_str(spec3.shape()));
  }
  if (overlap >= length) throw ConfigError("segment: overlap must be < length");
  const std::size_t f = spec3.dim(0), t = spec3.dim(1);
  if (t < length) {
    throw DataError("segment: utterance '" + utterance_id + "' has " +
                    std::to_string(t) + " frames, needs " + std::to_string(length));
  }
  const std::size_t hop = length - overlap;
  const std::size_t count = (t - length) / hop + 1;
  std::vector<MelSegment> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t start = s * hop;
    MelSegment seg;
    seg.utterance_id = utterance_id;
    seg.start_frame = start;
    seg.data = Tensor(Shape{f, length, 3});
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < length; ++j)
        for (std::size_t c = 0; c < 3; ++c)
          seg.data(i, j, c) = spec3(i, start + j, c);
    out.push_back(std::move(seg));
  }
  return out;
}

// Full per-utterance pipeline: frames -> log-mel -> deltas -> 64-frame
// segments. Deterministic; throws DataError when the utterance is too short.
inline std::vector<MelSegment> extract_segments(const Waveform& w,
                                                const std::string& utterance_id) {
  const Tensor frames = frame_signal(w);
  const Tensor mel = log_mel(frames, w.sample_rate);
  const Tensor d1 = delta(mel);
  const Tensor d2 = delta(d1);
  return segment(stack_channels(mel, d1, d2), utterance_id);
}

// ---------------------------------------------------------------------------
// on-disk segment cache (same tensor-table layout as checkpoints)
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kSegMagic[8] = {'E', 'M', 'C', 'X', 'S', 'E', 'G', 'S'};
constexpr std::uint32_t kSegVersion = 1;
}  // namespace detail

inline void write_segment_cache(const std::filesystem::path& path,
                                const std::vector<MelSegment>& segments) {
  emocross::detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), detail::kSegMagic, detail::kSegMagic + 8);
  w.put<std::uint32_t>(detail::kSegVersion);
  w.put_str(segments.empty() ? std::string() : segments.front().utterance_id);
  w.put<std::uint64_t>(segments.size());
  for (const MelSegment& s : segments) {
    w.put<std::uint64_t>(s.start_frame);
    w.put_str("segment");
    w.put<std::uint8_t>(0);  // f64
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.data.ndim()));
    for (std::size_t d : s.data.shape()) w.put<std::uint64_t>(d);
    w.put_doubles(s.data.data(), s.data.size());
  }
  w.put<std::uint32_t>(emocross::detail::crc32(w.bytes.data(), w.bytes.size()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("segment cache: cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(w.bytes.data()),
           static_cast<std::streamsize>(w.bytes.size()));
}

inline std::vector<MelSegment> read_segment_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("segment cache: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16 ||
      std::memcmp(bytes.data(), detail::kSegMagic, 8) != 0) {
    throw DataError("segment cache: " + path.string() + " has a bad header");
  }
  std::uint32_t file_crc;
  std::memcpy(&file_crc, bytes.data() + bytes.size() - 4, 4);
  if (emocross::detail::crc32(bytes.data(), bytes.size() - 4) != file_crc) {
    throw DataError("segment cache: " + path.string() + " checksum mismatch");
  }
  emocross::detail::ByteReader<DataError> r(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 8; ++i) r.get<std::uint8_t>();
  if (r.get<std::uint32_t>() != detail::kSegVersion) {
    throw DataError("segment cache: unsupported version");
  }
  const std::string utt = r.get_str();
  const std::uint64_t count = r.get<std::uint64_t>();
  std::vector<MelSegment> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    MelSegment s;
    s.utterance_id = utt;
    s.start_frame = r.get<std::uint64_t>();
    r.get_str();               // tensor name
    r.get<std::uint8_t>();     // dtype
    const std::uint32_t ndim = r.get<std::uint32_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    s.data = Tensor(shape);
    r.get_doubles(s.data.data(), s.data.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace emocross::audio
