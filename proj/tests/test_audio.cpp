#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "emocross/audio.hpp"
#include "emocross/rng.hpp"

using namespace emocross;
using namespace emocross::audio;

namespace {

Waveform sine_wave(double freq_hz, double ms, unsigned sr, double amp = 0.8) {
  Waveform w;
  w.sample_rate = sr;
  const std::size_t n = static_cast<std::size_t>(ms * sr / 1000.0);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = amp * std::sin(2.0 * 3.14159265358979323846 * freq_hz *
                                  static_cast<double>(i) / sr);
  }
  return w;
}

Waveform noise_wave(double ms, unsigned sr, std::uint64_t seed, double amp = 0.4) {
  Waveform w;
  w.sample_rate = sr;
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(ms * sr / 1000.0);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * (2.0 * rng.uniform() - 1.0);
  return w;
}

}  // namespace

TEST_CASE("framing arithmetic matches the 655 ms construction") {
  REQUIRE(frame_signal(noise_wave(655, 16000, 1)).dim(0) == 64);
  REQUIRE(frame_signal(noise_wave(25, 16000, 1)).dim(0) == 1);
  REQUIRE(frame_signal(noise_wave(654, 16000, 1)).dim(0) == 63);
  REQUIRE_THROWS_AS(frame_signal(noise_wave(24, 16000, 1)), DataError);
}

TEST_CASE("frames carry the Hamming window") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(400, 1.0);  // exactly one window of ones
  Tensor frames = frame_signal(w);
  REQUIRE(frames.shape() == Shape{1, 400});
  // endpoints of a Hamming window are 0.08, the middle is near 1
  REQUIRE(std::abs(frames(0, 0) - 0.08) < 1e-12);
  REQUIRE(frames(0, 200) > 0.99);
}

TEST_CASE("log_mel of silence sits at the floor") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  Tensor mel = log_mel(frame_signal(w), 16000);
  const double floor_val = std::log(1e-10);
  for (std::size_t i = 0; i < mel.size(); ++i) REQUIRE(mel[i] == floor_val);
}

TEST_CASE("log_mel rejects fmax beyond Nyquist") {
  Waveform w = noise_wave(100, 16000, 3);
  REQUIRE_THROWS_AS(log_mel(frame_signal(w), 16000, 64, 20.0, 9000.0), ConfigError);
}

TEST_CASE("pure tone peaks at the filter whose centre is nearest") {
  const double tone = 1000.0;
  Tensor mel = log_mel(frame_signal(sine_wave(tone, 300, 16000)), 16000);
  const std::vector<double> centers = mel_center_frequencies(64, 20.0, 8000.0);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - tone) < std::abs(centers[nearest] - tone)) nearest = m;
  }
  // mid-utterance frame
  const std::size_t t = mel.dim(1) / 2;
  std::size_t argmax = 0;
  for (std::size_t m = 1; m < 64; ++m) {
    if (mel(m, t) > mel(argmax, t)) argmax = m;
  }
  REQUIRE(argmax == nearest);
}

TEST_CASE("filterbank support and row sums") {
  const std::size_t nfft = 512;
  Tensor fb = mel_filterbank(64, nfft, 16000, 20.0, 8000.0);
  for (std::size_t m = 0; m < 64; ++m) {
    double row = 0.0;
    for (std::size_t k = 0; k < fb.dim(1); ++k) row += fb(m, k);
    REQUIRE(row > 0.0);
  }
  for (std::size_t k = 0; k < fb.dim(1); ++k) {
    const double f = static_cast<double>(k) * 16000 / nfft;
    if (f <= 20.0 || f >= 8000.0) {
      double col = 0.0;
      for (std::size_t m = 0; m < 64; ++m) col += fb(m, k);
      REQUIRE(col == 0.0);
    }
  }
}

TEST_CASE("fft agrees with a naive DFT") {
  Rng rng(8);
  const std::size_t n = 64;
  std::vector<std::complex<double>> a(n);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    a[i] = {x[i], 0.0};
  }
  audio::detail::fft_inplace(a);
  const double pi = 3.14159265358979323846;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> ref(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ang = -2.0 * pi * static_cast<double>(k * i) / n;
      ref += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    REQUIRE(std::abs(a[k] - ref) < 1e-9);
  }
}

TEST_CASE("delta of a constant is zero and of a ramp is one") {
  Tensor constant = Tensor::full({4, 10}, 3.7);
  REQUIRE(delta(constant).abs_max() == 0.0);

  Tensor ramp(Shape{2, 12});
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 0; t < 12; ++t) ramp(f, t) = static_cast<double>(t);
  Tensor d = delta(ramp);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 2; t + 2 < 12; ++t) REQUIRE(d(f, t) == 1.0);
}

TEST_CASE("delta matches a brute-force evaluation with replicated edges") {
  Rng rng(10);
  const std::size_t f_count = 3, t_count = 9, n = 2;
  Tensor feat(Shape{f_count, t_count});
  for (std::size_t i = 0; i < feat.size(); ++i) feat[i] = rng.normal();
  Tensor d = delta(feat, n);

  // oracle: explicit padded buffer, literal regression formula
  for (std::size_t f = 0; f < f_count; ++f) {
    std::vector<double> padded(t_count + 2 * n);
    for (std::size_t t = 0; t < padded.size(); ++t) {
      const std::size_t src = t < n ? 0 : std::min(t - n, t_count - 1);
      padded[t] = feat(f, src);
    }
    for (std::size_t t = 0; t < t_count; ++t) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 1; k <= n; ++k) {
        num += static_cast<double>(k) * (padded[t + n + k] - padded[t + n - k]);
        den += static_cast<double>(k * k);
      }
      REQUIRE(std::abs(d(f, t) - num / (2.0 * den)) < 1e-14);
    }
  }
}

TEST_CASE("delta is linear") {
  Rng rng(12);
  Tensor x(Shape{4, 8}), y(Shape{4, 8});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
  }
  const double a = 1.7, b = -0.6;
  Tensor combo(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
  Tensor lhs = delta(combo);
  Tensor dx = delta(x), dy = delta(y);
  for (std::size_t i = 0; i < lhs.size(); ++i)
    REQUIRE(std::abs(lhs[i] - (a * dx[i] + b * dy[i])) < 1e-12);
}

TEST_CASE("delta needs enough frames") {
  REQUIRE_THROWS_AS(delta(Tensor::full({2, 4}, 1.0), 2), DataError);
}

TEST_CASE("segment counts follow floor((T-64)/34)+1") {
  const auto seg_count = [](std::size_t t) {
    Tensor spec(Shape{64, t, 3});
    return segment(spec, "u").size();
  };
  REQUIRE(seg_count(64) == 1);
  REQUIRE(seg_count(98) == 2);
  REQUIRE(seg_count(97) == 1);
  {
    Tensor spec(Shape{64, 98, 3});
    auto segs = segment(spec, "u");
    REQUIRE(segs[0].start_frame == 0);
    REQUIRE(segs[1].start_frame == 34);
  }
  Tensor tooshort(Shape{64, 63, 3});
  REQUIRE_THROWS_AS(segment(tooshort, "u"), DataError);

  Rng rng(15);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t t = 64 + rng.index(2000 - 64 + 1);
    REQUIRE(seg_count(t) == (t - 64) / 34 + 1);
  }
}

TEST_CASE("extract_segments is deterministic and 655 ms yields one segment") {
  Waveform w = noise_wave(655, 16000, 77);
  auto a = extract_segments(w, "utt0");
  auto b = extract_segments(w, "utt0");
  REQUIRE(a.size() == 1);
  REQUIRE(a[0].data.shape() == Shape{64, 64, 3});
  REQUIRE(max_abs_diff(a[0].data, b[0].data) == 0.0);
  REQUIRE(a[0].data.all_finite());
}

TEST_CASE("amplitude scaling shifts log energies by 2 log s") {
  // loud noise keeps every mel bin above the floor
  Waveform w = noise_wave(700, 16000, 5, 0.45);
  const double s = 1.8;
  Waveform scaled = w;
  for (double& v : scaled.samples) v *= s;

  Tensor mel_a = log_mel(frame_signal(w), 16000);
  Tensor mel_b = log_mel(frame_signal(scaled), 16000);
  const double shift = 2.0 * std::log(s);
  for (std::size_t i = 0; i < mel_a.size(); ++i) {
    REQUIRE(mel_a[i] > std::log(1e-10));  // unfloored as constructed
    REQUIRE(std::abs(mel_b[i] - mel_a[i] - shift) < 1e-9);
  }
  // deltas of a uniformly shifted spectrogram are unchanged
  Tensor d_a = delta(mel_a), d_b = delta(mel_b);
  REQUIRE(max_abs_diff(d_a, d_b) < 1e-9);
}

TEST_CASE("wav io round trip and validation") {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / ("emocross_wav_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  Waveform w = sine_wave(440.0, 100, 16000, 0.5);
  const fs::path p = dir / "tone.wav";
  write_wav(p, w);
  Waveform r = read_wav(p);
  REQUIRE(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    worst = std::max(worst, std::abs(r.samples[i] - w.samples[i]));
  REQUIRE(worst < 1e-4);  // 16-bit quantization

  SECTION("low sample rates are rejected") {
    Waveform low = sine_wave(440.0, 100, 8000, 0.5);
    const fs::path lp = dir / "low.wav";
    write_wav(lp, low);
    REQUIRE_THROWS_AS(read_wav(lp), DataError);
  }
  SECTION("stereo is rejected") {
    std::ifstream is(p, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    bytes[22] = 2;  // channel count field
    const fs::path sp = dir / "stereo.wav";
    std::ofstream(sp, std::ios::binary).write(bytes.data(), bytes.size());
    REQUIRE_THROWS_AS(read_wav(sp), DataError);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(read_wav(dir / "absent.wav"), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("segment cache round trips") {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / ("emocross_seg_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  Waveform w = noise_wave(1100, 16000, 21);
  auto segs = extract_segments(w, "utt9");
  REQUIRE(segs.size() >= 2);
  const fs::path p = dir / "utt9.seg";
  write_segment_cache(p, segs);
  auto back = read_segment_cache(p);
  REQUIRE(back.size() == segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    REQUIRE(back[i].start_frame == segs[i].start_frame);
    REQUIRE(back[i].utterance_id == "utt9");
    REQUIRE(max_abs_diff(back[i].data, segs[i].data) == 0.0);
  }
  fs::remove_all(dir);
}
