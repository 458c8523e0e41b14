#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "emocross/audio.hpp"
#include "emocross/image.hpp"
#include "emocross/losses.hpp"
#include "emocross/rng.hpp"
#include "emocross/tensor.hpp"

namespace emocross::data {

inline const std::array<std::string, 6>& emotion_classes() {
  static const std::array<std::string, 6> names = {
      "anger", "disgust", "fear", "happiness", "sadness", "surprise"};
  return names;
}

inline int class_index(const std::string& name) {
  const auto& names = emotion_classes();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

enum class Modality { kVisual, kAudio };

inline std::string modality_name(Modality m) {
  return m == Modality::kVisual ? "visual" : "audio";
}

// One training sample; audio utterances contribute one sample per segment,
// all sharing the utterance's group id for evaluation-time aggregation.
struct Sample {
  Tensor x;  // [3,H,W]
  int label = 0;
  std::string group_id;
};

struct Dataset {
  std::string id;
  Modality modality = Modality::kVisual;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (samples.empty()) throw DataError("dataset '" + id + "' is empty");
    for (const Sample& s : samples) {
      if (s.label < 0 || s.label >= 6) {
        throw DataError("dataset '" + id + "': label " + std::to_string(s.label) +
                        " out of range");
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& indices,
                 const std::string& suffix) const {
    Dataset out;
    out.id = id + suffix;
    out.modality = modality;
    out.samples.reserve(indices.size());
    for (std::size_t i : indices) out.samples.push_back(samples[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// manifest loading (CSV: path,label — labels by name)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(c));
  return e;
}

}  // namespace detail

// Loads a dataset described by a CSV manifest with a `path,label` header.
// Images are resized to target_h x target_w; WAV files run through the
// audio front-end and contribute one sample per 64-frame segment.
// Utterances too short for one segment are reported and skipped.
inline Dataset load_manifest(const std::filesystem::path& manifest_path,
                             std::size_t target_h = 64, std::size_t target_w = 64) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("manifest: cannot open " + manifest_path.string());
  const std::filesystem::path base = manifest_path.parent_path();

  Dataset ds;
  ds.id = manifest_path.stem().string();

  std::string line;
  std::size_t row = 0;
  bool saw_header = false, modality_set = false;
  while (std::getline(is, line)) {
    ++row;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!saw_header) {
      if (t != "path,label") {
        throw DataError("manifest row 1: expected header 'path,label', got '" + t + "'");
      }
      saw_header = true;
      continue;
    }
    const std::size_t comma = t.find(',');
    if (comma == std::string::npos) {
      throw DataError("manifest row " + std::to_string(row) + ": missing comma");
    }
    const std::string rel = detail::trim(t.substr(0, comma));
    const std::string label_name = detail::trim(t.substr(comma + 1));
    const int label = class_index(label_name);
    if (label < 0) {
      throw DataError("manifest row " + std::to_string(row) + ": unknown label '" +
                      label_name + "'");
    }
    const std::filesystem::path file = base / rel;
    if (!std::filesystem::exists(file)) {
      throw DataError("manifest row " + std::to_string(row) + ": missing file " +
                      file.string());
    }

    const std::string ext = detail::lower_ext(file);
    const Modality m = ext == ".wav" ? Modality::kAudio : Modality::kVisual;
    if (!modality_set) {
      ds.modality = m;
      modality_set = true;
    } else if (m != ds.modality) {
      throw DataError("manifest row " + std::to_string(row) +
                      ": mixes audio and visual entries");
    }

    if (m == Modality::kVisual) {
      Tensor img;
      if (ext == ".rtn") {
        img = read_raw_image(file);
      } else if (ext == ".bmp") {
        img = read_bmp(file);
      } else {
        throw DataError("manifest row " + std::to_string(row) +
                        ": unsupported image format '" + ext + "'");
      }
      Sample s;
      s.x = bilinear_resize(img, target_h, target_w);
      s.label = label;
      s.group_id = rel;
      ds.samples.push_back(std::move(s));
    } else {
      const audio::Waveform w = audio::read_wav(file);
      std::vector<audio::MelSegment> segs;
      try {
        segs = audio::extract_segments(w, rel);
      } catch (const DataError& e) {
        std::cerr << "manifest row " << row << ": skipping utterance: " << e.what()
                  << "\n";
        continue;
      }
      for (const audio::MelSegment& seg : segs) {
        Sample s;
        s.x = Tensor(Shape{3, seg.data.dim(0), seg.data.dim(1)});
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t f = 0; f < seg.data.dim(0); ++f)
            for (std::size_t tt = 0; tt < seg.data.dim(1); ++tt)
              s.x(c, f, tt) = seg.data(f, tt, c);
        s.label = label;
        s.group_id = rel;
        ds.samples.push_back(std::move(s));
      }
    }
  }
  if (!saw_header) throw DataError("manifest: " + manifest_path.string() + " is empty");
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// synthetic two-domain generator
// ---------------------------------------------------------------------------

// Desk-scale stand-in for a pair of emotion corpora: both datasets share
// class semantics (per-class pattern families with per-sample latents drawn
// once and reused across domains) while dataset B additionally applies a
// global style transform parameterized by `shift` plus per-sample noise.
struct SynthSpec {
  std::size_t classes = 6;
  std::size_t per_class = 40;
  double shift = 0.5;
  double noise = 0.05;
  Modality modality = Modality::kVisual;
  std::size_t height = 64;
  std::size_t width = 64;
};

namespace detail {

struct SynthLatent {
  double phase = 0.0;
  double amp = 1.0;
  double jitter = 0.0;
  // two distractor blobs per sample make the class blob non-trivial to find
  std::array<double, 2> dy{}, dx{}, damp{};
};

inline Tensor render_visual(int cls, const SynthLatent& lat, double shift,
                            std::size_t h, std::size_t w) {
  constexpr double kPi = 3.14159265358979323846;
  // Classes are coded twice: a bright blob at a class anchor on a ring (the
  // dominant cue) and a class-oriented grating (a weaker cue). The domain
  // shift rotates the ring — at shift=0.5 each blob lands halfway between
  // two anchors — lowers contrast and retints the channels, while the
  // grating orientation stays put across domains.
  const double ang = 2.0 * kPi * cls / 6.0 + (kPi / 3.0) * shift;
  const double ring = 0.33 * static_cast<double>(std::min(h, w));
  const double blob_y = 0.5 * h + ring * std::sin(ang) + 2.0 * lat.jitter;
  const double blob_x = 0.5 * w + ring * std::cos(ang) + 2.0 * std::sin(lat.phase);
  const double sigma = 0.095 * static_cast<double>(std::min(h, w));
  const double theta = kPi * cls / 6.0;
  const double freq = 2.0 + 0.5 * cls;
  const double cth = std::cos(theta), sth = std::sin(theta);
  const double contrast = 1.0 - 0.45 * shift;
  const std::array<double, 3> tint = {0.9, -0.6, 0.3};
  Tensor t(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(w);
      const double v = static_cast<double>(y) / static_cast<double>(h);
      const double grating =
          std::sin(2.0 * kPi * freq * (cth * u + sth * v) + lat.phase);
      const double gy = (static_cast<double>(y) - blob_y) / sigma;
      const double gx = (static_cast<double>(x) - blob_x) / sigma;
      double blob = std::exp(-0.5 * (gy * gy + gx * gx));
      double clutter = 0.0;
      for (int d = 0; d < 2; ++d) {
        const double cy = (static_cast<double>(y) - lat.dy[d]) / sigma;
        const double cxd = (static_cast<double>(x) - lat.dx[d]) / sigma;
        clutter += lat.damp[d] * std::exp(-0.5 * (cy * cy + cxd * cxd));
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double val = 0.32 + 0.10 * grating + 0.58 * lat.amp * blob +
                     0.58 * clutter;
        val = (val - 0.5) * contrast + 0.5 + 0.22 * shift * tint[ch];
        if (val < 0.0) val = 0.0;
        if (val > 1.0) val = 1.0;
        t(ch, y, x) = val;
      }
    }
  }
  return t;
}

inline Tensor render_audio_like(int cls, const SynthLatent& lat, double shift,
                                std::size_t h, std::size_t w) {
  constexpr double kPi = 3.14159265358979323846;
  // A spectro-temporal event at a class anchor in (mel, time) space: an
  // elongated energy blob with two harmonics stacked above it, plus a faint
  // wobbling ridge. Shares its blob-like local statistics with the visual
  // domain so conv features transfer. The shift moves the anchors along the
  // ring, compresses the gain and offsets the static channel.
  const double ang = 2.0 * kPi * cls / 6.0 + (kPi / 3.0) * shift;
  const double ring = 0.33 * static_cast<double>(std::min(h, w));
  const double c_m = 0.5 * h + ring * std::sin(ang) + 1.5 * lat.jitter;
  const double c_t = 0.5 * w + ring * std::cos(ang) + 2.0 * std::sin(lat.phase);
  const double sig_m = 0.07 * static_cast<double>(h);
  const double sig_t = 0.13 * static_cast<double>(w);
  const double gain = lat.amp * (1.0 - 0.3 * shift);

  Tensor st(Shape{h, w});
  for (std::size_t m = 0; m < h; ++m) {
    for (std::size_t t = 0; t < w; ++t) {
      double e = 0.0;
      for (int harm = 0; harm < 3; ++harm) {
        const double dm = (static_cast<double>(m) - c_m - 11.0 * harm) / sig_m;
        const double dt = (static_cast<double>(t) - c_t) / sig_t;
        const double ha = harm == 0 ? 1.0 : (harm == 1 ? 0.45 : 0.2);
        e += ha * std::exp(-0.5 * (dm * dm + dt * dt));
      }
      const double ridge =
          0.06 * std::sin(2.0 * kPi * static_cast<double>(t) / 23.0 + lat.phase +
                          0.4 * static_cast<double>(m));
      st(m, t) = 0.30 + 0.58 * gain * e + ridge + 0.15 * shift;
    }
  }
  const Tensor d1 = audio::delta(st);
  const Tensor d2 = audio::delta(d1);
  Tensor out(Shape{3, h, w});
  for (std::size_t m = 0; m < h; ++m) {
    for (std::size_t t = 0; t < w; ++t) {
      out(0, m, t) = st(m, t);
      out(1, m, t) = 0.5 + 2.0 * d1(m, t);
      out(2, m, t) = 0.5 + 4.0 * d2(m, t);
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<Dataset, Dataset> synth_generate(const SynthSpec& spec,
                                                  std::uint64_t seed) {
  if (spec.per_class < 2) throw ConfigError("synth: per_class must be >= 2");
  if (spec.classes == 0 || spec.classes > 6) {
    throw ConfigError("synth: classes must lie in [1,6]");
  }
  Rng latent_rng(derive_seed(seed, 0x11));
  Rng noise_a(derive_seed(seed, 0x22));
  Rng noise_b(derive_seed(seed, 0x33));

  Dataset a, b;
  a.id = "synthA";
  b.id = "synthB";
  a.modality = b.modality = spec.modality;

  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      detail::SynthLatent lat;
      lat.phase = latent_rng.uniform(0.0, 6.283185307179586);
      lat.amp = latent_rng.uniform(0.85, 1.0);
      lat.jitter = latent_rng.normal();
      // distractors stay away from the class anchors so labels never
      // become ambiguous
      const double ring = 0.33 * static_cast<double>(std::min(spec.height, spec.width));
      const double keepout = 0.14 * static_cast<double>(std::min(spec.height, spec.width));
      for (int d = 0; d < 2; ++d) {
        double y, x;
        bool clear;
        do {
          y = latent_rng.uniform(4.0, spec.height - 4.0);
          x = latent_rng.uniform(4.0, spec.width - 4.0);
          clear = true;
          for (int c = 0; c < 6; ++c) {
            const double aa = 2.0 * 3.14159265358979323846 * c / 6.0;
            const double ay = 0.5 * spec.height + ring * std::sin(aa);
            const double ax = 0.5 * spec.width + ring * std::cos(aa);
            if ((y - ay) * (y - ay) + (x - ax) * (x - ax) < keepout * keepout) {
              clear = false;
              break;
            }
          }
        } while (!clear);
        lat.dy[d] = y;
        lat.dx[d] = x;
        lat.damp[d] = latent_rng.uniform(0.22, 0.40);
      }

      auto render = [&](double shift) {
        return spec.modality == Modality::kVisual
                   ? detail::render_visual(static_cast<int>(cls), lat, shift,
                                           spec.height, spec.width)
                   : detail::render_audio_like(static_cast<int>(cls), lat, shift,
                                               spec.height, spec.width);
      };
      Sample sa, sb;
      sa.x = render(0.0);
      sb.x = render(spec.shift);
      for (std::size_t k = 0; k < sa.x.size(); ++k) {
        sa.x[k] += spec.noise * noise_a.normal();
        sb.x[k] += spec.noise * noise_b.normal();
      }
      sa.label = sb.label = static_cast<int>(cls);
      const std::string tag = "c" + std::to_string(cls) + "_s" + std::to_string(i);
      sa.group_id = "A_" + tag;
      sb.group_id = "B_" + tag;
      a.samples.push_back(std::move(sa));
      b.samples.push_back(std::move(sb));
    }
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// stratified k-fold splitting
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> kfold_split(const Dataset& ds,
                                                         std::size_t k,
                                                         std::uint64_t seed) {
  if (k < 2 || k > ds.size()) {
    throw ConfigError("kfold: k=" + std::to_string(k) + " for a dataset of " +
                      std::to_string(ds.size()));
  }
  std::vector<std::vector<std::size_t>> by_class(6);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    shuffle(by_class[c], rng);
    // rotate the dealing start per class so remainders spread across folds
    for (std::size_t j = 0; j < by_class[c].size(); ++j) {
      folds[(j + c) % k].push_back(by_class[c][j]);
    }
  }
  return folds;
}

// ---------------------------------------------------------------------------
// mini-batch and cross-dataset pair sampling
// ---------------------------------------------------------------------------

// Draws without replacement within an epoch and reshuffles on exhaustion.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed) {
    if (n == 0) throw ConfigError("sampler: dataset is empty");
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle(order_, rng_);
  }

  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (pos_ == order_.size()) {
        shuffle(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// The K^2 cross product of two mini-batches with pair labels from
// pair_label(); x tensors stay with their datasets, pairs reference them by
// batch position.
struct PairBatch {
  std::vector<std::size_t> idx_i, idx_j;  // dataset indices, size K each
  struct Pair {
    std::size_t i, j;  // positions within the two mini-batches
    int l_i, l_j, y;
  };
  std::vector<Pair> pairs;

  void check(const Dataset& a, const Dataset& b) const {
    const std::size_t k = idx_i.size();
    if (pairs.size() != k * k) {
      throw ContractError("pair batch: expected " + std::to_string(k * k) +
                          " pairs, have " + std::to_string(pairs.size()));
    }
    for (const Pair& p : pairs) {
      if (p.l_i != a.samples[idx_i[p.i]].label ||
          p.l_j != b.samples[idx_j[p.j]].label ||
          p.y != nn::pair_label(p.l_i, p.l_j)) {
        throw ContractError("pair batch: inconsistent pair labels");
      }
    }
  }
};

inline PairBatch sample_pair_batch(const Dataset& a, const Dataset& b,
                                   std::size_t k, BatchSampler& sampler_a,
                                   BatchSampler& sampler_b) {
  if (k == 0) throw ConfigError("pair batch: K must be positive");
  PairBatch pb;
  pb.idx_i = sampler_a.next(k);
  pb.idx_j = sampler_b.next(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      PairBatch::Pair p;
      p.i = i;
      p.j = j;
      p.l_i = a.samples[pb.idx_i[i]].label;
      p.l_j = b.samples[pb.idx_j[j]].label;
      p.y = nn::pair_label(p.l_i, p.l_j);
      pb.pairs.push_back(p);
    }
  }
#ifndef NDEBUG
  pb.check(a, b);
#endif
  return pb;
}

// ---------------------------------------------------------------------------
// input normalization and batch assembly
// ---------------------------------------------------------------------------

/// Per-channel mean/stddev over a set of training datasets.
inline std::pair<std::vector<double>, std::vector<double>> compute_input_stats(
    const std::vector<const Dataset*>& datasets) {
  std::size_t channels = 0;
  for (const Dataset* ds : datasets) {
    if (!ds->samples.empty()) channels = ds->samples.front().x.dim(0);
  }
  if (channels == 0) throw DataError("input stats: no samples");
  std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
  std::size_t per_channel = 0;
  for (const Dataset* ds : datasets) {
    for (const Sample& s : ds->samples) {
      const std::size_t hw = s.x.dim(1) * s.x.dim(2);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* p = s.x.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum[c] += p[i];
          sumsq[c] += p[i] * p[i];
        }
      }
      per_channel += hw;
    }
  }
  std::vector<double> mean(channels), stddev(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    mean[c] = sum[c] / static_cast<double>(per_channel);
    const double var = sumsq[c] / static_cast<double>(per_channel) - mean[c] * mean[c];
    stddev[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return {mean, stddev};
}

/// Stacks the indexed samples into a normalized [N,C,H,W] batch.
inline Tensor assemble_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                             const std::vector<double>& mean,
                             const std::vector<double>& stddev) {
  if (idx.empty()) throw ContractError("assemble_batch: empty index list");
  const Tensor& first = ds.samples[idx[0]].x;
  const std::size_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
  Tensor out(Shape{idx.size(), c, h, w});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const Tensor& x = ds.samples[idx[n]].x;
    check_same_shape(x, first, "assemble_batch");
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double m = mean[ch], inv = 1.0 / stddev[ch];
      const double* src = x.data() + ch * h * w;
      double* dst = out.data() + ((n * c + ch) * h * w);
      for (std::size_t i = 0; i < h * w; ++i) dst[i] = (src[i] - m) * inv;
    }
  }
  return out;
}

inline std::vector<int> labels_of(const Dataset& ds,
                                  const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.samples[i].label);
  return out;
}

}  // namespace emocross::data
