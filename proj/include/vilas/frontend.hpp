// Copyright 2026 The vilas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "vilas/error.hpp"
#include "vilas/matrix.hpp"
#include "vilas/numerics/param_store.hpp"
#include "vilas/rng.hpp"

namespace vilas {

// T x F log-mel frames plus where they came from.
struct FeatureSequence {
  Matrix frames;
  double sample_rate = 16000.0;
  double frame_shift_ms = 10.0;
  std::string source_id;

  std::size_t num_frames() const { return frames.rows; }
  std::size_t dim() const { return frames.cols; }
};

struct FbankConfig {
  double sample_rate = 16000.0;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t num_mels = 80;
  double preemphasis = 0.97;
  double low_hz = 20.0;
  double high_hz = 7600.0;
  double energy_floor = 1e-10;
};

inline double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT; a.size() must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

// Triangular filters, linear on the mel axis, evaluated at FFT bin centers.
// Returned as num_mels rows of (nfft/2 + 1) weights.
inline std::vector<std::vector<double>> mel_filterbank(const FbankConfig& cfg,
                                                       std::size_t nfft) {
  const std::size_t nbins = nfft / 2 + 1;
  const double mlo = hz_to_mel(cfg.low_hz), mhi = hz_to_mel(cfg.high_hz);
  const double step = (mhi - mlo) / static_cast<double>(cfg.num_mels + 1);
  std::vector<std::vector<double>> fb(cfg.num_mels, std::vector<double>(nbins, 0.0));
  for (std::size_t m = 0; m < cfg.num_mels; ++m) {
    const double left = mlo + step * m, center = left + step, right = center + step;
    for (std::size_t k = 0; k < nbins; ++k) {
      const double mel = hz_to_mel(cfg.sample_rate * k / static_cast<double>(nfft));
      if (mel > left && mel < right) {
        fb[m][k] = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
      }
    }
  }
  return fb;
}

// Log-mel filterbank: Hamming window, per-frame pre-emphasis, power
// spectrum on the next power of two >= window length.
inline FeatureSequence fbank(const std::vector<float>& waveform, const FbankConfig& cfg = {}) {
  if (!(cfg.sample_rate > 0)) throw ConfigError("fbank: sample rate must be positive");
  const auto win = static_cast<std::size_t>(std::lround(cfg.sample_rate * cfg.window_ms / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.sample_rate * cfg.hop_ms / 1000.0));
  if (win == 0 || hop == 0) throw ConfigError("fbank: window/hop round to zero samples");
  if (waveform.size() < win) {
    throw ConfigError("fbank: waveform of " + std::to_string(waveform.size()) +
                      " samples is shorter than one window (" + std::to_string(win) + ")");
  }
  const std::size_t T = 1 + (waveform.size() - win) / hop;
  const std::size_t nfft = detail::next_pow2(win);
  const auto fb = mel_filterbank(cfg, nfft);
  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n)
    window[n] = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / static_cast<double>(win - 1));

  FeatureSequence out;
  out.sample_rate = cfg.sample_rate;
  out.frame_shift_ms = cfg.hop_ms;
  out.frames = Matrix(T, cfg.num_mels);
  std::vector<double> frame(win);
  std::vector<std::complex<double>> spec(nfft);
  std::vector<double> power(nfft / 2 + 1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < win; ++n) frame[n] = waveform[t * hop + n];
    for (std::size_t n = win - 1; n > 0; --n) frame[n] -= cfg.preemphasis * frame[n - 1];
    frame[0] -= cfg.preemphasis * frame[0];
    std::fill(spec.begin(), spec.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t n = 0; n < win; ++n) spec[n] = frame[n] * window[n];
    detail::fft(spec);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
    for (std::size_t m = 0; m < cfg.num_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += fb[m][k] * power[k];
      out.frames(t, m) = static_cast<float>(std::log(e + cfg.energy_floor));
    }
  }
  return out;
}

struct SpecAugmentPolicy {
  std::size_t num_freq_masks = 2;
  std::size_t max_freq_width = 10;
  std::size_t num_time_masks = 2;
  double max_time_width_fraction = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(max_time_width_fraction >= 0.0 && max_time_width_fraction <= 1.0)) {
      throw ConfigError("spec_augment: max_time_width_fraction must be in [0,1]");
    }
  }
};

// One applied mask: [begin, end) over channels (axis 1) or frames (axis 0).
struct AppliedMask {
  enum class Axis { kFrequency, kTime } axis;
  std::size_t begin;
  std::size_t end;
};

struct AugmentResult {
  FeatureSequence features;
  std::vector<AppliedMask> masks;
};

// Masked cells are replaced by the utterance mean; widths are drawn
// uniformly from [0, max] and starts uniformly over valid offsets.
inline AugmentResult spec_augment_with_masks(const FeatureSequence& feat,
                                             const SpecAugmentPolicy& policy) {
  policy.validate();
  AugmentResult res{feat, {}};
  const std::size_t T = feat.num_frames(), F = feat.dim();
  if (T == 0 || F == 0) return res;
  const double mean = std::accumulate(feat.frames.data.begin(), feat.frames.data.end(), 0.0) /
                      static_cast<double>(feat.frames.data.size());
  const auto fill = static_cast<float>(mean);
  Rng rng(policy.seed);
  auto& m = res.features.frames;
  for (std::size_t i = 0; i < policy.num_freq_masks; ++i) {
    const auto w = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(std::min(policy.max_freq_width, F))));
    const auto f0 = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(F - w)));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = f0; f < f0 + w; ++f) m(t, f) = fill;
    res.masks.push_back({AppliedMask::Axis::kFrequency, f0, f0 + w});
  }
  const auto max_t = static_cast<std::size_t>(std::floor(policy.max_time_width_fraction * static_cast<double>(T)));
  for (std::size_t i = 0; i < policy.num_time_masks; ++i) {
    const auto w = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(max_t)));
    const auto t0 = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(T - w)));
    for (std::size_t t = t0; t < t0 + w; ++t)
      for (std::size_t f = 0; f < F; ++f) m(t, f) = fill;
    res.masks.push_back({AppliedMask::Axis::kTime, t0, t0 + w});
  }
  return res;
}

inline FeatureSequence spec_augment(const FeatureSequence& feat, const SpecAugmentPolicy& policy) {
  return spec_augment_with_masks(feat, policy).features;
}

// ------------------------------------------------------------- "VLSF" files
//
// magic "VLSF", u32 version = 1, u32 n_frames, u32 dim, then n_frames * dim
// little-endian float32 values, row-major.

inline constexpr char kFeatureMagic[4] = {'V', 'L', 'S', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void write_matrix_file(const std::filesystem::path& path, const Matrix& m) {
  std::vector<char> buf(kFeatureMagic, kFeatureMagic + 4);
  detail::append_le<std::uint32_t>(buf, kFeatureVersion);
  detail::append_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows));
  detail::append_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols));
  for (float v : m.data) detail::append_le<float>(buf, v);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw RuntimeError("failed writing " + path.string());
}

inline Matrix read_matrix_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("feature file not found: " + path.string());
  const auto blob = detail::slurp(path);
  if (blob.size() < 16) throw FormatError(path.string() + ": truncated header");
  if (std::memcmp(blob.data(), kFeatureMagic, 4) != 0) throw FormatError(path.string() + ": bad magic");
  const auto version = detail::read_le<std::uint32_t>(blob.data() + 4);
  if (version != kFeatureVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto rows = detail::read_le<std::uint32_t>(blob.data() + 8);
  const auto cols = detail::read_le<std::uint32_t>(blob.data() + 12);
  const std::size_t want = 16 + static_cast<std::size_t>(rows) * cols * 4;
  if (blob.size() < want) {
    throw FormatError(path.string() + ": truncated payload (header says " + std::to_string(rows) +
                      "x" + std::to_string(cols) + ", file has " + std::to_string(blob.size()) +
                      " bytes)");
  }
  if (blob.size() > want) {
    throw FormatError(path.string() + ": byte count " + std::to_string(blob.size()) +
                      " does not match header (" + std::to_string(want) + ")");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = detail::read_le<float>(blob.data() + 16 + 4 * i);
  return m;
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureSequence& feat) {
  write_matrix_file(path, feat.frames);
}

inline FeatureSequence read_feature_file(const std::filesystem::path& path) {
  FeatureSequence f;
  f.frames = read_matrix_file(path);
  if (f.frames.rows == 0) throw FormatError(path.string() + ": zero frames");
  f.source_id = path.stem().string();
  return f;
}

}  // namespace vilas
