#include "vocalbp/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "vocalbp/error.hpp"

namespace vbp {

std::size_t segment_length(int sample_rate) {
  return static_cast<std::size_t>(std::llround(kSegmentSeconds * sample_rate));
}

std::size_t next_pow2(std::size_t n) { return n <= 1 ? 1 : std::bit_ceil(n); }

void fft_inplace(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (n == 0 || !std::has_single_bit(n)) throw Error(ErrorCode::InvalidLength, "FFT size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    // Twiddles computed directly per index rather than by recurrence, so error does not accumulate.
    std::vector<std::complex<double>> tw(half);
    for (std::size_t k = 0; k < half; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      tw[k] = {std::cos(a), std::sin(a)};
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto u = data[i + k];
        const auto v = data[i + k + half] * tw[k];
        data[i + k] = u + v;
        data[i + k + half] = u - v;
      }
    }
  }
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  if (n < 2) throw Error(ErrorCode::InvalidLength, "window length must be >= 2");
  if (!(sigma > 0.0 && sigma <= 1.0)) throw Error(ErrorCode::InvalidSigma, "sigma must lie in (0, 1]");
  const double center = static_cast<double>(n - 1) / 2.0;
  const double spread = sigma * center;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (static_cast<double>(i) - center) / spread;
    w[i] = std::exp(-0.5 * z * z);
  }
  return w;
}

Spectrum fft_magnitude(std::span<const double> frame, int sample_rate) {
  if (frame.empty()) throw Error(ErrorCode::EmptyFrame, "cannot transform an empty frame");
  const std::size_t n = next_pow2(frame.size());
  std::vector<std::complex<double>> buf(n);
  std::copy(frame.begin(), frame.end(), buf.begin());
  fft_inplace(buf);
  Spectrum s;
  s.fft_size = n;
  s.bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n);
  s.magnitudes.resize(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) s.magnitudes[k] = std::abs(buf[k]);
  return s;
}

double band_flatness(const Spectrum& spectrum, double lo_hz, double hi_hz) {
  double log_sum = 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < spectrum.magnitudes.size(); ++k) {
    const double f = spectrum.frequency(k);
    if (f < lo_hz || f > hi_hz) continue;
    const double m = std::max(spectrum.magnitudes[k], 1e-12);
    log_sum += std::log(m);
    sum += m;
    ++count;
  }
  if (count == 0) return 1.0;
  const double geo = std::exp(log_sum / static_cast<double>(count));
  const double arith = sum / static_cast<double>(count);
  return std::clamp(geo / arith, 0.0, 1.0);
}

std::vector<VoicedRegion> detect_voiced_regions(const AudioClip& clip, const VoicingConfig& config) {
  if (clip.sample_rate <= 0 || clip.duration_s() < 0.1 - 1e-12) {
    throw Error(ErrorCode::ClipTooShort, "voicing detection needs at least 100 ms of audio");
  }
  const auto frame_len = static_cast<std::size_t>(std::llround(config.frame_seconds * clip.sample_rate));
  const std::size_t n_frames = clip.samples.size() / frame_len;
  if (n_frames == 0) return {};

  const auto window = gaussian_window(frame_len, config.window_sigma);
  std::vector<double> rms(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < frame_len; ++i) {
      const double s = clip.samples[f * frame_len + i];
      acc += s * s;
    }
    rms[f] = std::sqrt(acc / static_cast<double>(frame_len));
  }
  auto sorted = rms;
  std::sort(sorted.begin(), sorted.end());
  const auto q_index = static_cast<std::size_t>(std::floor(config.energy_quantile * static_cast<double>(n_frames - 1)));
  const double gate = config.energy_ratio * sorted[q_index];

  std::vector<bool> voiced(n_frames, false);
  std::vector<double> frame(frame_len);
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (!(rms[f] > gate)) continue;
    for (std::size_t i = 0; i < frame_len; ++i) frame[i] = clip.samples[f * frame_len + i] * window[i];
    const auto spec = fft_magnitude(frame, clip.sample_rate);
    voiced[f] = band_flatness(spec, config.band_lo_hz, config.band_hi_hz) < config.flatness_max;
  }

  std::vector<VoicedRegion> regions;
  const double frame_s = static_cast<double>(frame_len) / clip.sample_rate;
  std::size_t f = 0;
  while (f < n_frames) {
    if (!voiced[f]) {
      ++f;
      continue;
    }
    std::size_t g = f;
    while (g < n_frames && voiced[g]) ++g;
    const VoicedRegion r{static_cast<double>(f) * frame_s, static_cast<double>(g) * frame_s};
    if (r.end_s - r.start_s >= config.min_region_seconds - 1e-9) regions.push_back(r);
    f = g;
  }
  return regions;
}

std::vector<Segment> segment_regions(const AudioClip& clip, const std::vector<VoicedRegion>& regions,
                                     std::size_t max_segments) {
  std::vector<Segment> out;
  const std::size_t len = segment_length(clip.sample_rate);
  if (len == 0) return out;
  for (const auto& r : regions) {
    auto lo = static_cast<std::size_t>(std::max<long long>(0, std::llround(r.start_s * clip.sample_rate)));
    auto hi = static_cast<std::size_t>(std::max<long long>(0, std::llround(r.end_s * clip.sample_rate)));
    hi = std::min(hi, clip.samples.size());
    for (std::size_t s = lo; s + len <= hi; s += len) {
      if (out.size() >= max_segments) return out;
      Segment seg;
      seg.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(s),
                         clip.samples.begin() + static_cast<std::ptrdiff_t>(s + len));
      seg.start_s = static_cast<double>(s) / clip.sample_rate;
      seg.index = out.size();
      seg.sample_rate = clip.sample_rate;
      out.push_back(std::move(seg));
    }
  }
  return out;
}

std::vector<SpectralPeak> spectral_peaks(const Spectrum& spectrum, double min_separation_hz, double relative_floor) {
  const auto& m = spectrum.magnitudes;
  const double global_max = m.empty() ? 0.0 : *std::max_element(m.begin(), m.end());
  if (!(global_max > 0.0)) throw Error(ErrorCode::DegenerateSpectrum, "all magnitudes are zero");

  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const bool left_ok = k == 0 || m[k] > m[k - 1];
    const bool right_ok = k + 1 == m.size() || m[k] >= m[k + 1];
    if (left_ok && right_ok && m[k] >= relative_floor * global_max) candidates.push_back(k);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });

  std::vector<SpectralPeak> peaks;
  for (auto k : candidates) {
    const double hz = spectrum.frequency(k);
    const bool clear = std::all_of(peaks.begin(), peaks.end(),
                                   [&](const SpectralPeak& p) { return std::abs(p.hz - hz) >= min_separation_hz; });
    if (!clear) continue;
    peaks.push_back({hz, m[k]});
    if (peaks.size() == 5) break;
  }
  return peaks;
}

}  // namespace vbp
