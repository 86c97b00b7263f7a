#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "vocalbp/audio_io.hpp"

namespace vbp {

inline constexpr double kSegmentSeconds = 0.050;
inline constexpr std::size_t kDefaultMaxSegments = 2400;
inline constexpr double kDefaultWindowSigma = 0.4;

/// Samples in one 50 ms segment at `sample_rate` (2400 at 48 kHz).
std::size_t segment_length(int sample_rate);

struct Segment {
  std::vector<double> samples;
  double start_s = 0.0;
  std::size_t index = 0;
  int sample_rate = 0;
};

/// One-sided magnitude spectrum, bins 0..N/2.
struct Spectrum {
  std::vector<double> magnitudes;
  double bin_hz = 0.0;
  std::size_t fft_size = 0;

  [[nodiscard]] double frequency(std::size_t bin) const { return bin_hz * static_cast<double>(bin); }
};

struct VoicedRegion {
  double start_s = 0.0;
  double end_s = 0.0;
};

std::size_t next_pow2(std::size_t n);

/// In-place iterative radix-2 decimation-in-time FFT. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

std::vector<double> gaussian_window(std::size_t n, double sigma = kDefaultWindowSigma);

/// Zero-pads to the next power of two and returns |X[k]| for k = 0..N/2.
Spectrum fft_magnitude(std::span<const double> frame, int sample_rate);

struct VoicingConfig {
  double frame_seconds = kSegmentSeconds;
  double energy_ratio = 2.0;       // frame RMS must exceed ratio x reference RMS
  double energy_quantile = 0.5;    // reference = this quantile of frame RMS (lower median)
  double flatness_max = 0.3;
  double band_lo_hz = 100.0;
  double band_hi_hz = 4000.0;
  double min_region_seconds = 0.100;
  double window_sigma = kDefaultWindowSigma;
};

/// Spectral flatness restricted to [lo_hz, hi_hz]; magnitudes floored at 1e-12.
double band_flatness(const Spectrum& spectrum, double lo_hz, double hi_hz);

std::vector<VoicedRegion> detect_voiced_regions(const AudioClip& clip, const VoicingConfig& config = {});

std::vector<Segment> segment_regions(const AudioClip& clip, const std::vector<VoicedRegion>& regions,
                                     std::size_t max_segments = kDefaultMaxSegments);

struct SpectralPeak {
  double hz;
  double magnitude;
};

std::vector<SpectralPeak> spectral_peaks(const Spectrum& spectrum, double min_separation_hz = 50.0,
                                         double relative_floor = 0.1);

}  // namespace vbp
