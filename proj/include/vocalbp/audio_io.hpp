#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace vbp {

/// Mono waveform in [-1, 1]. `source_channels` remembers what the file held before downmix.
struct AudioClip {
  int sample_rate = 0;
  std::vector<double> samples;
  int source_channels = 1;

  [[nodiscard]] double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Decodes 16-bit PCM RIFF/WAVE. Stereo is averaged into mono; samples scale by 1/32768.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

/// Interleaved channel data in [-1, 1], written as 16-bit PCM (round to nearest, clamp).
std::vector<std::uint8_t> encode_wav(const std::vector<std::vector<double>>& channels, int sample_rate);
void write_wav(const std::filesystem::path& path, const std::vector<std::vector<double>>& channels,
               int sample_rate);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Per-sample channel mean.
std::vector<double> downmix(const std::vector<std::vector<double>>& channels);

AudioClip normalize_amplitude(const AudioClip& clip);

struct Formant {
  double hz;
  double gain;
};

/// Glottal-pulse-like harmonic series at `f0_hz` shaped by formant resonances, plus
/// low-level seeded noise, peak-normalized. Deterministic for a fixed seed.
AudioClip synthesize_speech(double f0_hz, const std::vector<Formant>& formants, double duration_s,
                            int sample_rate, std::uint64_t seed);

/// Formants of a sustained /a/.
std::vector<Formant> default_vowel_formants();

}  // namespace vbp
