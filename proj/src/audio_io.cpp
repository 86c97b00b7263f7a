#include "vocalbp/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "vocalbp/error.hpp"
#include "vocalbp/rng.hpp"

namespace vbp {

namespace {

constexpr double kPcmScale = 32768.0;

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || !tag_is(b, 0, "RIFF") || !tag_is(b, 8, "WAVE")) {
    throw Error(ErrorCode::MalformedRiff, "missing RIFF/WAVE header");
  }
  const std::uint64_t riff_size = read_u32(b, 4);
  if (riff_size + 8 < 12) throw Error(ErrorCode::MalformedRiff, "RIFF size too small");

  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint64_t chunk_size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (tag_is(b, pos, "fmt ")) {
      if (chunk_size < 16 || body + chunk_size > b.size()) {
        throw Error(ErrorCode::MalformedRiff, "bad fmt chunk size");
      }
      const std::uint16_t format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format != 1) throw Error(ErrorCode::UnsupportedEncoding, "format code " + std::to_string(format));
      if (bits != 16) throw Error(ErrorCode::UnsupportedEncoding, std::to_string(bits) + "-bit samples");
      if (channels < 1 || channels > 2) {
        throw Error(ErrorCode::UnsupportedEncoding, std::to_string(channels) + " channels");
      }
      if (rate == 0) throw Error(ErrorCode::MalformedRiff, "zero sample rate");
      have_fmt = true;
    } else if (tag_is(b, pos, "data")) {
      if (!have_fmt) throw Error(ErrorCode::MalformedRiff, "data chunk before fmt chunk");
      const std::size_t frame_bytes = 2u * channels;
      if (body + chunk_size > b.size()) {
        throw Error(ErrorCode::TruncatedData, "data chunk declares " + std::to_string(chunk_size) +
                                                  " bytes, file holds " + std::to_string(b.size() - body));
      }
      if (chunk_size % frame_bytes != 0) {
        throw Error(ErrorCode::TruncatedData, "partial sample frame in data chunk");
      }
      const std::size_t frames = chunk_size / frame_bytes;
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.source_channels = channels;
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(read_u16(b, body + i * frame_bytes + 2u * c));
          acc += raw / kPcmScale;
        }
        clip.samples[i] = acc / channels;
      }
      return clip;
    }
    // Chunks are word aligned.
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (!have_fmt) throw Error(ErrorCode::MalformedRiff, "no fmt chunk");
  throw Error(ErrorCode::MalformedRiff, "no data chunk");
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(const std::vector<std::vector<double>>& channels, int sample_rate) {
  if (channels.empty() || channels.size() > 2) {
    throw Error(ErrorCode::UnsupportedEncoding, "writer supports 1 or 2 channels");
  }
  const std::size_t frames = channels.front().size();
  for (const auto& ch : channels) {
    if (ch.size() != frames) throw Error(ErrorCode::LengthMismatch, "channel lengths differ");
  }
  const auto nch = static_cast<std::uint16_t>(channels.size());
  const auto data_bytes = static_cast<std::uint32_t>(frames * nch * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, nch);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * nch * 2);
  put_u16(out, static_cast<std::uint16_t>(nch * 2));
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::size_t i = 0; i < frames; ++i) {
    for (const auto& ch : channels) {
      const double q = std::clamp(std::round(ch[i] * kPcmScale), -32768.0, 32767.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const std::vector<std::vector<double>>& channels,
               int sample_rate) {
  const auto bytes = encode_wav(channels, sample_rate);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  write_wav(path, std::vector<std::vector<double>>{clip.samples}, clip.sample_rate);
}

std::vector<double> downmix(const std::vector<std::vector<double>>& channels) {
  if (channels.empty()) return {};
  std::vector<double> mono(channels.front().size(), 0.0);
  for (const auto& ch : channels) {
    if (ch.size() != mono.size()) throw Error(ErrorCode::LengthMismatch, "channel lengths differ");
    for (std::size_t i = 0; i < mono.size(); ++i) mono[i] += ch[i];
  }
  for (auto& v : mono) v /= static_cast<double>(channels.size());
  return mono;
}

AudioClip normalize_amplitude(const AudioClip& clip) {
  if (clip.samples.empty()) throw Error(ErrorCode::EmptyClip, "cannot normalize an empty clip");
  double peak = 0.0;
  for (double s : clip.samples) peak = std::max(peak, std::abs(s));
  if (peak == 0.0 || peak == 1.0) return clip;
  AudioClip out = clip;
  const double gain = 1.0 / peak;
  for (auto& s : out.samples) s *= gain;
  // Rounding in `s * gain` can leave the peak one ulp off; pin it.
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (std::abs(clip.samples[i]) == peak) out.samples[i] = clip.samples[i] > 0 ? 1.0 : -1.0;
  }
  for (auto& s : out.samples) s = std::clamp(s, -1.0, 1.0);
  return out;
}

std::vector<Formant> default_vowel_formants() { return {{700.0, 1.0}, {1200.0, 0.6}, {2600.0, 0.25}}; }

AudioClip synthesize_speech(double f0_hz, const std::vector<Formant>& formants, double duration_s,
                            int sample_rate, std::uint64_t seed) {
  if (!(f0_hz >= 60.0 && f0_hz <= 400.0)) {
    throw Error(ErrorCode::InvalidFrequency, "f0 must lie in [60, 400] Hz");
  }
  if (!(duration_s > 0.0)) throw Error(ErrorCode::InvalidLength, "duration must be positive");
  if (sample_rate <= 0) throw Error(ErrorCode::InvalidFrequency, "sample rate must be positive");

  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double nyquist = sample_rate / 2.0;
  const double top = std::min(5000.0, 0.9 * nyquist);
  constexpr double kFormantBandwidth = 60.0;

  // Harmonic amplitudes: 1/k source tilt times a sum of Lorentzian resonances.
  struct Partial {
    double hz, amp, phase;
  };
  Rng rng(derive_seed(seed, {0x5EEC4ULL}));
  std::vector<Partial> partials;
  for (int k = 1; k * f0_hz < top; ++k) {
    const double f = k * f0_hz;
    double envelope = 0.02;
    for (const auto& fm : formants) {
      const double d = (f - fm.hz) / kFormantBandwidth;
      envelope += fm.gain / (1.0 + d * d);
    }
    partials.push_back({f, envelope / std::sqrt(static_cast<double>(k)), 2.0 * std::numbers::pi * rng.uniform()});
  }

  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.source_channels = 1;
  clip.samples.assign(n, 0.0);
  const double w = 2.0 * std::numbers::pi / sample_rate;
  for (const auto& p : partials) {
    const double step = w * p.hz;
    for (std::size_t i = 0; i < n; ++i) clip.samples[i] += p.amp * std::sin(step * static_cast<double>(i) + p.phase);
  }
  double peak = 0.0;
  for (double s : clip.samples) peak = std::max(peak, std::abs(s));
  const double noise = 2e-3 * (peak > 0 ? peak : 1.0);
  for (auto& s : clip.samples) s += noise * rng.normal();
  return normalize_amplitude(clip);
}

}  // namespace vbp
