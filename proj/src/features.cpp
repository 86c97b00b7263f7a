#include "vocalbp/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vocalbp/error.hpp"

namespace vbp {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct Moments {
  double m2, m3, m4;
};

Moments central_moments(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  Moments m{0, 0, 0};
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  return m;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double FeatureVector::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  throw Error(ErrorCode::MissingFeatures, "no feature named " + name);
}

std::vector<std::string> schema_names(FeatureSchema schema, bool with_pitch) {
  std::vector<std::string> names;
  for (std::size_t i = 1; i <= kNumMfcc; ++i) names.push_back("mfcc" + std::to_string(i));
  names.insert(names.end(), {"skewness", "kurtosis", "poly_area", "amp_max", "amp_min"});
  if (schema == FeatureSchema::Extended) {
    names.insert(names.end(), {"zcr", "energy", "centroid_hz", "bandwidth_hz", "flatness"});
    if (with_pitch) names.emplace_back("pitch_hz");
  }
  return names;
}

std::vector<std::vector<double>> mel_filterbank(std::size_t n_filters, std::size_t fft_size, int sample_rate) {
  const std::size_t n_bins = fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_size);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_filters + 1));
  }
  std::vector<std::vector<double>> bank(n_filters, std::vector<double>(n_bins, 0.0));
  for (std::size_t j = 0; j < n_filters; ++j) {
    const double lo = edges[j], mid = edges[j + 1], hi = edges[j + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      if (f > lo && f <= mid) {
        bank[j][k] = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        bank[j][k] = (hi - f) / (hi - mid);
      }
    }
  }
  return bank;
}

std::array<double, kNumMfcc> mfcc_12(const Segment& segment) {
  const std::size_t n = segment.samples.size();
  if (n != segment_length(segment.sample_rate) || n < 2) {
    throw Error(ErrorCode::WrongFrameLength, "MFCC expects a 50 ms segment");
  }
  const auto window = gaussian_window(n);
  std::vector<double> frame(n);
  frame[0] = segment.samples[0] * window[0];
  for (std::size_t i = 1; i < n; ++i) {
    frame[i] = (segment.samples[i] - kPreEmphasis * segment.samples[i - 1]) * window[i];
  }
  const auto spec = fft_magnitude(frame, segment.sample_rate);
  // Filterbanks are cached per (fft size, rate); segments of one corpus share them.
  thread_local std::size_t cached_n = 0;
  thread_local int cached_rate = 0;
  thread_local std::vector<std::vector<double>> bank;
  if (cached_n != spec.fft_size || cached_rate != segment.sample_rate) {
    bank = mel_filterbank(kNumMelFilters, spec.fft_size, segment.sample_rate);
    cached_n = spec.fft_size;
    cached_rate = segment.sample_rate;
  }
  std::array<double, kNumMelFilters> log_energy{};
  for (std::size_t j = 0; j < kNumMelFilters; ++j) {
    double e = 0.0;
    for (std::size_t k = 0; k < spec.magnitudes.size(); ++k) e += bank[j][k] * spec.magnitudes[k];
    log_energy[j] = std::log(std::max(e, kLogFloor));
  }
  std::array<double, kNumMfcc> out{};
  const double m = static_cast<double>(kNumMelFilters);
  const double scale = std::sqrt(2.0 / m);
  for (std::size_t c = 1; c <= kNumMfcc; ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kNumMelFilters; ++j) {
      acc += log_energy[j] * std::cos(std::numbers::pi * static_cast<double>(c) * (static_cast<double>(j) + 0.5) / m);
    }
    out[c - 1] = scale * acc;
  }
  return out;
}

double skewness(std::span<const double> samples) {
  if (samples.size() < 3) throw Error(ErrorCode::TooFewSamples, "skewness needs >= 3 samples");
  const auto m = central_moments(samples);
  if (!(m.m2 > 0.0)) throw Error(ErrorCode::ZeroVariance, "skewness of constant data");
  return m.m3 / std::pow(m.m2, 1.5);
}

double kurtosis(std::span<const double> samples) {
  if (samples.size() < 4) throw Error(ErrorCode::TooFewSamples, "kurtosis needs >= 4 samples");
  const auto m = central_moments(samples);
  if (!(m.m2 > 0.0)) throw Error(ErrorCode::ZeroVariance, "kurtosis of constant data");
  return m.m4 / (m.m2 * m.m2) - 3.0;
}

double poly_area(const Segment& segment) {
  const auto& x = segment.samples;
  if (x.size() < 2) throw Error(ErrorCode::TooFewSamples, "area needs >= 2 samples");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) acc += 0.5 * (std::abs(x[i]) + std::abs(x[i + 1]));
  return acc / static_cast<double>(segment.sample_rate);
}

Extrema amplitude_extrema(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyFrame, "extrema of an empty segment");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  return {*hi, *lo};
}

double zero_crossing_rate(std::span<const double> samples) {
  if (samples.size() < 2) throw Error(ErrorCode::TooFewSamples, "ZCR needs >= 2 samples");
  std::size_t crossings = 0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    if ((samples[i] >= 0.0) != (samples[i + 1] >= 0.0)) ++crossings;
  }
  return static_cast<double>(crossings) / static_cast<double>(samples.size() - 1);
}

double mean_energy(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyFrame, "energy of an empty segment");
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return acc / static_cast<double>(samples.size());
}

SpectralDescriptors spectral_descriptors(const Spectrum& spectrum) {
  const auto& m = spectrum.magnitudes;
  double total = 0.0;
  for (double v : m) total += v;
  if (!(total > 0.0)) throw Error(ErrorCode::DegenerateSpectrum, "all magnitudes are zero");
  double centroid = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) centroid += spectrum.frequency(k) * m[k];
  centroid /= total;
  double spread = 0.0;
  double log_sum = 0.0;
  double floored_sum = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double d = spectrum.frequency(k) - centroid;
    spread += d * d * m[k];
    const double f = std::max(m[k], 1e-12);
    log_sum += std::log(f);
    floored_sum += f;
  }
  const double count = static_cast<double>(m.size());
  const double flatness = std::exp(log_sum / count) / (floored_sum / count);
  return {centroid, std::sqrt(spread / total), std::clamp(flatness, 0.0, 1.0)};
}

double pitch(const Segment& segment) {
  const auto& x = segment.samples;
  const int sr = segment.sample_rate;
  if (sr <= 0 || x.size() < 4) return 0.0;
  const auto lag_lo = static_cast<std::size_t>(std::floor(sr / 400.0));
  const auto lag_hi = std::min(static_cast<std::size_t>(std::ceil(sr / 60.0)), x.size() / 2);
  if (lag_lo < 1 || lag_hi <= lag_lo + 1) return 0.0;

  std::vector<double> r(lag_hi + 2, 0.0);
  double best = 0.0;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
  for (std::size_t lag = lag_lo - 1; lag <= lag_hi + 1 && lag < x.size(); ++lag) {
    const std::size_t overlap = x.size() - lag;
    double num = 0.0;
    for (std::size_t i = 0; i < overlap; ++i) num += x[i] * x[i + lag];
    const double e0 = prefix[overlap];
    const double e1 = prefix[x.size()] - prefix[lag];
    const double den = std::sqrt(e0 * e1);
    r[lag] = den > 0.0 ? num / den : 0.0;
    if (lag >= lag_lo && lag <= lag_hi) best = std::max(best, r[lag]);
  }
  if (best < 0.3) return 0.0;
  // Shortest-lag local maximum close to the best one; guards against picking 2T or 3T.
  for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag) {
    const bool local = r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1];
    if (local && r[lag] >= 0.9 * best) return static_cast<double>(sr) / static_cast<double>(lag);
  }
  return 0.0;
}

SegmentFeatures segment_features(const Segment& segment) {
  SegmentFeatures f;
  f.mfcc = mfcc_12(segment);
  const auto& x = segment.samples;
  // Constant segments (digital silence) carry no shape information; moments are reported as 0.
  try {
    f.skewness = skewness(x);
    f.kurtosis = kurtosis(x);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroVariance) throw;
    f.skewness = 0.0;
    f.kurtosis = 0.0;
  }
  f.poly_area = poly_area(segment);
  const auto ex = amplitude_extrema(x);
  f.amp_max = ex.amp_max;
  f.amp_min = ex.amp_min;
  f.zcr = zero_crossing_rate(x);
  f.energy = mean_energy(x);

  const auto window = gaussian_window(x.size());
  std::vector<double> frame(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) frame[i] = x[i] * window[i];
  const auto spec = fft_magnitude(frame, segment.sample_rate);
  try {
    const auto d = spectral_descriptors(spec);
    f.centroid_hz = d.centroid_hz;
    f.bandwidth_hz = d.bandwidth_hz;
    f.flatness = d.flatness;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateSpectrum) throw;
  }
  f.pitch_hz = pitch(segment);
  return f;
}

FeatureVector aggregate_recording(std::span<const SegmentFeatures> per_segment, FeatureSchema schema) {
  if (per_segment.empty()) throw Error(ErrorCode::NoSegments, "no segments to aggregate");
  const double n = static_cast<double>(per_segment.size());

  std::size_t voiced = 0;
  double pitch_sum = 0.0;
  for (const auto& s : per_segment) {
    if (s.pitch_hz > 0.0) {
      ++voiced;
      pitch_sum += s.pitch_hz;
    }
  }
  const bool with_pitch = schema == FeatureSchema::Extended && 2 * voiced >= per_segment.size();

  FeatureVector v;
  v.names = schema_names(schema, with_pitch);
  v.n_segments = per_segment.size();
  v.schema_id = schema == FeatureSchema::Base ? kSchemaBase : (with_pitch ? kSchemaExtendedPitch : kSchemaExtended);
  v.values.assign(v.names.size(), 0.0);

  for (const auto& s : per_segment) {
    std::size_t i = 0;
    for (double c : s.mfcc) v.values[i++] += c;
    for (double x : {s.skewness, s.kurtosis, s.poly_area, s.amp_max, s.amp_min}) v.values[i++] += x;
    if (schema == FeatureSchema::Extended) {
      for (double x : {s.zcr, s.energy, s.centroid_hz, s.bandwidth_hz, s.flatness}) v.values[i++] += x;
    }
  }
  const std::size_t mean_slots = with_pitch ? v.values.size() - 1 : v.values.size();
  for (std::size_t i = 0; i < mean_slots; ++i) v.values[i] /= n;
  if (with_pitch) v.values.back() = pitch_sum / static_cast<double>(voiced);
  return v;
}

FeatureVector extract_features(std::span<const AudioClip> clips, const ExtractionParams& params) {
  std::vector<SegmentFeatures> per_segment;
  for (const auto& raw : clips) {
    if (per_segment.size() >= params.max_segments) break;
    const auto clip = normalize_amplitude(raw);
    const auto regions = detect_voiced_regions(clip, params.voicing);
    const auto segments = segment_regions(clip, regions, params.max_segments - per_segment.size());
    for (const auto& seg : segments) per_segment.push_back(segment_features(seg));
  }
  if (per_segment.empty()) throw Error(ErrorCode::NoSegments, "no voiced audio found");
  return aggregate_recording(per_segment, params.schema);
}

std::size_t FeatureTable::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::MissingFeatures, "no feature column " + name);
  return static_cast<std::size_t>(it - names.begin());
}

void write_feature_csv(const std::filesystem::path& path, const FeatureTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "id";
  for (const auto& n : table.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.ids[r];
    for (double v : table.rows[r]) out << ',' << fmt17(v);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read " + path.string());
  FeatureTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingFeatures, "empty feature file");
  {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    if (cell != "id") throw Error(ErrorCode::MissingFeatures, "feature CSV must start with an id column");
    while (std::getline(ss, cell, ',')) t.names.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    t.ids.push_back(cell);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != t.names.size()) {
      throw Error(ErrorCode::MissingFeatures, "row " + t.ids.back() + " has wrong column count");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace vbp
