#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vocalbp/audio_io.hpp"
#include "vocalbp/dsp.hpp"

namespace vbp {

inline constexpr std::size_t kNumMfcc = 12;
inline constexpr std::size_t kNumMelFilters = 26;
inline constexpr double kPreEmphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

struct SegmentFeatures {
  std::array<double, kNumMfcc> mfcc{};
  double skewness = 0.0;
  double kurtosis = 0.0;
  double poly_area = 0.0;
  double amp_max = 0.0;
  double amp_min = 0.0;
  double zcr = 0.0;
  double energy = 0.0;
  double centroid_hz = 0.0;
  double bandwidth_hz = 0.0;
  double flatness = 0.0;
  double pitch_hz = 0.0;  // 0 = unvoiced
};

enum class FeatureSchema { Base, Extended };

inline constexpr const char* kSchemaBase = "base17";
inline constexpr const char* kSchemaExtended = "extended22";
inline constexpr const char* kSchemaExtendedPitch = "extended23_pitch";

struct FeatureVector {
  std::vector<std::string> names;
  std::vector<double> values;
  std::size_t n_segments = 0;
  std::string schema_id;

  [[nodiscard]] double at(const std::string& name) const;
};

/// Column names for a schema, in layout order.
std::vector<std::string> schema_names(FeatureSchema schema, bool with_pitch = false);

/// HTK-style triangular filters over one-sided bins; rows = filters, cols = bins.
std::vector<std::vector<double>> mel_filterbank(std::size_t n_filters, std::size_t fft_size, int sample_rate);

std::array<double, kNumMfcc> mfcc_12(const Segment& segment);

double skewness(std::span<const double> samples);
double kurtosis(std::span<const double> samples);  // excess
double poly_area(const Segment& segment);

struct Extrema {
  double amp_max;
  double amp_min;
};
Extrema amplitude_extrema(std::span<const double> samples);

double zero_crossing_rate(std::span<const double> samples);
double mean_energy(std::span<const double> samples);

struct SpectralDescriptors {
  double centroid_hz;
  double bandwidth_hz;
  double flatness;
};
SpectralDescriptors spectral_descriptors(const Spectrum& spectrum);

double pitch(const Segment& segment);

SegmentFeatures segment_features(const Segment& segment);

FeatureVector aggregate_recording(std::span<const SegmentFeatures> per_segment, FeatureSchema schema);

struct ExtractionParams {
  FeatureSchema schema = FeatureSchema::Base;
  std::size_t max_segments = kDefaultMaxSegments;
  VoicingConfig voicing{};
};

/// normalize -> voicing -> 50 ms segments -> per-segment features -> mean. Segments from all
/// clips are pooled (in order) under one cap.
FeatureVector extract_features(std::span<const AudioClip> clips, const ExtractionParams& params = {});

struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const;
};

/// Header `id,<names...>`; values printed with 17 significant digits.
void write_feature_csv(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_feature_csv(const std::filesystem::path& path);

}  // namespace vbp
