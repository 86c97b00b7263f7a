#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vocalbp/audio_io.hpp"
#include "vocalbp/features.hpp"

namespace vbp {

inline constexpr double kSbpThreshold = 115.0;
inline constexpr double kDbpThreshold = 72.0;

enum class Sex { Female, Male };

struct ParticipantRecord {
  std::string id;
  Sex sex = Sex::Female;
  double age = 0.0;
  double sbp_initial = 0.0;
  double sbp_final = 0.0;
  double dbp_initial = 0.0;
  double dbp_final = 0.0;
  std::optional<double> heart_rate;
  std::vector<std::string> wav_paths;
};

/// Throws OutOfPhysiologicRange if any reading or the age falls outside the accepted ranges.
void validate_record(const ParticipantRecord& record);

/// Threshold predicate alone: SBP > 115 or DBP > 72. Used for model outputs, which need not be physiologic.
bool exceeds_thresholds(double sbp, double dbp);

/// Validated labeling: throws OutOfPhysiologicRange outside SBP [60, 260] / DBP [30, 160].
bool label_hypertension(double sbp, double dbp);

enum class TargetRule { Mean, Initial, Final };

struct BpLabel {
  double sbp = 0.0;
  double dbp = 0.0;
  bool hypertensive = false;
};

struct LabeledExample {
  std::string participant_id;
  FeatureVector features;
  BpLabel label;
};

struct ExampleSet {
  std::vector<std::string> vect_1;  // participant ids
  std::vector<BpLabel> vect_2;      // aligned targets and classes
  std::vector<LabeledExample> examples;
};

BpLabel target_for(const ParticipantRecord& record, TargetRule rule = TargetRule::Mean);

/// Joins each record with the feature row of the same id.
ExampleSet build_examples(const std::vector<ParticipantRecord>& records, const FeatureTable& features,
                          TargetRule rule = TargetRule::Mean);

enum class ScalerKind { MinMax, Standard };
enum class ConstantPolicy { Center, Reject };

struct Scaler {
  ScalerKind kind = ScalerKind::MinMax;
  ConstantPolicy constant_policy = ConstantPolicy::Center;
  std::vector<double> offset;  // min or mean
  std::vector<double> scale;   // (max - min) or std; 0 marks a constant feature

  [[nodiscard]] std::vector<double> transform(const std::vector<double>& row) const;
  [[nodiscard]] std::vector<double> inverse(const std::vector<double>& row) const;
  [[nodiscard]] std::vector<std::vector<double>> transform(const std::vector<std::vector<double>>& rows) const;
};

/// Constant features: MinMax maps them to 0.5; Standard rejects unless constant_policy = Center (maps to 0).
Scaler fit_scaler(const std::vector<std::vector<double>>& train_rows, ScalerKind kind,
                  std::optional<ConstantPolicy> constant_policy = std::nullopt);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded, stratified by class. Per-class test counts use largest-remainder rounding of
/// test_fraction x class size, so the total is round(test_fraction x n).
Split stratified_split(const std::vector<bool>& classes, double test_fraction, std::uint64_t seed);

struct RangeStats {
  double max, min, mean, stddev;
};

struct SexProfile {
  RangeStats sbp;
  RangeStats dbp;
  RangeStats heart_rate;
  RangeStats age;
};

struct CohortProfile {
  SexProfile female;
  SexProfile male;
  double sbp_dbp_coupling = 0.8;
  double reading_jitter_sbp = 3.0;  // std of initial/final spread around the target
  double reading_jitter_dbp = 2.0;
};

/// Cohort statistics of the reference corpus (45 female / 50 male speakers).
CohortProfile default_cohort_profile();

struct CohortMember {
  ParticipantRecord record;
  double f0_hz = 0.0;
  std::vector<Formant> formants;
  std::uint64_t audio_seed = 0;
};

struct VoiceLayout {
  double lead_silence_s = 0.8;
  double vowel_s = 1.2;
  double tail_silence_s = 0.8;
  int sample_rate = 48000;
  double vowel_peak = 0.5;
  double ambient_noise = 5e-4;
};

/// f0 planted as a monotone function of the SBP target, per sex.
double planted_f0(Sex sex, double sbp_target);

std::vector<CohortMember> synthesize_cohort(const CohortProfile& profile, std::size_t n_female,
                                            std::size_t n_male, std::uint64_t seed);

/// Stereo voice recording for one member: silence, sustained vowel, silence.
std::vector<std::vector<double>> render_member_audio(const CohortMember& member, const VoiceLayout& layout = {});

std::vector<std::vector<double>> correlation_matrix(const std::vector<std::vector<double>>& columns);

std::vector<ParticipantRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ParticipantRecord>& records);

}  // namespace vbp
