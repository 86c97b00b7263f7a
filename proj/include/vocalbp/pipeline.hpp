#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vocalbp/dataset.hpp"
#include "vocalbp/error.hpp"
#include "vocalbp/features.hpp"
#include "vocalbp/model.hpp"
#include "vocalbp/training.hpp"

namespace vbp {

enum ExitCode : int {
  kExitOk = 0,
  kExitPartial = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitInsufficient = 4,
  kExitDiverged = 5,
  kExitDegenerate = 6,
};

int exit_code_for(ErrorCode code);

struct SynthSettings {
  std::size_t n_female = 45;
  std::size_t n_male = 50;
  VoiceLayout layout{};
};

struct SelectSettings {
  std::size_t folds = 10;
  std::vector<std::size_t> k_grid{3, 5, 10};
};

struct TokenizerSettings {
  int decimals = 2;
  std::size_t max_len = kMaxSequenceLength;
};

struct TrainSettings {
  TrainConfig train{};
  double test_fraction = 0.2;
  double val_fraction = 0.1;  // of the non-test rows
  TargetRule target_rule = TargetRule::Mean;
  ScalerKind feature_scaler = ScalerKind::MinMax;
};

struct PipelineConfig {
  std::filesystem::path workdir;
  std::filesystem::path manifest;  // empty: <workdir>/manifest.csv
  std::uint64_t seed = 0;
  SynthSettings synth{};
  ExtractionParams extraction{};
  SelectSettings select{};
  TokenizerSettings tokenizer{};
  EncoderConfig encoder{};  // vocab_size and seed are filled in by the train stage
  TrainSettings training{};
  bool emit_svg = true;

  [[nodiscard]] std::filesystem::path manifest_path() const;
};

/// Per-stage seeds, all derived from the one global seed.
enum class Stage : std::uint64_t { Synth = 1, Split = 2, Select = 3, Init = 4, Train = 5 };
std::uint64_t stage_seed(const PipelineConfig& config, Stage stage);

/// Missing keys keep their defaults; unknown keys are rejected (InvalidConfig).
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::filesystem::path& path);

/// Row indices into a manifest-ordered table.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

DataSplit split_rows(const std::vector<bool>& classes, const PipelineConfig& config);

struct PredictInput {
  std::optional<std::filesystem::path> wav;
  std::optional<std::filesystem::path> features_csv;  // rows of a feature table; every row is scored
};

int cmd_synth(const PipelineConfig& config, std::ostream& log);
int cmd_extract(const PipelineConfig& config, std::ostream& log);
int cmd_select(const PipelineConfig& config, std::ostream& log);
int cmd_train(const PipelineConfig& config, std::ostream& log);
int cmd_eval(const PipelineConfig& config, std::ostream& log);
int cmd_predict(const PipelineConfig& config, const PredictInput& input, std::ostream& out, std::ostream& log);
int cmd_report(const PipelineConfig& config, std::ostream& log);

/// Static SVG renderings.
std::string svg_loss_curve(const TrainHistory& history);
std::string svg_heatmap(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& matrix);

}  // namespace vbp
