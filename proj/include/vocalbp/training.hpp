#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vocalbp/model.hpp"
#include "vocalbp/textcodec.hpp"

namespace vbp {

double mse(std::span<const double> y, std::span<const double> yhat);
double mae(std::span<const double> y, std::span<const double> yhat);
double r2(std::span<const double> y, std::span<const double> yhat);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> d_sbp;
  std::vector<double> d_dbp;
};

/// mse(sbp) + mse(dbp), equally weighted, with its gradient w.r.t. each prediction.
LossAndGrad total_loss(std::span<const double> sbp_pred, std::span<const double> dbp_pred,
                       std::span<const double> sbp_true, std::span<const double> dbp_true);

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam_state(const ModelParams& params);

/// One bias-corrected Adam update; increments state.step before use.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& config);

/// Standardization of SBP / DBP fitted on the training split (population std).
struct TargetScaler {
  double sbp_mean = 0.0, sbp_std = 1.0;
  double dbp_mean = 0.0, dbp_std = 1.0;

  [[nodiscard]] double sbp_to_unit(double v) const { return (v - sbp_mean) / sbp_std; }
  [[nodiscard]] double dbp_to_unit(double v) const { return (v - dbp_mean) / dbp_std; }
  [[nodiscard]] double sbp_from_unit(double v) const { return v * sbp_std + sbp_mean; }
  [[nodiscard]] double dbp_from_unit(double v) const { return v * dbp_std + dbp_mean; }
};

struct TrainExample {
  std::string id;
  TokenSequence tokens;
  double sbp = 0.0;  // mmHg
  double dbp = 0.0;
};

TargetScaler fit_target_scaler(std::span<const TrainExample> train);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  double max_loss = 1e3;  // standardized units; predicting the mean scores 2
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  TrainHistory history;
};

/// Seeded shuffle per epoch, mini-batches (last partial batch kept), train-mode forward,
/// total_loss, backward, Adam. Train loss is the example-weighted running mean over the
/// epoch; validation loss is a full eval-mode pass. Throws Diverged when a batch or validation
/// loss is non-finite or exceeds max_loss.
TrainResult train(ModelParams params, std::span<const TrainExample> train_set, std::span<const TrainExample> val_set,
                  const TargetScaler& scaler, const TrainConfig& config);

/// Eval-mode mean total loss in standardized units.
double dataset_loss(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler);

struct HeadMetrics {
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;  // NaN when the targets have zero variance
};

struct Metrics {
  HeadMetrics sbp;
  HeadMetrics dbp;
  std::size_t n = 0;
};

struct Predictions {
  std::vector<double> sbp;  // mmHg
  std::vector<double> dbp;
};

Predictions predict(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler);
Metrics compute_metrics(std::span<const TrainExample> set, const Predictions& pred);
Metrics evaluate(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Hypertensive is the positive class; predictions go through the same 115/72 rule.
ConfusionCounts confusion_matrix(std::span<const double> pred_sbp, std::span<const double> pred_dbp,
                                 const std::vector<bool>& true_class);

void write_loss_curve_csv(const std::filesystem::path& path, const TrainHistory& history);
TrainHistory read_loss_curve_csv(const std::filesystem::path& path);
nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const ConfusionCounts& c);
nlohmann::json to_json(const TargetScaler& s);
TargetScaler target_scaler_from_json(const nlohmann::json& j);

}  // namespace vbp
