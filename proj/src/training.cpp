#include "vocalbp/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "vocalbp/dataset.hpp"
#include "vocalbp/error.hpp"
#include "vocalbp/rng.hpp"

namespace vbp {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorCode::LengthMismatch, "targets and predictions differ in length");
  if (y.empty()) throw Error(ErrorCode::Empty, "metric of an empty set");
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

double mae(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  if (y.size() < 2) throw Error(ErrorCode::TooFewSamples, "R2 needs >= 2 values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double rss = 0.0, tss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    rss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    tss += (y[i] - mean) * (y[i] - mean);
  }
  if (!(tss > 0.0)) throw Error(ErrorCode::ZeroVariance, "R2 undefined for constant targets");
  return 1.0 - rss / tss;
}

LossAndGrad total_loss(std::span<const double> sbp_pred, std::span<const double> dbp_pred,
                       std::span<const double> sbp_true, std::span<const double> dbp_true) {
  const std::size_t n = sbp_pred.size();
  if (dbp_pred.size() != n || sbp_true.size() != n || dbp_true.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "loss inputs are not batch-aligned");
  }
  LossAndGrad out;
  out.loss = mse(sbp_true, sbp_pred) + mse(dbp_true, dbp_pred);
  out.d_sbp.resize(n);
  out.d_dbp.resize(n);
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_sbp[i] = scale * (sbp_pred[i] - sbp_true[i]);
    out.d_dbp[i] = scale * (dbp_pred[i] - dbp_true[i]);
  }
  return out;
}

AdamState make_adam_state(const ModelParams& params) { return {zeros_like(params), zeros_like(params), 0}; }

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& config) {
  const std::size_t n = params.arrays.size();
  if (grads.arrays.size() != n || state.m.arrays.size() != n || state.v.arrays.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "parameter, gradient and moment layouts differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = grads.arrays[i].value;
    if (g.rows() != params.arrays[i].value.rows() || g.cols() != params.arrays[i].value.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient shape differs for " + params.arrays[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = params.arrays[i].value;
    auto& m = state.m.arrays[i].value;
    auto& v = state.v.arrays[i].value;
    const auto& g = grads.arrays[i].value;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    p.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
  }
}

TargetScaler fit_target_scaler(std::span<const TrainExample> train) {
  if (train.size() < 2) throw Error(ErrorCode::EmptyDataset, "target scaler needs >= 2 training examples");
  std::vector<std::vector<double>> rows;
  for (const auto& e : train) rows.push_back({e.sbp, e.dbp});
  const auto s = fit_scaler(rows, ScalerKind::Standard);
  return {s.offset[0], s.scale[0], s.offset[1], s.scale[1]};
}

namespace {

struct Targets {
  std::vector<double> sbp, dbp;
};

Targets unit_targets(std::span<const TrainExample> set, const std::vector<std::size_t>& idx, const TargetScaler& s) {
  Targets t;
  for (auto i : idx) {
    t.sbp.push_back(s.sbp_to_unit(set[i].sbp));
    t.dbp.push_back(s.dbp_to_unit(set[i].dbp));
  }
  return t;
}

std::vector<TokenSequence> gather(std::span<const TrainExample> set, const std::vector<std::size_t>& idx) {
  std::vector<TokenSequence> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(set[i].tokens);
  return out;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

double dataset_loss(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler) {
  if (set.empty()) throw Error(ErrorCode::EmptyDataset, "loss of an empty set");
  const auto idx = iota_n(set.size());
  const auto seqs = gather(set, idx);
  const auto out = forward(params, seqs, Mode::Eval);
  const auto t = unit_targets(set, idx, scaler);
  return mse(t.sbp, out.sbp) + mse(t.dbp, out.dbp);
}

TrainResult train(ModelParams params, std::span<const TrainExample> train_set, std::span<const TrainExample> val_set,
                  const TargetScaler& scaler, const TrainConfig& config) {
  if (config.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(config.adam.learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be positive");
  if (train_set.empty()) throw Error(ErrorCode::EmptyDataset, "empty training set");
  if (!(config.max_loss > 0.0)) throw Error(ErrorCode::InvalidConfig, "max_loss must be positive");

  TrainResult res;
  res.adam = make_adam_state(params);
  auto order = iota_n(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {0xE70CULL, epoch}));
    std::sort(order.begin(), order.end());
    rng.shuffle(std::span<std::size_t>(order));
    double weighted = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
      const auto seqs = gather(train_set, idx);
      const auto t = unit_targets(train_set, idx, scaler);
      const auto out = forward(params, seqs, Mode::Train, derive_seed(config.seed, {0xD50FULL, epoch, batch_index}));
      const auto lg = total_loss(out.sbp, out.dbp, t.sbp, t.dbp);
      if (!std::isfinite(lg.loss) || lg.loss > config.max_loss) {
        throw Error(ErrorCode::Diverged, "loss became " + std::to_string(lg.loss) + " at epoch " + std::to_string(epoch));
      }
      const auto grads = backward(params, out, lg.d_sbp, lg.d_dbp);
      adam_step(params, grads, res.adam, config.adam);
      weighted += lg.loss * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(train_set.size());
    rec.val_loss = val_set.empty() ? std::numeric_limits<double>::quiet_NaN() : dataset_loss(params, val_set, scaler);
    if (!val_set.empty() && (!std::isfinite(rec.val_loss) || rec.val_loss > config.max_loss)) {
      throw Error(ErrorCode::Diverged, "validation loss became " + std::to_string(rec.val_loss) + " at epoch " + std::to_string(epoch));
    }
    res.history.epochs.push_back(rec);
  }
  res.params = std::move(params);
  return res;
}

Predictions predict(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler) {
  if (set.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to predict");
  const auto seqs = gather(set, iota_n(set.size()));
  const auto out = forward(params, seqs, Mode::Eval);
  Predictions p;
  for (std::size_t i = 0; i < set.size(); ++i) {
    p.sbp.push_back(scaler.sbp_from_unit(out.sbp[i]));
    p.dbp.push_back(scaler.dbp_from_unit(out.dbp[i]));
  }
  return p;
}

Metrics compute_metrics(std::span<const TrainExample> set, const Predictions& pred) {
  if (set.empty()) throw Error(ErrorCode::EmptyDataset, "no examples to score");
  std::vector<double> ys, yd;
  for (const auto& e : set) {
    ys.push_back(e.sbp);
    yd.push_back(e.dbp);
  }
  const auto head = [](const std::vector<double>& y, const std::vector<double>& yhat) {
    HeadMetrics h;
    h.mae = mae(y, yhat);
    h.mse = mse(y, yhat);
    try {
      h.r2 = r2(y, yhat);
    } catch (const Error&) {
      h.r2 = std::numeric_limits<double>::quiet_NaN();
    }
    return h;
  };
  Metrics m;
  m.sbp = head(ys, pred.sbp);
  m.dbp = head(yd, pred.dbp);
  m.n = set.size();
  return m;
}

Metrics evaluate(const ModelParams& params, std::span<const TrainExample> set, const TargetScaler& scaler) {
  return compute_metrics(set, predict(params, set, scaler));
}

ConfusionCounts confusion_matrix(std::span<const double> pred_sbp, std::span<const double> pred_dbp,
                                 const std::vector<bool>& true_class) {
  if (pred_sbp.size() != pred_dbp.size() || pred_sbp.size() != true_class.size()) {
    throw Error(ErrorCode::LengthMismatch, "confusion inputs are not aligned");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < true_class.size(); ++i) {
    const bool pred = exceeds_thresholds(pred_sbp[i], pred_dbp[i]);
    if (pred && true_class[i]) ++c.tp;
    else if (pred && !true_class[i]) ++c.fp;
    else if (!pred && true_class[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

void write_loss_curve_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
    out << buf;
  }
}

TrainHistory read_loss_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read " + path.string());
  TrainHistory h;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    h.epochs.push_back({std::stoul(a), std::stod(b), std::stod(c)});
  }
  return h;
}

nlohmann::json to_json(const Metrics& m) {
  const auto head = [](const HeadMetrics& h) {
    return nlohmann::json{{"mae", h.mae}, {"mse", h.mse}, {"r2", finite_or_null(h.r2)}};
  };
  return {{"n", m.n}, {"sbp", head(m.sbp)}, {"dbp", head(m.dbp)}, {"units", {{"mae", "mmHg"}, {"mse", "mmHg^2"}}}};
}

nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"positive_class", "hypertensive"}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

nlohmann::json to_json(const TargetScaler& s) {
  return {{"sbp_mean", s.sbp_mean}, {"sbp_std", s.sbp_std}, {"dbp_mean", s.dbp_mean}, {"dbp_std", s.dbp_std}};
}

TargetScaler target_scaler_from_json(const nlohmann::json& j) {
  return {j.at("sbp_mean").get<double>(), j.at("sbp_std").get<double>(), j.at("dbp_mean").get<double>(),
          j.at("dbp_std").get<double>()};
}

}  // namespace vbp
