#include "vocalbp/relieff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vocalbp/error.hpp"
#include "vocalbp/rng.hpp"

namespace vbp {

namespace {

std::vector<double> column_ranges(const Matrix& x, std::size_t d) {
  std::vector<double> lo(d, std::numeric_limits<double>::infinity());
  std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
  for (const auto& row : x) {
    for (std::size_t f = 0; f < d; ++f) {
      lo[f] = std::min(lo[f], row[f]);
      hi[f] = std::max(hi[f], row[f]);
    }
  }
  std::vector<double> range(d);
  for (std::size_t f = 0; f < d; ++f) range[f] = hi[f] - lo[f];
  return range;
}

double diff(double a, double b, double range) { return range > 0.0 ? std::abs(a - b) / range : 0.0; }

double distance(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& range,
                const std::vector<std::size_t>& features) {
  double d = 0.0;
  for (auto f : features) d += diff(a[f], b[f], range[f]);
  return d;
}

std::vector<std::size_t> all_features(std::size_t d) {
  std::vector<std::size_t> f(d);
  std::iota(f.begin(), f.end(), 0);
  return f;
}

std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> n;
  for (std::size_t f = 0; f < d; ++f) n.push_back("f" + std::to_string(f));
  return n;
}

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(x[i]);
  return out;
}

std::vector<bool> take_labels(const std::vector<bool>& y, const std::vector<std::size_t>& idx) {
  std::vector<bool> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

std::array<std::size_t, 2> class_counts(const std::vector<bool>& y) {
  std::array<std::size_t, 2> c{0, 0};
  for (bool v : y) ++c[v ? 1 : 0];
  return c;
}

}  // namespace

FeatureWeights relieff_weights(const Matrix& x, const std::vector<bool>& y, std::size_t k,
                               std::vector<std::string> names) {
  const std::size_t n = x.size();
  if (n == 0 || x.front().empty()) throw Error(ErrorCode::EmptyFeatureSet, "ReliefF needs at least one feature");
  if (y.size() != n) throw Error(ErrorCode::LengthMismatch, "labels and rows differ in count");
  const std::size_t d = x.front().size();
  for (const auto& row : x) {
    if (row.size() != d) throw Error(ErrorCode::ShapeMismatch, "ragged feature matrix");
  }
  const auto counts = class_counts(y);
  const std::size_t smallest = std::min(counts[0], counts[1]);
  if (smallest < 2) throw Error(ErrorCode::ClassTooSmall, "each class needs >= 2 examples");
  if (k < 1 || k > smallest - 1) {
    throw Error(ErrorCode::ClassTooSmall, "k = " + std::to_string(k) + " exceeds smallest class size - 1");
  }
  if (names.empty()) names = default_names(d);
  if (names.size() != d) throw Error(ErrorCode::ShapeMismatch, "names and columns differ in count");

  const auto range = column_ranges(x, d);
  const auto features = all_features(d);
  std::vector<double> hit_sum(d, 0.0);
  std::vector<double> miss_sum(d, 0.0);
  std::vector<std::pair<double, std::size_t>> same, other;
  for (std::size_t i = 0; i < n; ++i) {
    same.clear();
    other.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (y[j] == y[i] ? same : other).emplace_back(distance(x[i], x[j], range, features), j);
    }
    // (distance, index) pairs order ties by lower index.
    std::partial_sort(same.begin(), same.begin() + static_cast<std::ptrdiff_t>(k), same.end());
    std::partial_sort(other.begin(), other.begin() + static_cast<std::ptrdiff_t>(k), other.end());
    // Prior ratio P(C) / (1 - P(class(R))), from integer counts; equals 1 for two classes.
    const std::size_t miss_class = y[i] ? 0 : 1;
    const double prior = static_cast<double>(counts[miss_class]) / static_cast<double>(n - counts[y[i] ? 1 : 0]);
    for (std::size_t t = 0; t < k; ++t) {
      const auto& h = x[same[t].second];
      const auto& m = x[other[t].second];
      for (std::size_t f = 0; f < d; ++f) {
        hit_sum[f] += diff(x[i][f], h[f], range[f]);
        miss_sum[f] += prior * diff(x[i][f], m[f], range[f]);
      }
    }
  }
  FeatureWeights w;
  w.names = std::move(names);
  w.k_neighbors = k;
  w.n_iterations = n;
  w.weights.resize(d);
  const double denom = static_cast<double>(n) * static_cast<double>(k);
  for (std::size_t f = 0; f < d; ++f) w.weights[f] = (miss_sum[f] - hit_sum[f]) / denom;
  return w;
}

std::vector<std::size_t> select_feature_indices(const FeatureWeights& weights, SelectionPolicy policy) {
  std::vector<std::size_t> order(weights.weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights.weights[a] > weights.weights[b]; });
  if (policy.kind == SelectionPolicy::Kind::TopK) {
    order.resize(std::min(policy.k, order.size()));
    return order;
  }
  std::vector<std::size_t> kept;
  for (auto i : order) {
    if (weights.weights[i] > 0.0) kept.push_back(i);
  }
  if (kept.empty()) throw Error(ErrorCode::AllFeaturesDropped, "every feature has non-positive weight");
  return kept;
}

std::vector<std::string> select_features(const FeatureWeights& weights, SelectionPolicy policy) {
  std::vector<std::string> out;
  for (auto i : select_feature_indices(weights, policy)) out.push_back(weights.names[i]);
  return out;
}

std::vector<std::size_t> stratified_folds(const std::vector<bool>& y, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> fold_of(y.size(), 0);
  std::size_t next = 0;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == (c == 1)) members.push_back(i);
    }
    Rng rng(derive_seed(seed, {0xF01DULL, static_cast<std::uint64_t>(c)}));
    rng.shuffle(std::span<std::size_t>(members));
    // Dealing continues where the previous class stopped so fold sizes stay balanced.
    for (auto i : members) fold_of[i] = next++ % folds;
  }
  return fold_of;
}

SelectionResult cross_validated_selection(const Matrix& x, const std::vector<bool>& y, std::size_t folds,
                                          std::vector<std::size_t> k_grid, std::uint64_t seed,
                                          std::vector<std::string> names) {
  if (x.empty() || x.front().empty()) throw Error(ErrorCode::EmptyFeatureSet, "no features to select from");
  if (folds < 2) throw Error(ErrorCode::InvalidConfig, "need >= 2 folds");
  const auto counts = class_counts(y);
  if (counts[0] < folds || counts[1] < folds) {
    throw Error(ErrorCode::ClassTooSmall, "each class needs >= " + std::to_string(folds) + " examples");
  }
  if (k_grid.empty()) throw Error(ErrorCode::InvalidConfig, "empty k grid");
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
  const std::size_t d = x.front().size();
  if (names.empty()) names = default_names(d);

  const auto fold_of = stratified_folds(y, folds, seed);
  SelectionResult res;
  res.folds = folds;
  res.seed = seed;
  res.k_grid = k_grid;

  double best = -1.0;
  for (auto k : k_grid) {
    std::vector<double> acc;
    bool feasible = true;
    for (std::size_t f = 0; f < folds && feasible; ++f) {
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == f ? te : tr).push_back(i);
      const auto xtr = take_rows(x, tr);
      const auto ytr = take_labels(y, tr);
      const auto c = class_counts(ytr);
      if (k < 1 || k + 1 > std::min(c[0], c[1])) {
        feasible = false;
        break;
      }
      const auto w = relieff_weights(xtr, ytr, k, names);
      std::vector<std::size_t> kept;
      try {
        kept = select_feature_indices(w, SelectionPolicy::drop_nonpositive());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::AllFeaturesDropped) throw;
        kept = select_feature_indices(w, SelectionPolicy::top_k(1));
      }
      const auto range = column_ranges(xtr, d);
      std::size_t correct = 0;
      for (auto i : te) {
        double best_d = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t t = 0; t < tr.size(); ++t) {
          const double dist = distance(x[i], xtr[t], range, kept);
          if (dist < best_d) {
            best_d = dist;
            best_j = t;
          }
        }
        if (ytr[best_j] == y[i]) ++correct;
      }
      acc.push_back(static_cast<double>(correct) / static_cast<double>(te.size()));
    }
    if (!feasible) {
      res.mean_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    res.mean_accuracy.push_back(mean);
    if (mean > best) {
      best = mean;
      res.chosen_k = k;
      res.per_fold_accuracy = acc;
    }
  }
  if (best < 0.0) throw Error(ErrorCode::ClassTooSmall, "no k in the grid fits the class sizes");

  res.weights = relieff_weights(x, y, res.chosen_k, names);
  try {
    res.kept = select_features(res.weights, SelectionPolicy::drop_nonpositive());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllFeaturesDropped) throw;
    res.kept = select_features(res.weights, SelectionPolicy::top_k(1));
    res.fell_back_to_top1 = true;
  }
  return res;
}

void write_weights_csv(const std::filesystem::path& path, const SelectionResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "feature,weight,kept\n";
  for (std::size_t f = 0; f < result.weights.names.size(); ++f) {
    const auto& name = result.weights.names[f];
    const bool kept = std::find(result.kept.begin(), result.kept.end(), name) != result.kept.end();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", result.weights.weights[f]);
    out << name << ',' << buf << ',' << (kept ? 1 : 0) << '\n';
  }
}

void write_selection_json(const std::filesystem::path& path, const SelectionResult& r) {
  nlohmann::json j;
  j["chosen_k"] = r.chosen_k;
  j["folds"] = r.folds;
  j["seed"] = r.seed;
  j["k_grid"] = r.k_grid;
  nlohmann::json mean = nlohmann::json::array();
  for (double m : r.mean_accuracy) mean.push_back(std::isnan(m) ? nlohmann::json(nullptr) : nlohmann::json(m));
  j["mean_accuracy"] = mean;
  j["per_fold_accuracy"] = r.per_fold_accuracy;
  j["kept"] = r.kept;
  j["fell_back_to_top1"] = r.fell_back_to_top1;
  j["weights"] = nlohmann::json::object();
  for (std::size_t f = 0; f < r.weights.names.size(); ++f) j["weights"][r.weights.names[f]] = r.weights.weights[f];
  j["feature_order"] = r.weights.names;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

SelectionResult read_selection_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  SelectionResult r;
  r.chosen_k = j.at("chosen_k").get<std::size_t>();
  r.folds = j.at("folds").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.k_grid = j.at("k_grid").get<std::vector<std::size_t>>();
  for (const auto& m : j.at("mean_accuracy")) {
    r.mean_accuracy.push_back(m.is_null() ? std::numeric_limits<double>::quiet_NaN() : m.get<double>());
  }
  r.per_fold_accuracy = j.at("per_fold_accuracy").get<std::vector<double>>();
  r.kept = j.at("kept").get<std::vector<std::string>>();
  r.fell_back_to_top1 = j.value("fell_back_to_top1", false);
  r.weights.names = j.at("feature_order").get<std::vector<std::string>>();
  for (const auto& n : r.weights.names) r.weights.weights.push_back(j.at("weights").at(n).get<double>());
  r.weights.k_neighbors = r.chosen_k;
  return r;
}

}  // namespace vbp
