#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vbp {

using Matrix = std::vector<std::vector<double>>;

struct FeatureWeights {
  std::vector<std::string> names;
  std::vector<double> weights;
  std::size_t k_neighbors = 0;
  std::size_t n_iterations = 0;
};

/// Exhaustive two-class ReliefF: every instance is visited once in index order; k nearest hits and
/// misses under Manhattan distance on range-normalized features, ties broken by lower index.
FeatureWeights relieff_weights(const Matrix& x, const std::vector<bool>& y, std::size_t k,
                               std::vector<std::string> names = {});

struct SelectionPolicy {
  enum class Kind { DropNonPositive, TopK } kind = Kind::DropNonPositive;
  std::size_t k = 0;

  static SelectionPolicy drop_nonpositive() { return {}; }
  static SelectionPolicy top_k(std::size_t k) { return {Kind::TopK, k}; }
};

/// Indices of kept features, ordered by descending weight (ties keep column order).
std::vector<std::size_t> select_feature_indices(const FeatureWeights& weights, SelectionPolicy policy);
std::vector<std::string> select_features(const FeatureWeights& weights, SelectionPolicy policy);

struct SelectionResult {
  std::size_t chosen_k = 0;
  std::size_t folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> k_grid;
  std::vector<double> mean_accuracy;       // aligned with k_grid; NaN when k is infeasible
  std::vector<double> per_fold_accuracy;   // for chosen_k
  FeatureWeights weights;                  // recomputed on all rows with chosen_k
  std::vector<std::string> kept;
  bool fell_back_to_top1 = false;
};

/// Seeded stratified fold assignment (per-class shuffle, round-robin deal).
std::vector<std::size_t> stratified_folds(const std::vector<bool>& y, std::size_t folds, std::uint64_t seed);

/// For each k: weights on each training part, drop non-positive features, score 1-NN on the
/// held-out fold. Picks the k with the highest mean accuracy (ties to the smaller k).
SelectionResult cross_validated_selection(const Matrix& x, const std::vector<bool>& y, std::size_t folds,
                                          std::vector<std::size_t> k_grid, std::uint64_t seed,
                                          std::vector<std::string> names = {});

void write_weights_csv(const std::filesystem::path& path, const SelectionResult& result);
void write_selection_json(const std::filesystem::path& path, const SelectionResult& result);
SelectionResult read_selection_json(const std::filesystem::path& path);

}  // namespace vbp
