#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vocalbp/textcodec.hpp"

namespace vbp {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t max_len = kMaxSequenceLength;
  double dropout_p = 0.1;
  double layernorm_epsilon = 1e-5;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t head_dim() const { return hidden_dim / n_heads; }
  void validate() const;  // throws InvalidConfig

  /// L=12, H=768, A=12, ff=3072: constructible for shape checks, far too slow to train here.
  static EncoderConfig bert_base(std::size_t vocab_size);
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

struct NamedArray {
  std::string name;
  Mat value;
};

/// Arrays in a fixed layout order:
///   token_embedding, position_embedding,
///   layer{l}.{q,k,v,o}.{w,b}, layer{l}.ln1.{gain,bias}, layer{l}.ff1.{w,b}, layer{l}.ff2.{w,b},
///   layer{l}.ln2.{gain,bias}, pooler.{w,b}, sbp_head.{w,b}, dbp_head.{w,b}
/// Weights are stored input-major (x * W); biases are 1 x n rows.
struct ModelParams {
  EncoderConfig config;
  std::vector<NamedArray> arrays;

  [[nodiscard]] std::size_t index_of(const std::string& name) const;
  [[nodiscard]] const Mat& get(const std::string& name) const { return arrays[index_of(name)].value; }
  [[nodiscard]] std::size_t parameter_count() const;
};

/// Expected (name, rows, cols) for every array implied by a config.
std::vector<std::tuple<std::string, std::size_t, std::size_t>> param_layout(const EncoderConfig& config);

/// Same layout as ModelParams, all zeros.
ModelParams zeros_like(const ModelParams& params);

ModelParams init_params(const EncoderConfig& config);

enum class Mode { Train, Eval };

struct LayerCache {
  Mat input, q, k, v;
  std::vector<Mat> probs;  // per head, T x T
  Mat context;
  Mat xhat1;
  Eigen::VectorXd inv_std1;
  Mat y1, ff_pre, ff_act;
  Mat xhat2;
  Eigen::VectorXd inv_std2;
  Mat output;
};

struct ExampleCache {
  std::vector<int> ids;      // first `positions` ids
  std::vector<double> mask;  // first `positions` mask values
  std::vector<LayerCache> layers;
  RowVec pooled;
  RowVec dropout_scale;      // 0 or 1/(1-p) per unit
};

struct ForwardOutput {
  std::vector<double> sbp;
  std::vector<double> dbp;
  std::vector<RowVec> pooled;
  std::optional<std::vector<ExampleCache>> cache;  // present iff train mode
};

/// Positions from the last attended one onward are never read by position 0 (their keys are
/// masked at every layer), so the encoder runs on the prefix ending at the last mask = 1 entry.
ForwardOutput forward(const ModelParams& params, std::span<const TokenSequence> batch, Mode mode,
                      std::uint64_t dropout_seed = 0);

/// Gradients of a scalar loss given dL/d(sbp_pred) and dL/d(dbp_pred) per example.
ModelParams backward(const ModelParams& params, const ForwardOutput& out, std::span<const double> d_sbp,
                     std::span<const double> d_dbp);

/// Adam first/second moments, same layout as the parameters.
struct AdamState {
  ModelParams m;
  ModelParams v;
  std::size_t step = 0;
};

inline constexpr int kWeightFormatVersion = 1;

void save_params(const std::filesystem::path& path, const ModelParams& params,
                 const AdamState* adam = nullptr);
ModelParams load_params(const std::filesystem::path& path, AdamState* adam = nullptr);

/// FNV-1a over the little-endian float64 payload.
std::uint64_t params_checksum(const ModelParams& params);

}  // namespace vbp
