#include "vocalbp/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "vocalbp/error.hpp"
#include "vocalbp/rng.hpp"

namespace vbp {

static_assert(std::endian::native == std::endian::little, "weight container assumes a little-endian host");

namespace {

constexpr double kMaskedLogit = -1e9;
constexpr double kInitStd = 0.02;
constexpr char kMagic[8] = {'V', 'B', 'P', 'W', 'E', 'I', 'G', 'H'};

// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LayerRefs {
  std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
};

constexpr std::size_t kArraysPerLayer = 16;

LayerRefs layer_refs(std::size_t l) {
  const std::size_t b = 2 + l * kArraysPerLayer;
  return {b, b + 1, b + 2, b + 3, b + 4, b + 5, b + 6, b + 7, b + 8, b + 9, b + 10, b + 11, b + 12, b + 13, b + 14, b + 15};
}

struct HeadRefs {
  std::size_t pooler_w, pooler_b, sbp_w, sbp_b, dbp_w, dbp_b;
};

HeadRefs head_refs(const EncoderConfig& c) {
  const std::size_t b = 2 + c.n_layers * kArraysPerLayer;
  return {b, b + 1, b + 2, b + 3, b + 4, b + 5};
}

void layer_norm(const Mat& x, const RowVec& gain, const RowVec& bias, double eps, Mat& xhat, Eigen::VectorXd& inv_std,
                Mat& y) {
  const auto t = x.rows();
  const double h = static_cast<double>(x.cols());
  xhat.resize(t, x.cols());
  inv_std.resize(t);
  for (Eigen::Index r = 0; r < t; ++r) {
    const double mean = x.row(r).sum() / h;
    const double var = (x.row(r).array() - mean).square().sum() / h;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& inv_std, const RowVec& gain, Mat& d_gain,
                        Mat& d_bias) {
  d_gain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias.row(0) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.array();
  const double h = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / h;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / h;
    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

RowVec row_of(const Mat& m) { return m.row(0); }

double truncated_normal(Rng& rng, double stddev) {
  double z = rng.normal();
  while (std::abs(z) > 2.0) z = rng.normal();
  return z * stddev;
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void EncoderConfig::validate() const {
  const auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (hidden_dim < 1 || n_heads < 1 || hidden_dim % n_heads != 0) bad("hidden_dim must be divisible by n_heads");
  if (n_layers < 1) bad("need at least one encoder layer");
  if (ff_dim < 1) bad("ff_dim must be >= 1");
  if (max_len < 2 || max_len > kMaxSequenceLength) bad("max_len must lie in [2, 512]");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) bad("dropout_p must lie in [0, 1)");
  if (!(layernorm_epsilon > 0.0)) bad("layernorm_epsilon must be positive");
}

EncoderConfig EncoderConfig::bert_base(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = 768;
  c.n_layers = 12;
  c.n_heads = 12;
  c.ff_dim = 3072;
  return c;
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"ff_dim", c.ff_dim},         {"max_len", c.max_len},
          {"dropout_p", c.dropout_p},   {"layernorm_epsilon", c.layernorm_epsilon}, {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.layernorm_epsilon = j.value("layernorm_epsilon", c.layernorm_epsilon);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].name == name) return i;
  }
  throw Error(ErrorCode::ShapeMismatch, "no parameter array named " + name);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays) n += static_cast<std::size_t>(a.value.size());
  return n;
}

std::vector<std::tuple<std::string, std::size_t, std::size_t>> param_layout(const EncoderConfig& c) {
  const std::size_t h = c.hidden_dim, f = c.ff_dim;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> out;
  out.emplace_back("token_embedding", c.vocab_size, h);
  out.emplace_back("position_embedding", c.max_len, h);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.emplace_back(p + proj + ".w", h, h);
      out.emplace_back(p + proj + ".b", 1, h);
    }
    out.emplace_back(p + "ln1.gain", 1, h);
    out.emplace_back(p + "ln1.bias", 1, h);
    out.emplace_back(p + "ff1.w", h, f);
    out.emplace_back(p + "ff1.b", 1, f);
    out.emplace_back(p + "ff2.w", f, h);
    out.emplace_back(p + "ff2.b", 1, h);
    out.emplace_back(p + "ln2.gain", 1, h);
    out.emplace_back(p + "ln2.bias", 1, h);
  }
  out.emplace_back("pooler.w", h, h);
  out.emplace_back("pooler.b", 1, h);
  out.emplace_back("sbp_head.w", h, 1);
  out.emplace_back("sbp_head.b", 1, 1);
  out.emplace_back("dbp_head.w", h, 1);
  out.emplace_back("dbp_head.b", 1, 1);
  return out;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  z.config = params.config;
  z.arrays.reserve(params.arrays.size());
  for (const auto& a : params.arrays) z.arrays.push_back({a.name, Mat::Zero(a.value.rows(), a.value.cols())});
  return z;
}

ModelParams init_params(const EncoderConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(derive_seed(config.seed, {0x1417ULL}));
  for (const auto& [name, rows, cols] : param_layout(config)) {
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".b") || name.ends_with(".bias");
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = is_gain ? 1.0 : (is_bias ? 0.0 : truncated_normal(rng, kInitStd));
    }
    p.arrays.push_back({name, std::move(m)});
  }
  return p;
}

ForwardOutput forward(const ModelParams& params, std::span<const TokenSequence> batch, Mode mode,
                      std::uint64_t dropout_seed) {
  const auto& c = params.config;
  const auto& A = params.arrays;
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto hr = head_refs(c);

  ForwardOutput out;
  if (mode == Mode::Train) out.cache.emplace();
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& seq = batch[e];
    if (seq.input_ids.size() > c.max_len) throw Error(ErrorCode::LengthExceedsMax, "sequence longer than max_len");
    if (seq.attention_mask.size() != seq.input_ids.size()) throw Error(ErrorCode::InvalidSequence, "mask length differs");
    std::size_t positions = 1;
    for (std::size_t i = 0; i < seq.attention_mask.size(); ++i) {
      if (seq.attention_mask[i] != 0) positions = i + 1;
    }
    for (std::size_t i = 0; i < positions; ++i) {
      if (seq.input_ids[i] < 0 || static_cast<std::size_t>(seq.input_ids[i]) >= c.vocab_size) {
        throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(seq.input_ids[i]) + " >= vocab_size");
      }
    }
    const auto t = static_cast<Eigen::Index>(positions);

    ExampleCache ec;
    ec.ids.assign(seq.input_ids.begin(), seq.input_ids.begin() + t);
    ec.mask.resize(positions);
    RowVec key_bias(t);
    for (Eigen::Index i = 0; i < t; ++i) {
      ec.mask[static_cast<std::size_t>(i)] = seq.attention_mask[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;
      key_bias(i) = seq.attention_mask[static_cast<std::size_t>(i)] != 0 ? 0.0 : kMaskedLogit;
    }

    Mat x(t, static_cast<Eigen::Index>(c.hidden_dim));
    for (Eigen::Index i = 0; i < t; ++i) x.row(i) = A[0].value.row(ec.ids[static_cast<std::size_t>(i)]) + A[1].value.row(i);

    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto r = layer_refs(l);
      LayerCache lc;
      lc.input = x;
      lc.q = (x * A[r.q_w].value).rowwise() + row_of(A[r.q_b].value);
      lc.k = (x * A[r.k_w].value).rowwise() + row_of(A[r.k_b].value);
      lc.v = (x * A[r.v_w].value).rowwise() + row_of(A[r.v_b].value);
      lc.context.resize(t, x.cols());
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * hd;
        Mat s = (lc.q.middleCols(c0, hd) * lc.k.middleCols(c0, hd).transpose()) * inv_sqrt_hd;
        s.rowwise() += key_bias;
        for (Eigen::Index i = 0; i < t; ++i) {
          const double mx = s.row(i).maxCoeff();
          s.row(i) = (s.row(i).array() - mx).exp().matrix();
          s.row(i) /= s.row(i).sum();
        }
        lc.context.middleCols(c0, hd) = s * lc.v.middleCols(c0, hd);
        lc.probs.push_back(std::move(s));
      }
      const Mat attn = (lc.context * A[r.o_w].value).rowwise() + row_of(A[r.o_b].value);
      layer_norm(x + attn, row_of(A[r.ln1_g].value), row_of(A[r.ln1_b].value), c.layernorm_epsilon, lc.xhat1,
                 lc.inv_std1, lc.y1);
      lc.ff_pre = (lc.y1 * A[r.ff1_w].value).rowwise() + row_of(A[r.ff1_b].value);
      lc.ff_act = lc.ff_pre.unaryExpr([](double v) { return gelu(v); });
      const Mat ff = (lc.ff_act * A[r.ff2_w].value).rowwise() + row_of(A[r.ff2_b].value);
      layer_norm(lc.y1 + ff, row_of(A[r.ln2_g].value), row_of(A[r.ln2_b].value), c.layernorm_epsilon, lc.xhat2,
                 lc.inv_std2, lc.output);
      x = lc.output;
      if (mode == Mode::Train) ec.layers.push_back(std::move(lc));
    }

    RowVec pooled = (x.row(0) * A[hr.pooler_w].value + row_of(A[hr.pooler_b].value)).array().tanh().matrix();
    RowVec dropped = pooled;
    if (mode == Mode::Train) {
      ec.dropout_scale = RowVec::Ones(pooled.cols());
      if (c.dropout_p > 0.0) {
        Rng rng(derive_seed(dropout_seed, {static_cast<std::uint64_t>(e)}));
        const double keep_scale = 1.0 / (1.0 - c.dropout_p);
        for (Eigen::Index i = 0; i < pooled.cols(); ++i) ec.dropout_scale(i) = rng.uniform() < c.dropout_p ? 0.0 : keep_scale;
      }
      dropped = pooled.cwiseProduct(ec.dropout_scale);
    }
    out.sbp.push_back((dropped * A[hr.sbp_w].value)(0, 0) + A[hr.sbp_b].value(0, 0));
    out.dbp.push_back((dropped * A[hr.dbp_w].value)(0, 0) + A[hr.dbp_b].value(0, 0));
    out.pooled.push_back(pooled);
    if (mode == Mode::Train) {
      ec.pooled = std::move(pooled);
      out.cache->push_back(std::move(ec));
    }
  }
  return out;
}

ModelParams backward(const ModelParams& params, const ForwardOutput& out, std::span<const double> d_sbp,
                     std::span<const double> d_dbp) {
  if (!out.cache) throw Error(ErrorCode::MissingCache, "backward needs a train-mode forward pass");
  const auto& caches = *out.cache;
  if (d_sbp.size() != caches.size() || d_dbp.size() != caches.size()) {
    throw Error(ErrorCode::LengthMismatch, "loss gradient length differs from batch size");
  }
  const auto& c = params.config;
  const auto& A = params.arrays;
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto hr = head_refs(c);
  ModelParams g = zeros_like(params);
  auto& G = g.arrays;

  // Examples are reduced in batch order, so accumulation is deterministic.
  for (std::size_t e = 0; e < caches.size(); ++e) {
    const auto& ec = caches[e];
    const RowVec dropped = ec.pooled.cwiseProduct(ec.dropout_scale);
    G[hr.sbp_w].value += dropped.transpose() * d_sbp[e];
    G[hr.sbp_b].value(0, 0) += d_sbp[e];
    G[hr.dbp_w].value += dropped.transpose() * d_dbp[e];
    G[hr.dbp_b].value(0, 0) += d_dbp[e];
    const RowVec d_dropped = A[hr.sbp_w].value.transpose() * d_sbp[e] + A[hr.dbp_w].value.transpose() * d_dbp[e];
    const RowVec d_pooled = d_dropped.cwiseProduct(ec.dropout_scale);
    const RowVec d_z = d_pooled.array() * (1.0 - ec.pooled.array().square());
    const auto& top = ec.layers.back().output;
    G[hr.pooler_w].value += top.row(0).transpose() * d_z;
    G[hr.pooler_b].value.row(0) += d_z;

    Mat dx = Mat::Zero(top.rows(), top.cols());
    dx.row(0) = d_z * A[hr.pooler_w].value.transpose();

    for (std::size_t li = c.n_layers; li-- > 0;) {
      const auto r = layer_refs(li);
      const auto& lc = ec.layers[li];
      const auto t = lc.input.rows();

      const Mat d_res2 = layer_norm_backward(dx, lc.xhat2, lc.inv_std2, row_of(A[r.ln2_g].value), G[r.ln2_g].value,
                                             G[r.ln2_b].value);
      G[r.ff2_w].value += lc.ff_act.transpose() * d_res2;
      G[r.ff2_b].value.row(0) += d_res2.colwise().sum();
      const Mat d_act = d_res2 * A[r.ff2_w].value.transpose();
      const Mat d_pre = d_act.cwiseProduct(lc.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }));
      G[r.ff1_w].value += lc.y1.transpose() * d_pre;
      G[r.ff1_b].value.row(0) += d_pre.colwise().sum();
      const Mat d_y1 = d_res2 + d_pre * A[r.ff1_w].value.transpose();

      const Mat d_res1 = layer_norm_backward(d_y1, lc.xhat1, lc.inv_std1, row_of(A[r.ln1_g].value), G[r.ln1_g].value,
                                             G[r.ln1_b].value);
      G[r.o_w].value += lc.context.transpose() * d_res1;
      G[r.o_b].value.row(0) += d_res1.colwise().sum();
      const Mat d_ctx = d_res1 * A[r.o_w].value.transpose();

      Mat dq(t, lc.q.cols()), dk(t, lc.k.cols()), dv(t, lc.v.cols());
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * hd;
        const Mat& p = lc.probs[h];
        const Mat d_p = d_ctx.middleCols(c0, hd) * lc.v.middleCols(c0, hd).transpose();
        dv.middleCols(c0, hd) = p.transpose() * d_ctx.middleCols(c0, hd);
        const Eigen::VectorXd row_dot = (d_p.array() * p.array()).rowwise().sum();
        const Mat d_s = (p.array() * (d_p.array().colwise() - row_dot.array())).matrix() * inv_sqrt_hd;
        dq.middleCols(c0, hd) = d_s * lc.k.middleCols(c0, hd);
        dk.middleCols(c0, hd) = d_s.transpose() * lc.q.middleCols(c0, hd);
      }
      G[r.q_w].value += lc.input.transpose() * dq;
      G[r.q_b].value.row(0) += dq.colwise().sum();
      G[r.k_w].value += lc.input.transpose() * dk;
      G[r.k_b].value.row(0) += dk.colwise().sum();
      G[r.v_w].value += lc.input.transpose() * dv;
      G[r.v_b].value.row(0) += dv.colwise().sum();
      dx = d_res1 + dq * A[r.q_w].value.transpose() + dk * A[r.k_w].value.transpose() +
           dv * A[r.v_w].value.transpose();
    }
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      G[0].value.row(ec.ids[static_cast<std::size_t>(i)]) += dx.row(i);
      G[1].value.row(i) += dx.row(i);
    }
  }
  return g;
}

std::uint64_t params_checksum(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& a : params.arrays) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(a.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(a.value.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void save_params(const std::filesystem::path& path, const ModelParams& params, const AdamState* adam) {
  std::vector<const NamedArray*> all;
  std::vector<std::string> names;
  for (const auto& a : params.arrays) {
    all.push_back(&a);
    names.push_back(a.name);
  }
  if (adam) {
    for (const auto& a : adam->m.arrays) {
      all.push_back(&a);
      names.push_back("adam.m/" + a.name);
    }
    for (const auto& a : adam->v.arrays) {
      all.push_back(&a);
      names.push_back("adam.v/" + a.name);
    }
  }
  std::vector<std::uint8_t> payload;
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& m = all[i]->value;
    const std::size_t bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
    index.push_back({{"name", names[i]}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()}});
    const auto* src = reinterpret_cast<const std::uint8_t*>(m.data());
    payload.insert(payload.end(), src, src + bytes);
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(payload.data(), payload.size())));
  nlohmann::json header = {{"format", "vocalbp-weights"},
                           {"format_version", kWeightFormatVersion},
                           {"config", to_json(params.config)},
                           {"arrays", index},
                           {"payload_bytes", payload.size()},
                           {"checksum_fnv1a64", hex}};
  header["adam_step"] = adam ? nlohmann::json(adam->step) : nlohmann::json(nullptr);
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

ModelParams load_params(const std::filesystem::path& path, AdamState* adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::VersionMismatch, "not a vocalbp weight container");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (16 + len > bytes.size()) throw Error(ErrorCode::ChecksumMismatch, "header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ChecksumMismatch, "header is not valid JSON");
  }
  if (!header.contains("format_version")) throw Error(ErrorCode::VersionMismatch, "missing format_version");
  if (header["format_version"].get<int>() != kWeightFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "format_version " + header["format_version"].dump() + " unsupported");
  }
  const auto config = encoder_config_from_json(header.at("config"));
  config.validate();
  const auto layout = param_layout(config);
  const auto& index = header.at("arrays");
  const bool has_adam = !header.at("adam_step").is_null();
  const std::size_t expected_arrays = layout.size() * (has_adam ? 3 : 1);
  if (index.size() != expected_arrays) throw Error(ErrorCode::ShapeMismatch, "array count does not match config");
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& [name, rows, cols] = layout[i % layout.size()];
    const std::string prefix = i < layout.size() ? "" : (i < 2 * layout.size() ? "adam.m/" : "adam.v/");
    if (index[i].at("name").get<std::string>() != prefix + name || index[i].at("rows").get<std::size_t>() != rows ||
        index[i].at("cols").get<std::size_t>() != cols) {
      throw Error(ErrorCode::ShapeMismatch, "array " + index[i].at("name").get<std::string>() +
                                                " does not match the shape implied by the config");
    }
  }
  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  const std::uint8_t* payload = bytes.data() + 16 + len;
  const std::size_t available = bytes.size() - 16 - len;
  if (available != payload_bytes) {
    throw Error(ErrorCode::ChecksumMismatch, "payload holds " + std::to_string(available) + " bytes, header declares " +
                                                 std::to_string(payload_bytes));
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(payload, payload_bytes)));
  if (header.at("checksum_fnv1a64").get<std::string>() != hex) throw Error(ErrorCode::ChecksumMismatch, "payload checksum differs");

  const auto read_block = [&](std::size_t first) {
    ModelParams p;
    p.config = config;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& entry = index[first + i];
      const auto& [name, rows, cols] = layout[i];
      Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      const std::size_t off = entry.at("offset").get<std::size_t>();
      const std::size_t nbytes = rows * cols * sizeof(double);
      if (off + nbytes > payload_bytes) throw Error(ErrorCode::ShapeMismatch, "array " + name + " overruns payload");
      std::memcpy(m.data(), payload + off, nbytes);
      p.arrays.push_back({name, std::move(m)});
    }
    return p;
  };
  ModelParams params = read_block(0);
  if (adam && has_adam) {
    adam->m = read_block(layout.size());
    adam->v = read_block(2 * layout.size());
    adam->step = header.at("adam_step").get<std::size_t>();
  }
  return params;
}

}  // namespace vbp
