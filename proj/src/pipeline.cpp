#include "vocalbp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "vocalbp/audio_io.hpp"
#include "vocalbp/error.hpp"
#include "vocalbp/relieff.hpp"
#include "vocalbp/rng.hpp"
#include "vocalbp/textcodec.hpp"

namespace vbp {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::MissingArtifacts:
    case ErrorCode::MalformedRiff:
    case ErrorCode::UnsupportedEncoding:
    case ErrorCode::TruncatedData:
    case ErrorCode::VersionMismatch:
    case ErrorCode::ChecksumMismatch:
      return kExitIo;
    case ErrorCode::ClassTooSmall:
    case ErrorCode::TooFewExamples:
    case ErrorCode::EmptyDataset:
    case ErrorCode::AllFeaturesDropped:
      return kExitInsufficient;
    case ErrorCode::Diverged:
      return kExitDiverged;
    case ErrorCode::NoSegments:
    case ErrorCode::ClipTooShort:
    case ErrorCode::EmptyClip:
      return kExitDegenerate;
    default:
      return kExitConfig;
  }
}

fs::path PipelineConfig::manifest_path() const { return manifest.empty() ? workdir / "manifest.csv" : manifest; }

std::uint64_t stage_seed(const PipelineConfig& config, Stage stage) {
  return derive_seed(config.seed, {static_cast<std::uint64_t>(stage)});
}

namespace {

class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidConfig, where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, where_ + "." + key + ": " + e.what());
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(ErrorCode::InvalidConfig, "unknown key " + where_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, what);
}

std::string schema_word(FeatureSchema s) { return s == FeatureSchema::Base ? "base" : "extended"; }

FeatureSchema parse_schema(const std::string& s) {
  if (s == "base") return FeatureSchema::Base;
  if (s == "extended") return FeatureSchema::Extended;
  throw Error(ErrorCode::InvalidConfig, "features.schema must be \"base\" or \"extended\"");
}

std::string rule_word(TargetRule r) {
  switch (r) {
    case TargetRule::Initial: return "initial";
    case TargetRule::Final: return "final";
    default: return "mean";
  }
}

TargetRule parse_rule(const std::string& s) {
  if (s == "mean") return TargetRule::Mean;
  if (s == "initial") return TargetRule::Initial;
  if (s == "final") return TargetRule::Final;
  throw Error(ErrorCode::InvalidConfig, "training.target_rule must be mean, initial or final");
}

std::string scaler_word(ScalerKind k) { return k == ScalerKind::MinMax ? "minmax" : "standard"; }

ScalerKind parse_scaler(const std::string& s) {
  if (s == "minmax") return ScalerKind::MinMax;
  if (s == "standard") return ScalerKind::Standard;
  throw Error(ErrorCode::InvalidConfig, "training.feature_scaler must be minmax or standard");
}

void validate(const PipelineConfig& c) {
  require(c.synth.n_female + c.synth.n_male > 0, "synth needs at least one speaker");
  require(c.synth.layout.sample_rate >= 8000, "synth.sample_rate must be >= 8000");
  require(c.synth.layout.vowel_s > 0.0 && c.synth.layout.lead_silence_s >= 0.0 && c.synth.layout.tail_silence_s >= 0.0,
          "synth durations must be non-negative with a positive vowel");
  require(c.extraction.max_segments >= 1, "features.max_segments must be >= 1");
  require(c.select.folds >= 2, "relieff.folds must be >= 2");
  require(!c.select.k_grid.empty(), "relieff.k_grid must not be empty");
  for (auto k : c.select.k_grid) require(k >= 1, "relieff.k_grid entries must be >= 1");
  require(c.tokenizer.decimals >= 0 && c.tokenizer.decimals <= 6, "tokenizer.decimals must lie in [0, 6]");
  require(c.tokenizer.max_len >= 3 && c.tokenizer.max_len <= c.encoder.max_len,
          "tokenizer.max_len must lie in [3, encoder.max_len]");
  require(c.training.test_fraction >= 0.0 && c.training.test_fraction < 1.0, "training.test_fraction must lie in [0, 1)");
  require(c.training.val_fraction >= 0.0 && c.training.val_fraction < 1.0, "training.val_fraction must lie in [0, 1)");
  require(c.training.train.epochs >= 1, "training.epochs must be >= 1");
  require(c.training.train.batch_size >= 1, "training.batch_size must be >= 1");
  require(c.training.train.adam.learning_rate > 0.0, "training.learning_rate must be positive");
  require(c.training.train.max_loss > 0.0, "training.max_loss must be positive");
  auto enc = c.encoder;
  enc.vocab_size = 4;
  enc.validate();
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  Section root(j, "config");
  std::string workdir, manifest;
  root.get("workdir", workdir);
  root.get("manifest", manifest);
  c.workdir = workdir;
  c.manifest = manifest;
  root.get("seed", c.seed);
  if (auto s = root.sub("synth")) {
    s->get("n_female", c.synth.n_female);
    s->get("n_male", c.synth.n_male);
    s->get("lead_silence_s", c.synth.layout.lead_silence_s);
    s->get("vowel_s", c.synth.layout.vowel_s);
    s->get("tail_silence_s", c.synth.layout.tail_silence_s);
    s->get("sample_rate", c.synth.layout.sample_rate);
    s->get("vowel_peak", c.synth.layout.vowel_peak);
    s->get("ambient_noise", c.synth.layout.ambient_noise);
    s->finish();
  }
  if (auto s = root.sub("features")) {
    std::string schema = schema_word(c.extraction.schema);
    s->get("schema", schema);
    c.extraction.schema = parse_schema(schema);
    s->get("max_segments", c.extraction.max_segments);
    if (auto v = s->sub("voicing")) {
      auto& vc = c.extraction.voicing;
      v->get("frame_seconds", vc.frame_seconds);
      v->get("energy_ratio", vc.energy_ratio);
      v->get("energy_quantile", vc.energy_quantile);
      v->get("flatness_max", vc.flatness_max);
      v->get("band_lo_hz", vc.band_lo_hz);
      v->get("band_hi_hz", vc.band_hi_hz);
      v->get("min_region_seconds", vc.min_region_seconds);
      v->get("window_sigma", vc.window_sigma);
      v->finish();
    }
    s->finish();
  }
  if (auto s = root.sub("relieff")) {
    s->get("folds", c.select.folds);
    s->get("k_grid", c.select.k_grid);
    s->finish();
  }
  if (auto s = root.sub("tokenizer")) {
    s->get("decimals", c.tokenizer.decimals);
    s->get("max_len", c.tokenizer.max_len);
    s->finish();
  }
  if (auto s = root.sub("encoder")) {
    s->get("hidden_dim", c.encoder.hidden_dim);
    s->get("n_layers", c.encoder.n_layers);
    s->get("n_heads", c.encoder.n_heads);
    s->get("ff_dim", c.encoder.ff_dim);
    s->get("max_len", c.encoder.max_len);
    s->get("dropout_p", c.encoder.dropout_p);
    s->get("layernorm_epsilon", c.encoder.layernorm_epsilon);
    s->finish();
  }
  if (auto s = root.sub("training")) {
    auto& t = c.training;
    s->get("epochs", t.train.epochs);
    s->get("batch_size", t.train.batch_size);
    s->get("learning_rate", t.train.adam.learning_rate);
    s->get("beta1", t.train.adam.beta1);
    s->get("beta2", t.train.adam.beta2);
    s->get("epsilon", t.train.adam.epsilon);
    s->get("max_loss", t.train.max_loss);
    s->get("test_fraction", t.test_fraction);
    s->get("val_fraction", t.val_fraction);
    std::string rule = rule_word(t.target_rule), scaler = scaler_word(t.feature_scaler);
    s->get("target_rule", rule);
    s->get("feature_scaler", scaler);
    t.target_rule = parse_rule(rule);
    t.feature_scaler = parse_scaler(scaler);
    s->finish();
  }
  if (auto s = root.sub("report")) {
    s->get("svg", c.emit_svg);
    s->finish();
  }
  root.finish();
  validate(c);
  return c;
}

json to_json(const PipelineConfig& c) {
  const auto& v = c.extraction.voicing;
  const auto& t = c.training;
  return {
      {"workdir", c.workdir.string()},
      {"manifest", c.manifest.string()},
      {"seed", c.seed},
      {"synth",
       {{"n_female", c.synth.n_female},
        {"n_male", c.synth.n_male},
        {"lead_silence_s", c.synth.layout.lead_silence_s},
        {"vowel_s", c.synth.layout.vowel_s},
        {"tail_silence_s", c.synth.layout.tail_silence_s},
        {"sample_rate", c.synth.layout.sample_rate},
        {"vowel_peak", c.synth.layout.vowel_peak},
        {"ambient_noise", c.synth.layout.ambient_noise}}},
      {"features",
       {{"schema", schema_word(c.extraction.schema)},
        {"max_segments", c.extraction.max_segments},
        {"voicing",
         {{"frame_seconds", v.frame_seconds},
          {"energy_ratio", v.energy_ratio},
          {"energy_quantile", v.energy_quantile},
          {"flatness_max", v.flatness_max},
          {"band_lo_hz", v.band_lo_hz},
          {"band_hi_hz", v.band_hi_hz},
          {"min_region_seconds", v.min_region_seconds},
          {"window_sigma", v.window_sigma}}}}},
      {"relieff", {{"folds", c.select.folds}, {"k_grid", c.select.k_grid}}},
      {"tokenizer", {{"decimals", c.tokenizer.decimals}, {"max_len", c.tokenizer.max_len}}},
      {"encoder",
       {{"hidden_dim", c.encoder.hidden_dim},
        {"n_layers", c.encoder.n_layers},
        {"n_heads", c.encoder.n_heads},
        {"ff_dim", c.encoder.ff_dim},
        {"max_len", c.encoder.max_len},
        {"dropout_p", c.encoder.dropout_p},
        {"layernorm_epsilon", c.encoder.layernorm_epsilon}}},
      {"training",
       {{"epochs", t.train.epochs},
        {"batch_size", t.train.batch_size},
        {"learning_rate", t.train.adam.learning_rate},
        {"beta1", t.train.adam.beta1},
        {"beta2", t.train.adam.beta2},
        {"epsilon", t.train.adam.epsilon},
        {"max_loss", t.train.max_loss},
        {"test_fraction", t.test_fraction},
        {"val_fraction", t.val_fraction},
        {"target_rule", rule_word(t.target_rule)},
        {"feature_scaler", scaler_word(t.feature_scaler)}}},
      {"report", {{"svg", c.emit_svg}}},
  };
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

namespace {

std::vector<std::size_t> stratified_subset(const std::vector<bool>& classes, const std::vector<std::size_t>& rows,
                                           double fraction, std::uint64_t seed, std::vector<std::size_t>& rest) {
  rest = rows;
  if (fraction <= 0.0) return {};
  std::vector<bool> sub;
  for (auto r : rows) sub.push_back(classes[r]);
  const auto s = stratified_split(sub, fraction, seed);
  std::vector<std::size_t> picked;
  rest.clear();
  for (auto i : s.test) picked.push_back(rows[i]);
  for (auto i : s.train) rest.push_back(rows[i]);
  return picked;
}

}  // namespace

DataSplit split_rows(const std::vector<bool>& classes, const PipelineConfig& config) {
  std::vector<std::size_t> all(classes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto seed = stage_seed(config, Stage::Split);
  DataSplit out;
  std::vector<std::size_t> non_test;
  out.test = stratified_subset(classes, all, config.training.test_fraction, derive_seed(seed, {0}), non_test);
  out.val = stratified_subset(classes, non_test, config.training.val_fraction, derive_seed(seed, {1}), out.train);
  return out;
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

void check_workdir(const PipelineConfig& c) {
  if (c.workdir.empty()) throw Error(ErrorCode::InvalidConfig, "no workdir: pass --workdir, set it in the config or BP_WORKDIR");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "missing " + path.string() + " (run the earlier stage first)");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, path.string() + " is not valid JSON: " + e.what());
  }
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifacts, "missing " + path.string() + " (run the earlier stage first)");
}

template <class F>
int guarded(std::ostream& log, const char* stage, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    log << "bp " << stage << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    log << "bp " << stage << ": malformed artifact: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    log << "bp " << stage << ": " << e.what() << "\n";
    return kExitIo;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Manifest rows that have a feature row, joined with their labels.
struct Labeled {
  std::vector<ParticipantRecord> records;
  FeatureTable table;  // rows aligned with records
  std::vector<BpLabel> labels;

  [[nodiscard]] std::vector<bool> classes() const {
    std::vector<bool> c;
    for (const auto& l : labels) c.push_back(l.hypertensive);
    return c;
  }
};

Labeled load_labeled(const PipelineConfig& config, std::ostream& log) {
  require_file(config.manifest_path());
  const auto fpath = config.workdir / "features.csv";
  require_file(fpath);
  const auto records = read_manifest(config.manifest_path());
  const auto table = read_feature_csv(fpath);
  std::set<std::string> have(table.ids.begin(), table.ids.end());
  Labeled out;
  for (const auto& r : records) {
    if (have.count(r.id)) out.records.push_back(r);
    else log << "skipping " << r.id << ": no feature row\n";
  }
  const auto ex = build_examples(out.records, table, config.training.target_rule);
  out.table.names = table.names;
  out.table.ids = ex.vect_1;
  for (const auto& e : ex.examples) out.table.rows.push_back(e.features.values);
  out.labels = ex.vect_2;
  if (out.records.empty()) throw Error(ErrorCode::EmptyDataset, "no labeled recordings with features");
  return out;
}

json scaler_json(const Scaler& s) {
  return {{"kind", scaler_word(s.kind)}, {"offset", s.offset}, {"scale", s.scale}};
}

Scaler scaler_from(const json& j) {
  Scaler s;
  s.kind = parse_scaler(j.at("kind").get<std::string>());
  s.constant_policy = ConstantPolicy::Center;
  s.offset = j.at("offset").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  return s;
}

std::vector<std::size_t> column_indices(const std::vector<std::string>& have, const std::vector<std::string>& want) {
  std::vector<std::size_t> idx;
  for (const auto& name : want) {
    const auto it = std::find(have.begin(), have.end(), name);
    if (it == have.end()) throw Error(ErrorCode::SchemaMismatch, "input features lack column " + name);
    idx.push_back(static_cast<std::size_t>(it - have.begin()));
  }
  return idx;
}

std::vector<double> pick(const std::vector<double>& row, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(row[i]);
  return out;
}

// Everything needed after training to turn a raw feature row into model input.
struct Preprocess {
  std::string schema_id;
  std::vector<std::string> features;
  Scaler scaler;
  TargetScaler targets;
  int decimals = 2;
  std::size_t max_len = kMaxSequenceLength;

  [[nodiscard]] TokenSequence encode(const std::vector<double>& selected_row, const Vocabulary& vocab) const {
    return tokenize(serialize_features(features, scaler.transform(selected_row), decimals), vocab, max_len);
  }
};

json to_json(const Preprocess& p) {
  return {{"schema_id", p.schema_id}, {"features", p.features}, {"feature_scaler", scaler_json(p.scaler)},
          {"target_scaler", to_json(p.targets)}, {"decimals", p.decimals}, {"max_len", p.max_len}};
}

Preprocess preprocess_from(const json& j) {
  Preprocess p;
  p.schema_id = j.at("schema_id").get<std::string>();
  p.features = j.at("features").get<std::vector<std::string>>();
  p.scaler = scaler_from(j.at("feature_scaler"));
  p.targets = target_scaler_from_json(j.at("target_scaler"));
  p.decimals = j.at("decimals").get<int>();
  p.max_len = j.at("max_len").get<std::size_t>();
  if (p.scaler.offset.size() != p.features.size()) throw Error(ErrorCode::MissingArtifacts, "preprocess.json is inconsistent");
  return p;
}

struct Trained {
  Preprocess pre;
  Vocabulary vocab;
  ModelParams params;
};

Trained load_trained(const PipelineConfig& config) {
  const auto dir = config.workdir;
  require_file(dir / "model.bin");
  require_file(dir / "vocab.json");
  auto pre = preprocess_from(read_json(dir / "preprocess.json"));
  auto vocab = Vocabulary::load(dir / "vocab.json");
  auto params = load_params(dir / "model.bin");
  if (params.config.vocab_size != vocab.size()) throw Error(ErrorCode::SchemaMismatch, "vocabulary and model disagree");
  return {std::move(pre), std::move(vocab), std::move(params)};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

int cmd_synth(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "synth", [&] {
    check_workdir(config);
    ensure_dir(config.workdir / "wav");
    const auto members = synthesize_cohort(default_cohort_profile(), config.synth.n_female, config.synth.n_male,
                                           stage_seed(config, Stage::Synth));
    std::vector<ParticipantRecord> records;
    for (const auto& m : members) {
      auto r = m.record;
      r.wav_paths = {"wav/" + r.id + ".wav"};
      write_wav(config.workdir / r.wav_paths[0], render_member_audio(m, config.synth.layout), config.synth.layout.sample_rate);
      records.push_back(std::move(r));
    }
    const auto manifest = config.workdir / "manifest.csv";
    write_manifest(manifest, records);
    log << "synth: " << records.size() << " recordings -> " << manifest.string() << "\n";
    return kExitOk;
  });
}

int cmd_extract(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "extract", [&] {
    check_workdir(config);
    ensure_dir(config.workdir);
    const auto mpath = config.manifest_path();
    require_file(mpath);
    const auto records = read_manifest(mpath);
    const auto base = mpath.parent_path();
    std::vector<std::string> ids;
    std::vector<FeatureVector> vectors;
    json failures = json::array();
    for (const auto& r : records) {
      try {
        if (r.wav_paths.empty()) throw Error(ErrorCode::MissingArtifacts, "no wav_path");
        std::vector<AudioClip> clips;
        for (const auto& p : r.wav_paths) {
          const fs::path wp = fs::path(p).is_absolute() ? fs::path(p) : base / p;
          clips.push_back(load_wav(wp));
        }
        vectors.push_back(extract_features(clips, config.extraction));
        ids.push_back(r.id);
      } catch (const Error& e) {
        failures.push_back({{"id", r.id}, {"code", std::string(to_string(e.code()))}, {"message", e.what()}});
        log << "extract: " << r.id << " failed: " << e.what() << "\n";
      }
    }
    FeatureTable table;
    table.ids = ids;
    std::string schema_id = config.extraction.schema == FeatureSchema::Base ? kSchemaBase : kSchemaExtended;
    bool with_pitch = config.extraction.schema == FeatureSchema::Extended && !vectors.empty() &&
                      std::all_of(vectors.begin(), vectors.end(), [](const FeatureVector& v) { return v.schema_id == kSchemaExtendedPitch; });
    if (with_pitch) schema_id = kSchemaExtendedPitch;
    table.names = schema_names(config.extraction.schema, with_pitch);
    json recs = json::array();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      auto row = vectors[i].values;
      row.resize(table.names.size());
      table.rows.push_back(std::move(row));
      recs.push_back({{"id", ids[i]}, {"n_segments", vectors[i].n_segments}, {"schema_id", vectors[i].schema_id}});
    }
    write_feature_csv(config.workdir / "features.csv", table);
    const json meta = {{"schema_id", schema_id},
                       {"names", table.names},
                       {"extraction", to_json(config)["features"]},
                       {"manifest", mpath.string()},
                       {"recordings", recs},
                       {"failures", failures}};
    write_text(config.workdir / "features.json", meta.dump(2) + "\n");
    log << "extract: " << table.rows.size() << "/" << records.size() << " recordings, schema " << schema_id << "\n";
    return failures.empty() ? kExitOk : kExitPartial;
  });
}

int cmd_select(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "select", [&] {
    check_workdir(config);
    const auto data = load_labeled(config, log);
    const auto split = split_rows(data.classes(), config);
    std::vector<std::size_t> rows = split.train;
    rows.insert(rows.end(), split.val.begin(), split.val.end());
    std::sort(rows.begin(), rows.end());
    Matrix x;
    std::vector<bool> y;
    for (auto r : rows) {
      x.push_back(data.table.rows[r]);
      y.push_back(data.labels[r].hypertensive);
    }
    const auto res = cross_validated_selection(x, y, config.select.folds, config.select.k_grid,
                                               stage_seed(config, Stage::Select), data.table.names);
    write_weights_csv(config.workdir / "weights.csv", res);
    write_selection_json(config.workdir / "selection.json", res);
    log << "select: k=" << res.chosen_k << ", kept " << res.kept.size() << "/" << data.table.names.size() << ":";
    for (const auto& n : res.kept) log << " " << n;
    log << (res.fell_back_to_top1 ? " (fallback to top-1)" : "") << "\n";
    return kExitOk;
  });
}

int cmd_train(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "train", [&] {
    check_workdir(config);
    const auto data = load_labeled(config, log);
    require_file(config.workdir / "selection.json");
    const auto sel = read_selection_json(config.workdir / "selection.json");
    const auto cols = column_indices(data.table.names, sel.kept);
    const auto split = split_rows(data.classes(), config);
    if (split.train.size() < 2) throw Error(ErrorCode::TooFewExamples, "training split has fewer than 2 rows");

    Preprocess pre;
    pre.schema_id = read_json(config.workdir / "features.json").at("schema_id").get<std::string>();
    pre.features = sel.kept;
    pre.decimals = config.tokenizer.decimals;
    pre.max_len = config.tokenizer.max_len;
    std::vector<std::vector<double>> train_rows;
    for (auto r : split.train) train_rows.push_back(pick(data.table.rows[r], cols));
    pre.scaler = fit_scaler(train_rows, config.training.feature_scaler, ConstantPolicy::Center);
    const Vocabulary vocab(pre.features);

    std::vector<TokenSequence> seqs;
    for (const auto& row : data.table.rows) seqs.push_back(pre.encode(pick(row, cols), vocab));
    const auto examples = [&](const std::vector<std::size_t>& idx) {
      std::vector<TrainExample> out;
      for (auto r : idx) out.push_back({data.table.ids[r], seqs[r], data.labels[r].sbp, data.labels[r].dbp});
      return out;
    };
    const auto train_set = examples(split.train);
    const auto val_set = examples(split.val);
    pre.targets = fit_target_scaler(train_set);

    auto enc = config.encoder;
    enc.vocab_size = vocab.size();
    enc.seed = stage_seed(config, Stage::Init);
    enc.validate();
    auto tc = config.training.train;
    tc.seed = stage_seed(config, Stage::Train);
    log << "train: " << train_set.size() << " train / " << val_set.size() << " val / " << split.test.size()
        << " test examples, " << vocab.size() << "-token vocabulary\n";
    const auto res = train(init_params(enc), train_set, val_set, pre.targets, tc);

    const auto dir = config.workdir;
    save_params(dir / "model.bin", res.params, &res.adam);
    vocab.save(dir / "vocab.json");
    write_text(dir / "preprocess.json", to_json(pre).dump(2) + "\n");
    write_loss_curve_csv(dir / "loss_curve.csv", res.history);
    write_sequences_csv(dir / "sequences.csv", data.table.ids, seqs);
    const auto ids_of = [&](const std::vector<std::size_t>& idx) {
      std::vector<std::string> out;
      for (auto r : idx) out.push_back(data.table.ids[r]);
      return out;
    };
    const json split_json = {{"train", ids_of(split.train)}, {"val", ids_of(split.val)}, {"test", ids_of(split.test)}};
    write_text(dir / "split.json", split_json.dump(2) + "\n");
    const auto& last = res.history.epochs.back();
    log << "train: epoch " << last.epoch << " train_loss " << fmt("%.6g", last.train_loss) << " val_loss "
        << fmt("%.6g", last.val_loss) << ", checksum " << hex64(params_checksum(res.params)) << "\n";
    return kExitOk;
  });
}

int cmd_eval(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "eval", [&] {
    check_workdir(config);
    const auto data = load_labeled(config, log);
    const auto model = load_trained(config);
    const auto cols = column_indices(data.table.names, model.pre.features);
    const auto split = read_json(config.workdir / "split.json");
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < data.table.ids.size(); ++i) row_of[data.table.ids[i]] = i;
    const auto examples = [&](const std::string& part) {
      std::vector<TrainExample> out;
      for (const auto& id : split.at(part).get<std::vector<std::string>>()) {
        const auto it = row_of.find(id);
        if (it == row_of.end()) throw Error(ErrorCode::MissingArtifacts, "split.json names unknown id " + id);
        const auto r = it->second;
        out.push_back({id, model.pre.encode(pick(data.table.rows[r], cols), model.vocab), data.labels[r].sbp,
                       data.labels[r].dbp});
      }
      return out;
    };
    const auto train_set = examples("train");
    auto test_set = examples("test");
    std::string eval_part = "test";
    if (test_set.empty()) {
      log << "eval: empty test split, scoring the training split\n";
      test_set = train_set;
      eval_part = "train";
    }
    const auto pred = predict(model.params, test_set, model.pre.targets);
    const auto metrics = compute_metrics(test_set, pred);
    const auto train_metrics = evaluate(model.params, train_set, model.pre.targets);
    std::vector<bool> truth;
    for (const auto& e : test_set) truth.push_back(exceeds_thresholds(e.sbp, e.dbp));
    const auto cm = confusion_matrix(pred.sbp, pred.dbp, truth);

    const json mj = {{"eval_split", eval_part}, {"test", to_json(metrics)}, {"train", to_json(train_metrics)},
                     {"model_checksum", hex64(params_checksum(model.params))}};
    write_text(config.workdir / "metrics.json", mj.dump(2) + "\n");
    write_text(config.workdir / "confusion.json", to_json(cm).dump(2) + "\n");
    std::ostringstream csv;
    csv << "id,sbp_true,dbp_true,sbp_pred,dbp_pred,class_true,class_pred\n";
    char buf[256];
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%d,%d\n", test_set[i].id.c_str(), test_set[i].sbp,
                    test_set[i].dbp, pred.sbp[i], pred.dbp[i], truth[i] ? 1 : 0,
                    exceeds_thresholds(pred.sbp[i], pred.dbp[i]) ? 1 : 0);
      csv << buf;
    }
    write_text(config.workdir / "predictions.csv", csv.str());
    log << "eval (" << eval_part << ", n=" << metrics.n << "): SBP MAE " << fmt("%.3f", metrics.sbp.mae) << " R2 "
        << fmt("%.3f", metrics.sbp.r2) << " | DBP MAE " << fmt("%.3f", metrics.dbp.mae) << " R2 "
        << fmt("%.3f", metrics.dbp.r2) << "\n";
    return kExitOk;
  });
}

int cmd_predict(const PipelineConfig& config, const PredictInput& input, std::ostream& out, std::ostream& log) {
  return guarded(log, "predict", [&] {
    check_workdir(config);
    if (input.wav.has_value() == input.features_csv.has_value()) {
      throw Error(ErrorCode::InvalidConfig, "predict needs exactly one of --wav or --features");
    }
    const auto model = load_trained(config);
    std::vector<TrainExample> set;
    if (input.wav) {
      const AudioClip clip = load_wav(*input.wav);
      auto params = config.extraction;
      params.schema = model.pre.schema_id == kSchemaBase ? FeatureSchema::Base : FeatureSchema::Extended;
      FeatureVector fv;
      try {
        fv = extract_features(std::span<const AudioClip>(&clip, 1), params);
      } catch (const Error& e) {
        if (exit_code_for(e.code()) == kExitDegenerate) throw Error(e.code(), "no voiced audio in " + input.wav->string());
        throw;
      }
      const auto cols = column_indices(fv.names, model.pre.features);
      set.push_back({input.wav->filename().string(), model.pre.encode(pick(fv.values, cols), model.vocab), 0.0, 0.0});
    } else {
      const auto table = read_feature_csv(*input.features_csv);
      const auto cols = column_indices(table.names, model.pre.features);
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        set.push_back({table.ids[i], model.pre.encode(pick(table.rows[i], cols), model.vocab), 0.0, 0.0});
      }
      if (set.empty()) throw Error(ErrorCode::EmptyDataset, "feature file has no rows");
    }
    const auto pred = predict(model.params, set, model.pre.targets);
    json arr = json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
      arr.push_back({{"id", set[i].id},
                     {"sbp", pred.sbp[i]},
                     {"dbp", pred.dbp[i]},
                     {"class", exceeds_thresholds(pred.sbp[i], pred.dbp[i]) ? "hypertensive" : "normotensive"}});
    }
    out << json{{"predictions", arr}}.dump(2) << "\n";
    return kExitOk;
  });
}

int cmd_report(const PipelineConfig& config, std::ostream& log) {
  return guarded(log, "report", [&] {
    check_workdir(config);
    const auto data = load_labeled(config, log);
    std::vector<std::string> labels;
    std::vector<std::vector<double>> columns;
    for (std::size_t c = 0; c < data.table.names.size(); ++c) {
      std::vector<double> col;
      for (const auto& row : data.table.rows) col.push_back(row[c]);
      const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
      if (*lo == *hi) {
        log << "report: dropping constant column " << data.table.names[c] << "\n";
        continue;
      }
      labels.push_back(data.table.names[c]);
      columns.push_back(std::move(col));
    }
    std::vector<double> sbp, dbp;
    for (const auto& l : data.labels) {
      sbp.push_back(l.sbp);
      dbp.push_back(l.dbp);
    }
    labels.push_back("SBP");
    columns.push_back(sbp);
    labels.push_back("DBP");
    columns.push_back(dbp);
    const auto corr = correlation_matrix(columns);

    std::ostringstream csv;
    csv << "feature";
    for (const auto& l : labels) csv << "," << l;
    csv << "\n";
    char buf[40];
    for (std::size_t i = 0; i < labels.size(); ++i) {
      csv << labels[i];
      for (double v : corr[i]) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        csv << buf;
      }
      csv << "\n";
    }
    write_text(config.workdir / "correlation.csv", csv.str());
    const std::size_t n = labels.size();
    log << "report: correlation over " << n << " columns; r(SBP, DBP) = " << fmt("%.3f", corr[n - 2][n - 1]) << "\n";
    if (config.emit_svg) {
      write_text(config.workdir / "correlation.svg", svg_heatmap(labels, corr));
      const auto curve = config.workdir / "loss_curve.csv";
      if (fs::exists(curve)) {
        write_text(config.workdir / "loss_curve.svg", svg_loss_curve(read_loss_curve_csv(curve)));
      } else {
        log << "report: no loss_curve.csv, skipping loss plot\n";
      }
    }
    return kExitOk;
  });
}

std::string svg_loss_curve(const TrainHistory& history) {
  const double w = 640, h = 400, left = 70, right = 20, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double ymax = 0.0;
  for (const auto& e : history.epochs) {
    if (std::isfinite(e.train_loss)) ymax = std::max(ymax, e.train_loss);
    if (std::isfinite(e.val_loss)) ymax = std::max(ymax, e.val_loss);
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const std::size_t n = history.epochs.size();
  const auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  const auto py = [&](double v) { return top + ph * (1.0 - v / ymax); };
  std::ostringstream s;
  char buf[160];
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw, ph);
  s << buf;
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g</text>\n", left - 6, py(v) + 4, v);
    s << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">epoch (1..%zu)</text>\n", left + pw / 2, h - 15, n);
  s << buf;
  s << "<text x=\"320\" y=\"20\" text-anchor=\"middle\">Training and validation loss</text>\n";
  const auto line = [&](bool val, const char* color) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double v = val ? history.epochs[i].val_loss : history.epochs[i].train_loss;
      if (!std::isfinite(v)) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(i), py(v));
      s << buf;
    }
    s << "\"/>\n";
  };
  line(false, "#1f77b4");
  line(true, "#ff7f0e");
  s << "<text x=\"" << left + pw - 90 << "\" y=\"" << top + 18 << "\" fill=\"#1f77b4\">train</text>\n";
  s << "<text x=\"" << left + pw - 45 << "\" y=\"" << top + 18 << "\" fill=\"#ff7f0e\">val</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string svg_heatmap(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& matrix) {
  const std::size_t n = labels.size();
  const double cell = 28, left = 110, top = 110;
  const double size = left + cell * static_cast<double>(n) + 20;
  std::ostringstream s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" font-size=\"10\">\n", size, size);
  s << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%s</text>\n", left - 4,
                  top + cell * (static_cast<double>(i) + 0.65), labels[i].c_str());
    s << buf;
    const double cx = left + cell * (static_cast<double>(i) + 0.5);
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" transform=\"rotate(-60 %.1f %.1f)\">%s</text>\n", cx, top - 4, cx,
                  top - 4, labels[i].c_str());
    s << buf;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = std::clamp(matrix[i][j], -1.0, 1.0);
      // white at 0, red toward +1, blue toward -1
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
      const int r = v >= 0 ? 255 : fade, b = v >= 0 ? fade : 255;
      std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"rgb(%d,%d,%d)\"><title>%s/%s %.3f</title></rect>\n",
                    left + cell * static_cast<double>(j), top + cell * static_cast<double>(i), cell, cell, r, fade, b,
                    labels[i].c_str(), labels[j].c_str(), matrix[i][j]);
      s << buf;
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace vbp
