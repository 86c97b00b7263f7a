#include "vocalbp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "vocalbp/error.hpp"
#include "vocalbp/rng.hpp"

namespace vbp {

namespace {

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

void validate_record(const ParticipantRecord& r) {
  const auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::OutOfPhysiologicRange, "participant " + r.id + ": " + what);
  };
  for (double s : {r.sbp_initial, r.sbp_final}) {
    if (!in_range(s, 60.0, 260.0)) fail("SBP " + num(s) + " outside [60, 260]");
  }
  for (double d : {r.dbp_initial, r.dbp_final}) {
    if (!in_range(d, 30.0, 160.0)) fail("DBP " + num(d) + " outside [30, 160]");
  }
  if (!(r.dbp_initial < r.sbp_initial) || !(r.dbp_final < r.sbp_final)) fail("DBP must be below SBP");
  if (!in_range(r.age, 20.0, 70.0)) fail("age " + num(r.age) + " outside [20, 70]");
}

bool exceeds_thresholds(double sbp, double dbp) { return sbp > kSbpThreshold || dbp > kDbpThreshold; }

bool label_hypertension(double sbp, double dbp) {
  if (!in_range(sbp, 60.0, 260.0) || !in_range(dbp, 30.0, 160.0)) {
    throw Error(ErrorCode::OutOfPhysiologicRange, "reading " + num(sbp) + "/" + num(dbp) + " is not physiologic");
  }
  return exceeds_thresholds(sbp, dbp);
}

BpLabel target_for(const ParticipantRecord& r, TargetRule rule) {
  BpLabel l;
  switch (rule) {
    case TargetRule::Mean:
      l.sbp = 0.5 * (r.sbp_initial + r.sbp_final);
      l.dbp = 0.5 * (r.dbp_initial + r.dbp_final);
      break;
    case TargetRule::Initial:
      l.sbp = r.sbp_initial;
      l.dbp = r.dbp_initial;
      break;
    case TargetRule::Final:
      l.sbp = r.sbp_final;
      l.dbp = r.dbp_final;
      break;
  }
  l.hypertensive = label_hypertension(l.sbp, l.dbp);
  return l;
}

ExampleSet build_examples(const std::vector<ParticipantRecord>& records, const FeatureTable& features,
                          TargetRule rule) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < features.ids.size(); ++i) row_of.emplace(features.ids[i], i);
  std::set<std::string> seen;
  ExampleSet set;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw Error(ErrorCode::DuplicateId, "participant id " + r.id + " repeated");
    const auto it = row_of.find(r.id);
    if (it == row_of.end()) throw Error(ErrorCode::MissingFeatures, "no feature row for participant " + r.id);
    LabeledExample ex;
    ex.participant_id = r.id;
    ex.features.names = features.names;
    ex.features.values = features.rows[it->second];
    ex.label = target_for(r, rule);
    set.vect_1.push_back(r.id);
    set.vect_2.push_back(ex.label);
    set.examples.push_back(std::move(ex));
  }
  return set;
}

std::vector<double> Scaler::transform(const std::vector<double>& row) const {
  if (row.size() != offset.size()) throw Error(ErrorCode::ShapeMismatch, "scaler width differs from row width");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (scale[j] == 0.0) {
      out[j] = kind == ScalerKind::MinMax ? 0.5 : 0.0;
    } else {
      out[j] = (row[j] - offset[j]) / scale[j];
    }
  }
  return out;
}

std::vector<double> Scaler::inverse(const std::vector<double>& row) const {
  if (row.size() != offset.size()) throw Error(ErrorCode::ShapeMismatch, "scaler width differs from row width");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = scale[j] == 0.0 ? offset[j] : row[j] * scale[j] + offset[j];
  return out;
}

std::vector<std::vector<double>> Scaler::transform(const std::vector<std::vector<double>>& rows) const {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(transform(r));
  return out;
}

Scaler fit_scaler(const std::vector<std::vector<double>>& rows, ScalerKind kind,
                  std::optional<ConstantPolicy> constant_policy) {
  if (rows.size() < 2) throw Error(ErrorCode::TooFewExamples, "scaler needs >= 2 training rows");
  const std::size_t d = rows.front().size();
  Scaler s;
  s.kind = kind;
  s.constant_policy = constant_policy.value_or(kind == ScalerKind::MinMax ? ConstantPolicy::Center : ConstantPolicy::Reject);
  s.offset.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < d; ++j) {
    if (kind == ScalerKind::MinMax) {
      double lo = rows[0][j], hi = rows[0][j];
      for (const auto& r : rows) {
        lo = std::min(lo, r[j]);
        hi = std::max(hi, r[j]);
      }
      s.offset[j] = lo;
      s.scale[j] = hi - lo;
    } else {
      double mean = 0.0;
      for (const auto& r : rows) mean += r[j];
      mean /= n;
      double var = 0.0;
      for (const auto& r : rows) var += (r[j] - mean) * (r[j] - mean);
      s.offset[j] = mean;
      s.scale[j] = std::sqrt(var / n);
    }
    if (s.scale[j] == 0.0 && kind == ScalerKind::Standard && s.constant_policy == ConstantPolicy::Reject) {
      throw Error(ErrorCode::DegenerateFeature, "feature " + std::to_string(j) + " has zero variance");
    }
  }
  return s;
}

Split stratified_split(const std::vector<bool>& classes, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "test_fraction must lie in (0, 1)");
  }
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < classes.size(); ++i) members[classes[i] ? 1 : 0].push_back(i);
  for (const auto& m : members) {
    if (m.size() < 2) throw Error(ErrorCode::TooFewExamples, "each class needs >= 2 examples to split");
  }
  const auto total = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(classes.size())));
  std::array<std::size_t, 2> take{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double exact = test_fraction * static_cast<double>(members[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    assigned += take[c];
  }
  while (assigned < total) {
    const int c = remainder[1] > remainder[0] ? 1 : 0;
    ++take[c];
    remainder[c] = -1.0;
    ++assigned;
  }
  Split out;
  for (int c = 0; c < 2; ++c) {
    take[c] = std::min(take[c], members[c].size() - 1);
    Rng rng(derive_seed(seed, {0x5717ULL, static_cast<std::uint64_t>(c)}));
    rng.shuffle(std::span<std::size_t>(members[c]));
    out.test.insert(out.test.end(), members[c].begin(), members[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
    out.train.insert(out.train.end(), members[c].begin() + static_cast<std::ptrdiff_t>(take[c]), members[c].end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

CohortProfile default_cohort_profile() {
  CohortProfile p;
  p.female.sbp = {153, 91, 114.28, 15.74};
  p.female.dbp = {98, 35, 77.42, 13.30};
  p.female.heart_rate = {111, 46, 75.26, (111.0 - 46.0) / 6.0};
  p.female.age = {48, 20, 29.9, 9.14};
  p.male.sbp = {153, 86, 119.7, 13.73};
  p.male.dbp = {91, 48, 79.88, 17.01};
  p.male.heart_rate = {128, 58, 71.25, (128.0 - 58.0) / 6.0};
  p.male.age = {46, 20, 29.42, 6.37};
  return p;
}

double planted_f0(Sex sex, double sbp_target) {
  const double base = sex == Sex::Female ? 170.0 : 95.0;
  return base + 1.0 * (sbp_target - 80.0);
}

namespace {

void check_stats(const RangeStats& s, const char* what) {
  if (!(s.min <= s.mean && s.mean <= s.max) || !(s.stddev >= 0.0)) {
    throw Error(ErrorCode::InvalidProfile, std::string(what) + " statistics are inconsistent");
  }
}

double clipped_normal(Rng& rng, const RangeStats& s) { return std::clamp(rng.normal(s.mean, s.stddev), s.min, s.max); }

}  // namespace

std::vector<CohortMember> synthesize_cohort(const CohortProfile& profile, std::size_t n_female, std::size_t n_male,
                                            std::uint64_t seed) {
  for (const auto* sp : {&profile.female, &profile.male}) {
    check_stats(sp->sbp, "SBP");
    check_stats(sp->dbp, "DBP");
    check_stats(sp->heart_rate, "heart rate");
    check_stats(sp->age, "age");
    if (sp->dbp.min >= sp->sbp.min) throw Error(ErrorCode::InvalidProfile, "DBP range must sit below SBP range");
  }
  if (!(profile.sbp_dbp_coupling >= -1.0 && profile.sbp_dbp_coupling <= 1.0)) {
    throw Error(ErrorCode::InvalidProfile, "coupling must lie in [-1, 1]");
  }
  const double rho = profile.sbp_dbp_coupling;
  const double rho_c = std::sqrt(1.0 - rho * rho);

  std::vector<CohortMember> cohort;
  cohort.reserve(n_female + n_male);
  Rng rng(derive_seed(seed, {0xC0407ULL}));
  for (std::size_t i = 0; i < n_female + n_male; ++i) {
    const bool female = i < n_female;
    const SexProfile& sp = female ? profile.female : profile.male;
    CohortMember m;
    ParticipantRecord& r = m.record;
    char id[16];
    std::snprintf(id, sizeof id, "%c%03zu", female ? 'F' : 'M', female ? i + 1 : i - n_female + 1);
    r.id = id;
    r.sex = female ? Sex::Female : Sex::Male;

    // Draw order per member: z_sbp, z_dbp, jitter_sbp, jitter_dbp, age, heart rate, 3 formant jitters.
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double sbp_t = std::clamp(sp.sbp.mean + sp.sbp.stddev * z1, sp.sbp.min, sp.sbp.max);
    const double dbp_raw = sp.dbp.mean + sp.dbp.stddev * (rho * z1 + rho_c * z2);
    const double dbp_t = std::clamp(dbp_raw, sp.dbp.min, std::min(sp.dbp.max, sbp_t - 20.0));
    const double js = rng.normal(0.0, profile.reading_jitter_sbp);
    const double jd = rng.normal(0.0, profile.reading_jitter_dbp);
    const auto reading = [](double v, const RangeStats& s) { return std::clamp(std::round(v), s.min, s.max); };
    r.sbp_initial = reading(sbp_t + js, sp.sbp);
    r.sbp_final = reading(sbp_t - js, sp.sbp);
    r.dbp_initial = std::min(reading(dbp_t + jd, sp.dbp), r.sbp_initial - 10.0);
    r.dbp_final = std::min(reading(dbp_t - jd, sp.dbp), r.sbp_final - 10.0);
    r.age = std::round(clipped_normal(rng, sp.age));
    r.heart_rate = std::round(clipped_normal(rng, sp.heart_rate));

    m.f0_hz = planted_f0(r.sex, target_for(r).sbp);
    for (const auto& f : default_vowel_formants()) m.formants.push_back({f.hz * rng.uniform(0.96, 1.04), f.gain});
    m.audio_seed = derive_seed(seed, {0xA0D10ULL, static_cast<std::uint64_t>(i)});
    r.wav_paths = {r.id + ".wav"};
    validate_record(r);
    cohort.push_back(std::move(m));
  }
  return cohort;
}

std::vector<std::vector<double>> render_member_audio(const CohortMember& member, const VoiceLayout& layout) {
  const int sr = layout.sample_rate;
  const auto vowel = synthesize_speech(member.f0_hz, member.formants, layout.vowel_s, sr, member.audio_seed);
  const auto lead = static_cast<std::size_t>(std::llround(layout.lead_silence_s * sr));
  const auto tail = static_cast<std::size_t>(std::llround(layout.tail_silence_s * sr));
  const std::size_t n = lead + vowel.samples.size() + tail;
  Rng rng(derive_seed(member.audio_seed, {0xA3B1ULL}));
  std::vector<std::vector<double>> ch(2, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double s = layout.ambient_noise * rng.normal();
    if (i >= lead && i < lead + vowel.samples.size()) s += layout.vowel_peak * vowel.samples[i - lead];
    ch[0][i] = s;
    ch[1][i] = 0.95 * s;
  }
  return ch;
}

std::vector<std::vector<double>> correlation_matrix(const std::vector<std::vector<double>>& columns) {
  const std::size_t d = columns.size();
  if (d == 0) return {};
  const std::size_t n = columns.front().size();
  if (n < 3) throw Error(ErrorCode::TooFewExamples, "correlation needs >= 3 rows");
  std::vector<std::vector<double>> centered(d);
  std::vector<double> norm(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (columns[j].size() != n) throw Error(ErrorCode::LengthMismatch, "columns differ in length");
    double mean = 0.0;
    for (double v : columns[j]) mean += v;
    mean /= static_cast<double>(n);
    centered[j].resize(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      centered[j][i] = columns[j][i] - mean;
      ss += centered[j][i] * centered[j][i];
    }
    if (!(ss > 0.0)) throw Error(ErrorCode::ConstantColumn, "column " + std::to_string(j) + " is constant");
    norm[j] = std::sqrt(ss);
  }
  std::vector<std::vector<double>> r(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a) {
    r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < d; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += centered[a][i] * centered[b][i];
      const double v = std::clamp(dot / (norm[a] * norm[b]), -1.0, 1.0);
      r[a][b] = v;
      r[b][a] = v;
    }
  }
  return r;
}

std::vector<ParticipantRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidConfig, "manifest is empty");
  const auto header = split_on(line, ',');
  const std::vector<std::string> expected = {"id",          "sex",       "age",        "sbp_initial", "sbp_final",
                                             "dbp_initial", "dbp_final", "heart_rate", "wav_path"};
  if (header != expected) throw Error(ErrorCode::InvalidConfig, "manifest header does not match the expected columns");
  std::vector<ParticipantRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_on(line, ',');
    if (cells.size() != expected.size()) {
      throw Error(ErrorCode::InvalidConfig, "manifest line " + std::to_string(line_no) + " has wrong column count");
    }
    ParticipantRecord r;
    try {
      r.id = cells[0];
      if (cells[1] == "F") {
        r.sex = Sex::Female;
      } else if (cells[1] == "M") {
        r.sex = Sex::Male;
      } else {
        throw Error(ErrorCode::InvalidConfig, "sex must be F or M");
      }
      r.age = std::stod(cells[2]);
      r.sbp_initial = std::stod(cells[3]);
      r.sbp_final = std::stod(cells[4]);
      r.dbp_initial = std::stod(cells[5]);
      r.dbp_final = std::stod(cells[6]);
      if (!cells[7].empty()) r.heart_rate = std::stod(cells[7]);
      for (auto& p : split_on(cells[8], ';')) {
        if (!p.empty()) r.wav_paths.push_back(p);
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidConfig, "manifest line " + std::to_string(line_no) + " has a non-numeric field");
    }
    validate_record(r);
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ParticipantRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest " + path.string());
  out << "id,sex,age,sbp_initial,sbp_final,dbp_initial,dbp_final,heart_rate,wav_path\n";
  for (const auto& r : records) {
    out << r.id << ',' << (r.sex == Sex::Female ? 'F' : 'M') << ',' << num(r.age) << ',' << num(r.sbp_initial) << ','
        << num(r.sbp_final) << ',' << num(r.dbp_initial) << ',' << num(r.dbp_final) << ','
        << (r.heart_rate ? num(*r.heart_rate) : std::string{}) << ',';
    for (std::size_t i = 0; i < r.wav_paths.size(); ++i) out << (i ? ";" : "") << r.wav_paths[i];
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace vbp
