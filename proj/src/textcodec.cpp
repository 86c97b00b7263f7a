#include "vocalbp/textcodec.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vocalbp/error.hpp"

namespace vbp {

namespace {

constexpr const char* kSymbols[] = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", "-"};

bool is_numeric_word(const std::string& w) {
  if (w.empty()) return false;
  for (char c : w) {
    if (!((c >= '0' && c <= '9') || c == '.' || c == '-')) return false;
  }
  return true;
}

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& feature_names) {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (const auto& n : feature_names) tokens_.push_back(n);
  for (const char* s : kSymbols) tokens_.emplace_back(s);
  index();
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  if (v.tokens_.size() < 4 + std::size(kSymbols) || v.tokens_[0] != "[PAD]" || v.tokens_[1] != "[UNK]" ||
      v.tokens_[2] != "[CLS]" || v.tokens_[3] != "[SEP]") {
    throw Error(ErrorCode::InvalidConfig, "vocabulary must start with [PAD] [UNK] [CLS] [SEP]");
  }
  for (std::size_t i = 0; i < std::size(kSymbols); ++i) {
    if (v.tokens_[v.tokens_.size() - std::size(kSymbols) + i] != kSymbols[i]) {
      throw Error(ErrorCode::InvalidConfig, "vocabulary must end with the digit and symbol tokens");
    }
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::InvalidConfig, "duplicate vocabulary token " + tokens_[i]);
    }
  }
  first_symbol_ = tokens_.size() - std::size(kSymbols);
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::UnknownId, "token id " + std::to_string(id) + " is outside the vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_word(int id) const {
  return id > kSepId && static_cast<std::size_t>(id) < first_symbol_;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<std::string> tokens(j.size());
  for (const auto& [tok, id] : j.items()) {
    const auto i = id.get<std::size_t>();
    if (i >= tokens.size() || !tokens[i].empty()) throw Error(ErrorCode::InvalidConfig, "vocabulary ids are not dense");
    tokens[i] = tok;
  }
  return from_tokens(std::move(tokens));
}

std::string serialize_features(const std::vector<std::string>& names, const std::vector<double>& values,
                               int decimals) {
  if (names.size() != values.size()) throw Error(ErrorCode::LengthMismatch, "names and values differ in count");
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!std::isfinite(values[i])) throw Error(ErrorCode::NonFiniteValue, "feature " + names[i] + " is not finite");
    double v = values[i];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string text = buf;
    // "-0.00" carries no sign information.
    if (text.front() == '-' && text.find_first_not_of("-0.") == std::string::npos) text.erase(0, 1);
    if (i) out += ' ';
    out += names[i];
    out += ' ';
    out += text;
  }
  return out;
}

std::string serialize_features(const FeatureVector& v, int decimals) {
  return serialize_features(v.names, v.values, decimals);
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw Error(ErrorCode::InvalidConfig, "max_len must be >= 3");
  std::vector<int> content;
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    if (vocab.contains(w) && vocab.is_word(vocab.id(w))) {
      content.push_back(vocab.id(w));
    } else if (is_numeric_word(w)) {
      for (char c : w) content.push_back(vocab.id(std::string(1, c)));
    } else {
      content.push_back(kUnkId);
    }
  }
  if (content.size() > max_len - 2) content.resize(max_len - 2);

  TokenSequence seq;
  seq.input_ids.assign(max_len, kPadId);
  seq.attention_mask.assign(max_len, 0);
  seq.input_ids[0] = kClsId;
  std::copy(content.begin(), content.end(), seq.input_ids.begin() + 1);
  seq.true_length = content.size() + 2;
  seq.input_ids[seq.true_length - 1] = kSepId;
  std::fill(seq.attention_mask.begin(), seq.attention_mask.begin() + static_cast<std::ptrdiff_t>(seq.true_length), 1);
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  bool in_number = false;
  const auto start_word = [&] {
    if (!out.empty()) out += ' ';
  };
  for (std::size_t i = 0; i < seq.input_ids.size(); ++i) {
    if (i < seq.attention_mask.size() && seq.attention_mask[i] == 0) continue;
    const int id = seq.input_ids[i];
    const auto& tok = vocab.token(id);
    if (id == kPadId || id == kClsId || id == kSepId) {
      in_number = false;
      continue;
    }
    if (id == kUnkId) {
      start_word();
      out += "<unk>";
      in_number = false;
    } else if (vocab.is_word(id)) {
      start_word();
      out += tok;
      in_number = false;
    } else {
      if (!in_number) start_word();
      out += tok;
      in_number = true;
    }
  }
  return out;
}

void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab) {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSequence, what); };
  const std::size_t n = seq.input_ids.size();
  if (seq.attention_mask.size() != n) fail("ids and mask differ in length");
  if (seq.true_length < 2 || seq.true_length > n) fail("true_length out of range");
  for (std::size_t i = 0; i < n; ++i) {
    const int expected_mask = i < seq.true_length ? 1 : 0;
    if (seq.attention_mask[i] != expected_mask) fail("mask is not a prefix of ones of length true_length");
    if (seq.input_ids[i] < 0 || static_cast<std::size_t>(seq.input_ids[i]) >= vocab.size()) fail("id outside vocabulary");
    if (i >= seq.true_length && seq.input_ids[i] != kPadId) fail("non-[PAD] id at padded position " + std::to_string(i));
  }
  if (seq.input_ids[0] != kClsId) fail("sequence must start with [CLS]");
  if (seq.input_ids[seq.true_length - 1] != kSepId) fail("last real position must be [SEP]");
}

void write_sequences_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                         const std::vector<TokenSequence>& seqs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "id,true_length,input_ids\n";
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    out << ids[r] << ',' << seqs[r].true_length << ',';
    for (std::size_t i = 0; i < seqs[r].input_ids.size(); ++i) out << (i ? " " : "") << seqs[r].input_ids[i];
    out << '\n';
  }
}

}  // namespace vbp
