#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vocalbp/features.hpp"

namespace vbp {

inline constexpr std::size_t kMaxSequenceLength = 512;

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;

/// Closed vocabulary: 4 specials, one token per feature name, then '0'-'9', '.', '-'.
class Vocabulary {
 public:
  explicit Vocabulary(const std::vector<std::string>& feature_names);

  static Vocabulary from_tokens(std::vector<std::string> tokens);

  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] int id(const std::string& token) const;  // kUnkId when absent
  [[nodiscard]] bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  [[nodiscard]] const std::string& token(int id) const;
  [[nodiscard]] bool is_word(int id) const;  // feature-name tokens start a new word
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  Vocabulary() = default;
  void index();

  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  std::size_t first_symbol_ = 0;
};

struct TokenSequence {
  std::vector<int> input_ids;
  std::vector<int> attention_mask;
  std::size_t true_length = 0;
};

/// "name value" pairs joined by spaces; fixed-point values with `decimals` fraction digits.
std::string serialize_features(const FeatureVector& v, int decimals = 2);
std::string serialize_features(const std::vector<std::string>& names, const std::vector<double>& values,
                               int decimals = 2);

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len = kMaxSequenceLength);

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

/// Throws InvalidSequence unless the mask is a prefix of ones matching true_length, position 0 is
/// [CLS], the last real position is [SEP], and every padded position holds [PAD].
void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab);

void write_sequences_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                         const std::vector<TokenSequence>& seqs);

}  // namespace vbp
