#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace onelatent::model {

inline constexpr std::string_view kBeginLatent = "<|begin-latent|>";
inline constexpr std::string_view kLatent = "<|latent|>";
inline constexpr std::string_view kEndLatent = "<|end-latent|>";

// Word-level tokenizer for the synthetic task corpora.
//
// Pieces: runs of ASCII letters, single digits, runs of '#', and any other
// single non-space code point. Ids 0..3 are PAD, BOS, EOS, UNK; the base
// vocabulary follows in sorted order, and special tokens appended later keep
// their insertion order.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Tokenizer();

  // Base vocabulary: the union of pieces across `texts`.
  static Tokenizer build(const std::vector<std::string>& texts);
  // Restores a tokenizer from its ordered token list (checkpoint loading).
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // Appends a token and returns its id; throws if it already exists.
  int add_token(std::string token);

  int id(std::string_view token) const;  // -1 when absent
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace onelatent::model
