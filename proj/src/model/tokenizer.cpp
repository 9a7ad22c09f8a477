#include "onelatent/model/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "onelatent/util/error.hpp"

namespace onelatent::model {

namespace {

bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

bool attaches_left(const std::string& t) { return t == "." || t == "," || t == "?" || t == "!" || t == ")"; }

}  // namespace

Tokenizer::Tokenizer() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add_token(s);
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_letter(c)) {
      std::size_t j = i;
      while (j < text.size() && is_letter(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (c == '#') {
      std::size_t j = i;
      while (j < text.size() && text[j] == '#') ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      const std::size_t n = is_digit(c) ? 1 : std::min(utf8_len(c), text.size() - i);
      out.emplace_back(text.substr(i, n));
      i += n;
    }
  }
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
  std::set<std::string> pieces;
  for (const auto& t : texts) {
    for (auto& p : split(t)) pieces.insert(std::move(p));
  }
  Tokenizer tok;
  for (const auto& p : pieces) tok.add_token(p);
  return tok;
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<bos>" || tokens[2] != "<eos>" ||
      tokens[3] != "<unk>") {
    throw FormatError("tokenizer: token list must start with <pad> <bos> <eos> <unk>");
  }
  Tokenizer tok;
  for (std::size_t i = 4; i < tokens.size(); ++i) tok.add_token(std::move(tokens[i]));
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : split(text)) {
    const int i = id(p);
    ids.push_back(i < 0 ? kUnk : i);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  std::string prev;
  for (int i : ids) {
    const std::string& t = token(i);
    const bool join = out.empty() || attaches_left(t) || prev == "(" ||
                      (t.size() == 1 && is_digit(static_cast<unsigned char>(t[0])) && prev.size() == 1 &&
                       is_digit(static_cast<unsigned char>(prev[0])));
    if (!join) out.push_back(' ');
    out += t;
    prev = t;
  }
  return out;
}

int Tokenizer::add_token(std::string token) {
  if (index_.contains(token)) throw ContractViolation("tokenizer: duplicate token " + token);
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

int Tokenizer::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractViolation("tokenizer: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

}  // namespace onelatent::model
