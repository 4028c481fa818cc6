#include "mateicl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>

#include "mateicl/error.hpp"

namespace mateicl {

namespace {

std::string byte_token_text(int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "<0x%02X>", b);
  return buf;
}

std::optional<int> parse_byte_token(std::string_view s) {
  if (s.size() != 6 || s.substr(0, 3) != "<0x" || s[5] != '>') return std::nullopt;
  int value = 0;
  for (char c : s.substr(3, 2)) {
    value <<= 4;
    if (c >= '0' && c <= '9') value |= c - '0';
    else if (c >= 'A' && c <= 'F') value |= c - 'A' + 10;
    else return std::nullopt;
  }
  return value;
}

std::string utf8_encode(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

SimpleTokenizer::SimpleTokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::array<bool, 256> have_byte{};
  byte_of_id_.assign(tokens_.size(), -1);
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    const std::string& t = tokens_[id];
    if (const auto b = parse_byte_token(t)) {
      if (!have_byte[*b]) {
        have_byte[*b] = true;
        byte_ids_[*b] = static_cast<TokenId>(id);
      }
      byte_of_id_[id] = *b;
      continue;
    }
    if (t.empty()) continue;
    if (text_ids_.emplace(t, static_cast<TokenId>(id)).second) longest_ = std::max(longest_, t.size());
  }
  for (int b = 0; b < 256; ++b) {
    if (have_byte[b]) continue;
    byte_ids_[b] = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(byte_token_text(b));
    byte_of_id_.push_back(b);
  }
}

SimpleTokenizer SimpleTokenizer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return SimpleTokenizer(std::move(tokens));
}

std::vector<TokenId> SimpleTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  std::string probe;
  while (i < text.size()) {
    bool matched = false;
    for (std::size_t len = std::min(longest_, text.size() - i); len > 0; --len) {
      probe.assign(text.substr(i, len));
      if (const auto it = text_ids_.find(probe); it != text_ids_.end()) {
        ids.push_back(it->second);
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      ids.push_back(byte_ids_[static_cast<unsigned char>(text[i])]);
      ++i;
    }
  }
  return ids;
}

std::string SimpleTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id >= tokens_.size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    if (byte_of_id_[id] >= 0) {
      out += static_cast<char>(byte_of_id_[id]);
    } else {
      out += tokens_[id];
    }
  }
  return out;
}

std::optional<TokenId> SimpleTokenizer::lookup(std::string_view token) const {
  if (const auto b = parse_byte_token(token)) return byte_ids_[*b];
  if (const auto it = text_ids_.find(std::string(token)); it != text_ids_.end()) return it->second;
  return std::nullopt;
}

const std::array<std::string, 256>& BpeTokenizer::byte_symbols() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    std::uint32_t extra = 0;
    for (int b = 0; b < 256; ++b) {
      t[b] = utf8_encode(printable[b] ? static_cast<std::uint32_t>(b) : 256 + extra++);
    }
    return t;
  }();
  return table;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, TokenId> vocab,
                           std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)) {
  TokenId max_id = 0;
  for (const auto& [tok, id] : vocab_) max_id = std::max(max_id, id);
  id_to_token_.assign(vocab_.empty() ? 0 : max_id + 1, std::string());
  for (const auto& [tok, id] : vocab_) id_to_token_[id] = tok;
  for (int b = 0; b < 256; ++b) {
    if (!vocab_.contains(byte_symbols()[b])) {
      throw FormatError("BPE vocabulary lacks the symbol for byte " + std::to_string(b));
    }
  }
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto& [left, right] = merges[rank];
    for (const std::string* part : {&left, &right}) {
      if (!vocab_.contains(*part)) {
        throw FormatError("merge " + std::to_string(rank) + " uses unknown token '" + *part + "'");
      }
    }
    if (!vocab_.contains(left + right)) {
      throw FormatError("merge " + std::to_string(rank) + " produces unknown token '" + left + right + "'");
    }
    ranks_.emplace(merges[rank], rank);
  }
}

BpeTokenizer BpeTokenizer::from_files(const std::filesystem::path& vocab_path,
                                      const std::filesystem::path& merges_path) {
  std::ifstream vin(vocab_path);
  if (!vin) throw FormatError("cannot open BPE vocabulary '" + vocab_path.string() + "'");
  std::unordered_map<std::string, TokenId> vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(vin, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw FormatError("BPE vocabulary line " + std::to_string(line_no) + " has no tab");
    }
    try {
      vocab[line.substr(0, tab)] = static_cast<TokenId>(std::stoul(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw FormatError("BPE vocabulary line " + std::to_string(line_no) + " has a bad id");
    }
  }
  std::ifstream min(merges_path);
  if (!min) throw FormatError("cannot open BPE merges '" + merges_path.string() + "'");
  std::vector<std::pair<std::string, std::string>> merges;
  line_no = 0;
  while (std::getline(min, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line[0] == '#')) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || line.find(' ', space + 1) != std::string::npos) {
      throw FormatError("BPE merges line " + std::to_string(line_no) + " is not a pair");
    }
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::string> BpeTokenizer::pretokenize(std::string_view text) {
  enum class Kind { kLetter, kDigit, kSpace, kOther };
  const auto kind = [](unsigned char c) {
    if (c >= 0x80 || std::isalpha(c)) return Kind::kLetter;
    if (std::isdigit(c)) return Kind::kDigit;
    if (std::isspace(c)) return Kind::kSpace;
    return Kind::kOther;
  };
  std::vector<std::string> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (text[i] == '\'' && i + 1 < n) {
      const std::string_view rest = text.substr(i + 1);
      std::size_t len = 0;
      for (std::string_view suffix : {"re", "ve", "ll", "s", "t", "m", "d"}) {
        if (rest.substr(0, suffix.size()) == suffix) {
          len = suffix.size() + 1;
          break;
        }
      }
      if (len > 0) {
        out.emplace_back(text.substr(i, len));
        i += len;
        continue;
      }
    }
    std::size_t start = i;
    std::size_t j = i;
    if (text[j] == ' ' && j + 1 < n && kind(text[j + 1]) != Kind::kSpace) ++j;
    const Kind k = kind(text[j]);
    if (k != Kind::kSpace) {
      while (j < n && kind(text[j]) == k) ++j;
      out.emplace_back(text.substr(start, j - start));
      i = j;
      continue;
    }
    while (j < n && kind(text[j]) == Kind::kSpace) ++j;
    // A whitespace run followed by a word leaves its last character to that word.
    if (j < n && j - start > 1) --j;
    out.emplace_back(text.substr(start, j - start));
    i = j;
  }
  return out;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
  std::vector<std::string> parts;
  for (unsigned char c : word) parts.push_back(byte_symbols()[c]);
  while (parts.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::pair<std::string, std::string> best;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      const auto it = ranks_.find({parts[i], parts[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<std::string> merged;
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == best.first && parts[i + 1] == best.second) {
        merged.push_back(parts[i] + parts[i + 1]);
        i += 2;
      } else {
        merged.push_back(parts[i]);
        ++i;
      }
    }
    parts = std::move(merged);
  }
  return parts;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const std::string& word : pretokenize(text)) {
    for (const std::string& piece : bpe(word)) {
      const auto it = vocab_.find(piece);
      if (it == vocab_.end()) throw FormatError("BPE produced token '" + piece + "' missing from vocabulary");
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
  static const std::unordered_map<std::string, unsigned char> reverse = [] {
    std::unordered_map<std::string, unsigned char> r;
    for (int b = 0; b < 256; ++b) r.emplace(byte_symbols()[b], static_cast<unsigned char>(b));
    return r;
  }();
  std::string out;
  for (TokenId id : ids) {
    if (id >= id_to_token_.size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    const std::string& tok = id_to_token_[id];
    for (std::size_t i = 0; i < tok.size();) {
      const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(tok[i])), tok.size() - i);
      const auto it = reverse.find(tok.substr(i, len));
      if (it == reverse.end()) throw FormatError("BPE token '" + tok + "' is not byte-mapped text");
      out += static_cast<char>(it->second);
      i += len;
    }
  }
  return out;
}

std::vector<TokenId> IdTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view word = text.substr(i, j - i);
    std::uint64_t id = 0;
    const auto [end, ec] = std::from_chars(word.data(), word.data() + word.size(), id);
    if (ec != std::errc() || end != word.data() + word.size() || id >= vocab_size_) {
      throw VocabError("'" + std::string(word) + "' is not a token id below " + std::to_string(vocab_size_));
    }
    out.push_back(static_cast<TokenId>(id));
    i = j;
  }
  return out;
}

std::string IdTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (const TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += std::to_string(id);
  }
  return out;
}

}  // namespace mateicl
