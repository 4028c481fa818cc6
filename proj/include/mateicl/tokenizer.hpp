#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mateicl/model.hpp"

namespace mateicl {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

/// Greedy longest-match over a token table with byte fallback. Byte tokens are
/// spelled "<0xHH>"; any of the 256 missing from the table are appended after
/// the last entry so that every input can be encoded.
class SimpleTokenizer final : public Tokenizer {
 public:
  explicit SimpleTokenizer(std::vector<std::string> tokens);
  /// One token per line, id = line index.
  static SimpleTokenizer from_file(const std::filesystem::path& path);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return tokens_.size(); }

  std::optional<TokenId> lookup(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> text_ids_;  // excludes byte tokens
  std::array<TokenId, 256> byte_ids_{};
  std::vector<int> byte_of_id_;  // -1 for ordinary tokens
  std::size_t longest_ = 0;
};

/// Whitespace-separated decimal token ids, for models without a text
/// vocabulary. decode joins ids with single spaces.
class IdTokenizer final : public Tokenizer {
 public:
  explicit IdTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {}

  /// Throws VocabError for anything that is not an id below vocab_size.
  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return vocab_size_; }

 private:
  std::size_t vocab_size_;
};

/// Byte-level BPE in the GPT-2 style: bytes are mapped to printable code
/// points, pre-tokenised, merged by ascending merge rank and looked up.
class BpeTokenizer final : public Tokenizer {
 public:
  /// Throws FormatError when a merge refers to a token missing from the
  /// vocabulary or a byte symbol is missing.
  BpeTokenizer(std::unordered_map<std::string, TokenId> vocab,
               std::vector<std::pair<std::string, std::string>> merges);
  /// vocab: "token<TAB>id" per line; merges: optional "#" header line, then
  /// "left right" per line.
  static BpeTokenizer from_files(const std::filesystem::path& vocab_path,
                                 const std::filesystem::path& merges_path);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return id_to_token_.size(); }

  /// Splits text into pre-tokens (contractions, optionally space-prefixed
  /// letter/digit/symbol runs, whitespace runs). Letters are ASCII letters and
  /// any non-ASCII byte.
  static std::vector<std::string> pretokenize(std::string_view text);
  /// The printable code point (as UTF-8) standing in for each byte.
  static const std::array<std::string, 256>& byte_symbols();

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_token_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

}  // namespace mateicl
