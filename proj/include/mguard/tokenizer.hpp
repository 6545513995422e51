#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mguard/textnorm.hpp"

namespace mguard {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::size_t kDefaultMaxLen = 280;
inline constexpr std::size_t kMaxWordChars = 100;

// WordPiece vocabulary. Ids are line numbers of the BERT-style vocab file;
// [PAD] must be id 0. Placeholders are optional so published vocabularies
// load; when absent they encode as [UNK].
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  static Vocab parse(std::string_view text);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<std::int32_t> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::int32_t pad_id() const { return 0; }
  std::int32_t unk_id() const { return unk_; }
  std::int32_t cls_id() const { return cls_; }
  std::int32_t sep_id() const { return sep_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::int32_t unk_ = 0;
  std::int32_t cls_ = 0;
  std::int32_t sep_ = 0;
};

// Frequency-ranked vocabulary: specials, observed characters (plain and
// "##"), whole words, then "##" suffixes of 2..6 characters. Ties go to the
// lexicographically smaller string.
Vocab build_vocab(std::span<const CleanText> corpus, std::size_t size);

struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t length() const;  // number of mask=1 positions
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

// Greedy longest-match segmentation of one whitespace-free word.
std::vector<std::int32_t> wordpiece(const Vocab& vocab, std::string_view word);

// All pieces of a text, without [CLS]/[SEP] or truncation.
std::vector<std::int32_t> tokenize(const Vocab& vocab, std::string_view text);

// [CLS] pieces [SEP] [PAD]..., exactly max_len long.
TokenSeq encode(const Vocab& vocab, const CleanText& text, std::size_t max_len = kDefaultMaxLen);

}  // namespace mguard
