#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace mguard {

enum class Platform { kFacebook, kX, kNews, kOther };
enum class Source { kISOT, kLIAR, kPHEME, kFNN, kTruthSeeker, kLive };

std::string_view to_string(Platform p);
std::string_view to_string(Source s);
// Throws DataError on unknown names. Matching is case-insensitive.
Platform parse_platform(std::string_view name);
Source parse_source(std::string_view name);

struct RawPost {
  std::string id;
  Platform platform = Platform::kOther;
  std::string text;
  std::optional<std::string> raw_label;
  Source source = Source::kLive;
};

struct CleanText {
  std::string text;
  std::size_t ws_token_count = 0;

  friend bool operator==(const CleanText&, const CleanText&) = default;
};

inline constexpr std::string_view kUrlToken = "[URL]";
inline constexpr std::string_view kUserToken = "[USER]";
inline constexpr std::string_view kHashtagToken = "[HASHTAG]";

struct GateConfig {
  // Fraction of alphabetic characters that must be ASCII letters.
  double min_ascii_fraction = 0.9;
  std::size_t min_stopword_hits = 1;
  std::size_t min_tokens = 10;
};

// Normalizes posts identically at training and serving time:
//   1. HTML entity unescape (repeated until stable)
//   2. Unicode NFKC
//   3. contraction expansion from a bundled table
//   4. lower-casing (placeholder tokens are left as-is)
//   5. URLs -> [URL], @mentions -> [USER], #hashtags -> [HASHTAG]
//   6. emoji -> :alias: (unlisted emoji -> :emoji:)
//   7. whitespace collapse + trim
// The steps repeat until the output is a fixed point, so normalize is idempotent.
// Immutable after construction; safe to share between threads.
class TextNormalizer {
 public:
  // Table formats: `term<TAB>replacement` per line for contractions, `HEX<TAB>alias`
  // for emoji, one word per line for stopwords. Lines starting with '#' are comments.
  TextNormalizer(std::string_view contractions_tsv, std::string_view emoji_tsv,
                 std::string_view stopwords_txt);

  // Tables compiled into the library.
  static const TextNormalizer& builtin();
  // Loads contractions.tsv, emoji_aliases.tsv and stopwords.txt from `dir`.
  static TextNormalizer from_directory(const std::filesystem::path& dir);

  CleanText normalize(std::string_view text) const;
  bool english_gate(const CleanText& text, const GateConfig& config = {}) const;

  std::size_t contraction_count() const { return contractions_.size(); }
  std::size_t emoji_count() const { return emoji_.size(); }
  const std::unordered_set<std::string>& stopwords() const { return stopwords_; }

 private:
  std::string normalize_once(std::string_view text) const;
  std::string expand_contractions(std::string_view text) const;
  std::string replace_emoji(std::string_view text) const;

  std::unordered_map<std::string, std::string> contractions_;
  std::unordered_map<char32_t, std::string> emoji_;
  std::unordered_set<std::string> stopwords_;
};

bool length_gate(const CleanText& text, std::size_t min_tokens = 10);

std::size_t count_ws_tokens(std::string_view text);

// Single left-to-right pass; unknown entities are kept verbatim.
std::string html_unescape(std::string_view text);

}  // namespace mguard
