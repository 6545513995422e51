#include "mguard/textnorm.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "mguard/error.hpp"
#include "mguard/resources.hpp"

namespace mguard {
namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one code point at `i`, advancing it. Malformed bytes yield U+FFFD.
char32_t next_codepoint(std::string_view s, std::size_t& i) {
  UChar32 c;
  int32_t pos = static_cast<int32_t>(i);
  U8_NEXT(reinterpret_cast<const uint8_t*>(s.data()), pos, static_cast<int32_t>(s.size()), c);
  i = static_cast<std::size_t>(pos);
  return c < 0 ? char32_t{0xFFFD} : static_cast<char32_t>(c);
}

char32_t peek_codepoint(std::string_view s, std::size_t i) { return next_codepoint(s, i); }

// Code point ending just before `i`, or 0 at the start.
char32_t prev_codepoint(std::string_view s, std::size_t i) {
  if (i == 0) return 0;
  std::size_t start = i - 1;
  while (start > 0 && (static_cast<unsigned char>(s[start]) & 0xC0) == 0x80) --start;
  return next_codepoint(s, start);
}

bool is_word_char(char32_t c) { return c == U'_' || u_isalnum(static_cast<UChar32>(c)); }

struct Entity {
  std::string_view name;
  char32_t cp;
};

constexpr std::array<Entity, 34> kEntities{{
    {"amp", U'&'},       {"lt", U'<'},        {"gt", U'>'},        {"quot", U'"'},
    {"apos", U'\''},     {"nbsp", 0xA0},      {"hellip", 0x2026},  {"mdash", 0x2014},
    {"ndash", 0x2013},   {"lsquo", 0x2018},   {"rsquo", 0x2019},   {"ldquo", 0x201C},
    {"rdquo", 0x201D},   {"sbquo", 0x201A},   {"bdquo", 0x201E},   {"copy", 0xA9},
    {"reg", 0xAE},       {"trade", 0x2122},   {"euro", 0x20AC},    {"pound", 0xA3},
    {"cent", 0xA2},      {"yen", 0xA5},       {"laquo", 0xAB},     {"raquo", 0xBB},
    {"middot", 0xB7},    {"bull", 0x2022},    {"deg", 0xB0},       {"times", 0xD7},
    {"divide", 0xF7},    {"para", 0xB6},      {"sect", 0xA7},      {"frac12", 0xBD},
    {"iexcl", 0xA1},     {"iquest", 0xBF},
}};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') fn(line);
    start = end + 1;
  }
}

bool is_apostrophe_at(std::string_view s, std::size_t i, std::size_t* len) {
  if (s[i] == '\'') {
    *len = 1;
    return true;
  }
  // U+2019 RIGHT SINGLE QUOTATION MARK
  if (s.substr(i, 3) == "\xE2\x80\x99") {
    *len = 3;
    return true;
  }
  return false;
}

bool is_ascii_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

constexpr std::array<std::string_view, 3> kPlaceholders{kUrlToken, kUserToken, kHashtagToken};

std::string lower_case(std::string_view text) {
  // Placeholders already in the text stay upper-case.
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t next = text.size();
    std::string_view found;
    for (auto ph : kPlaceholders) {
      std::size_t p = text.find(ph, i);
      if (p < next) {
        next = p;
        found = ph;
      }
    }
    std::string_view chunk = text.substr(i, next - i);
    if (!chunk.empty()) {
      icu::UnicodeString u = icu::UnicodeString::fromUTF8(
          icu::StringPiece(chunk.data(), static_cast<int32_t>(chunk.size())));
      u.toLower(icu::Locale::getRoot());
      u.toUTF8String(out);
    }
    if (next == text.size()) break;
    out.append(found);
    i = next + found.size();
  }
  return out;
}

std::string nfkc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status)) throw StateError("ICU NFKC normalizer unavailable");
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = norm->normalize(u, status);
  if (U_FAILURE(status)) throw DataError("NFKC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

bool starts_with_at(std::string_view s, std::size_t i, std::string_view prefix) {
  return s.substr(i, prefix.size()) == prefix;
}

std::string replace_placeholders(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const char32_t prev = prev_codepoint(s, i);
    const bool at_boundary = prev == 0 || !is_word_char(prev);
    if (starts_with_at(s, i, "http://") || starts_with_at(s, i, "https://") ||
        (at_boundary && starts_with_at(s, i, "www."))) {
      std::size_t j = i;
      while (j < s.size()) {
        std::size_t k = j;
        if (u_isUWhiteSpace(static_cast<UChar32>(next_codepoint(s, k)))) break;
        j = k;
      }
      out.append(kUrlToken);
      i = j;
      continue;
    }
    if ((s[i] == '@' || s[i] == '#') && at_boundary && i + 1 < s.size() &&
        is_word_char(peek_codepoint(s, i + 1))) {
      std::size_t j = i + 1;
      while (j < s.size()) {
        std::size_t k = j;
        if (!is_word_char(next_codepoint(s, k))) break;
        j = k;
      }
      out.append(s[i] == '@' ? kUserToken : kHashtagToken);
      i = j;
      continue;
    }
    std::size_t k = i;
    next_codepoint(s, k);
    out.append(s.substr(i, k - i));
    i = k;
  }
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t start = i;
    const char32_t c = next_codepoint(s, i);
    if (u_isUWhiteSpace(static_cast<UChar32>(c)) || c == 0x200B) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.append(s.substr(start, i - start));
  }
  return out;
}

bool is_emoji_joiner(char32_t c) {
  return c == 0xFE0F || c == 0xFE0E || c == 0x200D || c == 0x20E3 ||
         (c >= 0xE0020 && c <= 0xE007F) ||
         u_hasBinaryProperty(static_cast<UChar32>(c), UCHAR_EMOJI_MODIFIER);
}

bool is_emoji(char32_t c) {
  const auto uc = static_cast<UChar32>(c);
  return u_hasBinaryProperty(uc, UCHAR_EMOJI_PRESENTATION) ||
         (c >= 0x2000 && u_hasBinaryProperty(uc, UCHAR_EXTENDED_PICTOGRAPHIC));
}

}  // namespace

std::string_view to_string(Platform p) {
  switch (p) {
    case Platform::kFacebook: return "facebook";
    case Platform::kX: return "x";
    case Platform::kNews: return "news";
    case Platform::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::kISOT: return "ISOT";
    case Source::kLIAR: return "LIAR";
    case Source::kPHEME: return "PHEME";
    case Source::kFNN: return "FNN";
    case Source::kTruthSeeker: return "TruthSeeker";
    case Source::kLive: return "live";
  }
  return "live";
}

Platform parse_platform(std::string_view name) {
  const std::string n = ascii_lower(name);
  if (n == "facebook") return Platform::kFacebook;
  if (n == "x" || n == "twitter") return Platform::kX;
  if (n == "news") return Platform::kNews;
  if (n == "other") return Platform::kOther;
  throw DataError("unknown platform '" + std::string(name) + "'");
}

Source parse_source(std::string_view name) {
  const std::string n = ascii_lower(name);
  if (n == "isot") return Source::kISOT;
  if (n == "liar") return Source::kLIAR;
  if (n == "pheme") return Source::kPHEME;
  if (n == "fnn" || n == "fakenewsnet") return Source::kFNN;
  if (n == "truthseeker" || n == "ts") return Source::kTruthSeeker;
  if (n == "live") return Source::kLive;
  throw DataError("unknown source '" + std::string(name) + "'");
}

std::string html_unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    const std::size_t semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back(s[i++]);
      continue;
    }
    std::string_view body = s.substr(i + 1, semi - i - 1);
    bool done = false;
    if (body.size() >= 2 && body[0] == '#') {
      const bool hex = body[1] == 'x' || body[1] == 'X';
      std::string_view digits = body.substr(hex ? 2 : 1);
      const bool valid =
          !digits.empty() && std::all_of(digits.begin(), digits.end(), [hex](char c) {
            return hex ? std::isxdigit(static_cast<unsigned char>(c)) != 0
                       : std::isdigit(static_cast<unsigned char>(c)) != 0;
          });
      if (valid && digits.size() <= 7) {
        char32_t cp = static_cast<char32_t>(std::stoul(std::string(digits), nullptr, hex ? 16 : 10));
        if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
        append_utf8(out, cp);
        done = true;
      }
    } else {
      for (const auto& e : kEntities) {
        if (e.name == body) {
          append_utf8(out, e.cp);
          done = true;
          break;
        }
      }
    }
    if (done) {
      i = semi + 1;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

std::size_t count_ws_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

TextNormalizer::TextNormalizer(std::string_view contractions_tsv, std::string_view emoji_tsv,
                               std::string_view stopwords_txt) {
  for_each_line(contractions_tsv, [&](std::string_view line) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw DataError("malformed contraction line: " + std::string(line));
    contractions_.emplace(ascii_lower(line.substr(0, tab)), std::string(line.substr(tab + 1)));
  });
  for_each_line(emoji_tsv, [&](std::string_view line) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw DataError("malformed emoji line: " + std::string(line));
    const auto cp = static_cast<char32_t>(std::stoul(std::string(line.substr(0, tab)), nullptr, 16));
    emoji_.emplace(cp, std::string(line.substr(tab + 1)));
  });
  for_each_line(stopwords_txt, [&](std::string_view line) { stopwords_.insert(ascii_lower(line)); });
}

const TextNormalizer& TextNormalizer::builtin() {
  static const TextNormalizer instance(resources::contractions_tsv(), resources::emoji_aliases_tsv(),
                                       resources::stopwords_txt());
  return instance;
}

TextNormalizer TextNormalizer::from_directory(const std::filesystem::path& dir) {
  return TextNormalizer(read_file(dir / "contractions.tsv"), read_file(dir / "emoji_aliases.tsv"),
                        read_file(dir / "stopwords.txt"));
}

std::string TextNormalizer::expand_contractions(std::string_view s) const {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t alen = 0;
    if (!is_ascii_alnum(s[i]) && !is_apostrophe_at(s, i, &alen)) {
      out.push_back(s[i++]);
      continue;
    }
    // Maximal run of ASCII alphanumerics and apostrophes.
    std::size_t j = i;
    std::string key;
    while (j < s.size()) {
      if (is_ascii_alnum(s[j])) {
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[j]))));
        ++j;
      } else if (is_apostrophe_at(s, j, &alen)) {
        key.push_back('\'');
        j += alen;
      } else {
        break;
      }
    }
    std::string_view raw = s.substr(i, j - i);
    if (auto it = contractions_.find(key); it != contractions_.end()) {
      out.append(it->second);
    } else {
      // Retry without surrounding quote marks: "'don't'" -> "'do not'".
      std::size_t lead = 0;
      while (lead < key.size() && key[lead] == '\'') ++lead;
      std::size_t trail = 0;
      while (trail < key.size() - lead && key[key.size() - 1 - trail] == '\'') ++trail;
      auto inner = key.substr(lead, key.size() - lead - trail);
      auto it2 = (lead || trail) && !inner.empty() ? contractions_.find(inner) : contractions_.end();
      if (it2 != contractions_.end()) {
        out.append(std::string(lead, '\''));
        out.append(it2->second);
        out.append(std::string(trail, '\''));
      } else {
        out.append(raw);
      }
    }
    i = j;
  }
  return out;
}

std::string TextNormalizer::replace_emoji(std::string_view s) const {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  bool after_emoji = false;
  while (i < s.size()) {
    const std::size_t start = i;
    const char32_t c = next_codepoint(s, i);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      after_emoji = false;
      continue;
    }
    // Selectors, ZWJ and skin tones only vanish as part of an emoji sequence.
    if (after_emoji && is_emoji_joiner(c)) continue;
    if (auto it = emoji_.find(c); it != emoji_.end()) {
      out.append(" :").append(it->second).append(": ");
      after_emoji = true;
    } else if (!is_emoji_joiner(c) && is_emoji(c)) {
      out.append(" :emoji: ");
      after_emoji = true;
    } else {
      out.append(s.substr(start, i - start));
      after_emoji = false;
    }
  }
  return out;
}

std::string TextNormalizer::normalize_once(std::string_view text) const {
  std::string s(text);
  for (int pass = 0; pass < 16; ++pass) {
    std::string next = html_unescape(s);
    if (next == s) break;
    s = std::move(next);
  }
  s = nfkc(s);
  s = expand_contractions(s);
  s = lower_case(s);
  s = replace_placeholders(s);
  s = replace_emoji(s);
  return collapse_whitespace(s);
}

CleanText TextNormalizer::normalize(std::string_view text) const {
  // A placeholder can expose a contraction or entity that was glued to a URL
  // on the first pass, so the pipeline is repeated until the text is stable.
  std::string s = normalize_once(text);
  for (int pass = 0; pass < 8; ++pass) {
    std::string next = normalize_once(s);
    if (next == s) break;
    s = std::move(next);
  }
  CleanText out;
  out.ws_token_count = count_ws_tokens(s);
  out.text = std::move(s);
  return out;
}

bool TextNormalizer::english_gate(const CleanText& text, const GateConfig& config) const {
  std::string_view s = text.text;
  std::size_t alpha = 0;
  std::size_t ascii = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const char32_t c = next_codepoint(s, i);
    if (u_isalpha(static_cast<UChar32>(c))) {
      ++alpha;
      if (c < 0x80) ++ascii;
    }
  }
  if (alpha == 0) return false;
  if (static_cast<double>(ascii) < config.min_ascii_fraction * static_cast<double>(alpha)) return false;

  std::size_t hits = 0;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t end = s.find(' ', pos);
    if (end == std::string_view::npos) end = s.size();
    std::string_view tok = s.substr(pos, end - pos);
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
    if (!tok.empty() && stopwords_.count(std::string(tok))) {
      if (++hits >= config.min_stopword_hits) return true;
    }
    pos = end + 1;
  }
  return hits >= config.min_stopword_hits;
}

bool length_gate(const CleanText& text, std::size_t min_tokens) {
  return text.ws_token_count >= min_tokens;
}

}  // namespace mguard
