#include "mguard/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "mguard/error.hpp"

namespace mguard {
namespace {

constexpr std::string_view kSpecials[] = {kPadToken, kUnkToken, kClsToken, kSepToken,
                                          kUrlToken, kUserToken, kHashtagToken};

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

// Byte offsets of code point starts, plus the end offset.
std::vector<std::size_t> char_offsets(std::string_view word) {
  std::vector<std::size_t> off;
  std::size_t i = 0;
  while (i < word.size()) {
    off.push_back(i);
    i = std::min(word.size(), i + utf8_len(static_cast<unsigned char>(word[i])));
  }
  off.push_back(word.size());
  return off;
}

template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end > pos) fn(text.substr(pos, end - pos));
    pos = end;
  }
}

bool is_special(std::string_view w) {
  return std::find(std::begin(kSpecials), std::end(kSpecials), w) != std::end(kSpecials);
}

std::vector<std::string> ranked(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  // std::map iterates lexicographically, so a stable sort on count keeps the tie-break.
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(v.size());
  for (auto& [k, c] : v) out.push_back(std::move(k));
  return out;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      if (is_special(tokens_[i])) throw DataError("special token " + tokens_[i] + " appears more than once");
      // Published vocabularies occasionally repeat ordinary entries; keep the first.
    }
  }
  if (tokens_.empty() || tokens_[0] != kPadToken) throw DataError("vocabulary must start with [PAD] at id 0");
  auto need = [&](std::string_view t) {
    auto id = find(t);
    if (!id) throw DataError("vocabulary lacks " + std::string(t));
    return *id;
  };
  unk_ = need(kUnkToken);
  cls_ = need(kClsToken);
  sep_ = need(kSepToken);
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    tokens.emplace_back(line);
    start = end + 1;
  }
  return Vocab(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  out << serialize();
}

Vocab build_vocab(std::span<const CleanText> corpus, std::size_t size) {
  const std::size_t n_special = std::size(kSpecials);
  // Room for at least one token beyond the specials.
  if (size <= n_special)
    throw ConfigError("vocabulary size " + std::to_string(size) + " is below the minimum " +
                      std::to_string(n_special + 1));

  std::map<std::string, std::size_t> chars, words, suffixes;
  for (const auto& t : corpus) {
    for_each_word(t.text, [&](std::string_view w) {
      if (is_special(w)) return;
      ++words[std::string(w)];
      const auto off = char_offsets(w);
      const std::size_t n = off.size() - 1;
      for (std::size_t i = 0; i < n; ++i) ++chars[std::string(w.substr(off[i], off[i + 1] - off[i]))];
      for (std::size_t len = 2; len <= 6 && len < n; ++len) {
        const std::size_t b = off[n - len];
        ++suffixes["##" + std::string(w.substr(b))];
      }
    });
  }

  std::vector<std::string> tokens(std::begin(kSpecials), std::end(kSpecials));
  std::unordered_map<std::string, bool> present;
  for (const auto& t : tokens) present[t] = true;
  auto admit = [&](std::string t) {
    if (tokens.size() >= size || present.count(t)) return;
    present[t] = true;
    tokens.push_back(std::move(t));
  };
  for (const auto& c : ranked(chars)) {
    admit(c);
    admit("##" + c);
  }
  for (auto& w : ranked(words)) admit(std::move(w));
  for (auto& s : ranked(suffixes)) admit(std::move(s));
  return Vocab(std::move(tokens));
}

std::size_t TokenSeq::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<std::int32_t> wordpiece(const Vocab& vocab, std::string_view word) {
  if (auto id = vocab.find(word)) return {*id};
  const auto off = char_offsets(word);
  const std::size_t n = off.size() - 1;
  if (n > kMaxWordChars) return {vocab.unk_id()};
  std::vector<std::int32_t> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < n) {
    std::size_t end = n;
    std::optional<std::int32_t> match;
    while (end > start) {
      candidate.clear();
      if (start > 0) candidate = "##";
      candidate.append(word.substr(off[start], off[end] - off[start]));
      match = vocab.find(candidate);
      if (match) break;
      --end;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

std::vector<std::int32_t> tokenize(const Vocab& vocab, std::string_view text) {
  std::vector<std::int32_t> ids;
  for_each_word(text, [&](std::string_view w) {
    const auto p = wordpiece(vocab, w);
    ids.insert(ids.end(), p.begin(), p.end());
  });
  return ids;
}

TokenSeq encode(const Vocab& vocab, const CleanText& text, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  auto pieces = tokenize(vocab, text.text);
  if (pieces.size() > max_len - 2) pieces.resize(max_len - 2);
  TokenSeq seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(vocab.cls_id());
  seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.end());
  seq.ids.push_back(vocab.sep_id());
  seq.mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, vocab.pad_id());
  seq.mask.resize(max_len, 0);
  return seq;
}

}  // namespace mguard
