#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "mguard/corpus.hpp"
#include "mguard/tokenizer.hpp"

using namespace mguard;

namespace {
CleanText ct(std::string s) { return TextNormalizer::builtin().normalize(s); }

Vocab toy() { return Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "un", "##able", "able"}); }

std::vector<CleanText> desk_texts() {
  const auto posts = read_raw_records(source_path("data/desk/desk_corpus.tsv"));
  std::vector<CleanText> out;
  for (const auto& r : ingest(posts, TextNormalizer::builtin()).records) out.push_back(r.text);
  return out;
}
}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("special ids") {
  const Vocab v = build_vocab({}, 20);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.pad_id() == 0);
  for (auto t : {"[UNK]", "[CLS]", "[SEP]", "[URL]", "[USER]", "[HASHTAG]"}) CHECK(v.find(t).has_value());
  CHECK_THROWS(Vocab({"[UNK]", "[PAD]", "[CLS]", "[SEP]"}));
  CHECK_THROWS(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[CLS]"}));
}

TEST_CASE("build_vocab examples") {
  const Vocab a = build_vocab(std::vector<CleanText>{ct("aa aa")}, 10);
  CHECK(a.find("aa").has_value());
  CHECK(a.size() == 10);
  const Vocab b = build_vocab(std::vector<CleanText>{ct("cat bat")}, 64);
  CHECK(*b.find("bat") < *b.find("cat"));
  CHECK_THROWS(build_vocab({}, 7));
}

TEST_CASE("wordpiece greedy longest match") {
  const Vocab v = toy();
  CHECK(wordpiece(v, "unable") == std::vector<std::int32_t>{4, 5});
  CHECK(wordpiece(v, "able") == std::vector<std::int32_t>{6});
  CHECK(wordpiece(v, "unx") == std::vector<std::int32_t>{v.unk_id()});
  CHECK(wordpiece(v, std::string(101, 'a')) == std::vector<std::int32_t>{v.unk_id()});
}

TEST_CASE("encode contract") {
  const Vocab v = toy();
  const auto e = encode(v, ct(""), 6);
  CHECK(e.ids == std::vector<std::int32_t>{2, 3, 0, 0, 0, 0});
  CHECK(e.mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0});
  std::string long_text;
  for (int i = 0; i < 500; ++i) long_text += "able ";
  const auto t = encode(v, ct(long_text));
  CHECK(t.ids.size() == kDefaultMaxLen);
  CHECK(t.ids[kDefaultMaxLen - 1] == v.sep_id());
  CHECK(t.length() == kDefaultMaxLen);
  const auto u = encode(v, ct("unable able"), 16);
  CHECK(u.length() == 2 + tokenize(v, "unable able").size());
}

TEST_CASE("placeholders are atomic") {
  const Vocab v = build_vocab(std::vector<CleanText>{ct("see https://x.y now")}, 64);
  const auto ids = tokenize(v, "[URL]");
  REQUIRE(ids.size() == 1);
  CHECK(v.token(ids[0]) == "[URL]");
}

TEST_CASE("vocab file round-trip") {
  const Vocab v = build_vocab(std::vector<CleanText>{ct("the quick brown fox jumps over the lazy dog")}, 80);
  const Vocab w = Vocab::parse(v.serialize());
  CHECK(w.tokens() == v.tokens());
}

TEST_CASE("greedy property holds on desk inputs") {
  const auto texts = desk_texts();
  const Vocab v = build_vocab(texts, 300);  // small, so words get split
  std::size_t checked = 0;
  for (std::size_t i = 0; i < texts.size(); i += 25) {
    std::string_view text = texts[i].text;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto end = std::min(text.find(' ', pos), text.size());
      const std::string word(text.substr(pos, end - pos));
      pos = end + 1;
      const auto pieces = wordpiece(v, word);
      if (pieces.size() == 1 && pieces[0] == v.unk_id()) continue;
      std::size_t at = 0;
      for (std::size_t k = 0; k < pieces.size(); ++k) {
        std::string piece = v.token(pieces[k]);
        const std::string body = k ? piece.substr(2) : piece;
        REQUIRE(word.compare(at, body.size(), body) == 0);
        // No longer vocab entry matches at this position.
        for (std::size_t len = word.size() - at; len > body.size(); --len) {
          const std::string cand = (k ? "##" : "") + word.substr(at, len);
          CHECK_FALSE(v.find(cand).has_value());
        }
        at += body.size();
        ++checked;
      }
      CHECK(at == word.size());
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("desk vocabulary snapshot") {
  const Vocab v = build_vocab(desk_texts(), 2000);
  const auto path = source_path("tests/fixtures/desk_vocab.txt");
  if (updating_fixtures()) {
    std::ofstream(path, std::ios::binary) << v.serialize();
  }
  CHECK(v.serialize() == slurp(path));
}

}
