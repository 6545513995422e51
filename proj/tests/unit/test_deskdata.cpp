#include <doctest.h>

#include <map>

#include "fixtures.hpp"
#include "mguard/corpus.hpp"
#include "mguard/deskdata.hpp"
#include "mguard/error.hpp"

using namespace mguard;

TEST_SUITE("deskdata") {

TEST_CASE("deterministic in the seed") {
  DeskCorpusSpec spec;
  spec.n_per_cell = 60;
  const auto a = generate_desk_corpus(spec);
  const auto b = generate_desk_corpus(spec);
  REQUIRE(a.posts.size() == b.posts.size());
  for (std::size_t i = 0; i < a.posts.size(); ++i) {
    CHECK(a.posts[i].id == b.posts[i].id);
    CHECK(a.posts[i].text == b.posts[i].text);
    CHECK(a.posts[i].raw_label == b.posts[i].raw_label);
  }
  spec.seed = 43;
  const auto c = generate_desk_corpus(spec);
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.posts.size(), c.posts.size()); ++i) same += a.posts[i].text == c.posts[i].text;
  CHECK(same < a.posts.size() / 10);
}

TEST_CASE("cells are exactly balanced") {
  DeskCorpusSpec spec;
  spec.n_per_cell = 60;
  const auto corpus = generate_desk_corpus(spec);
  CHECK(corpus.core == 5 * 2 * 60);
  const auto in = ingest(corpus.posts, TextNormalizer::builtin());
  std::map<std::pair<Source, int>, std::size_t> cells;
  for (const auto& r : in.records) ++cells[{r.source, r.y}];
  CHECK(cells.size() == 10);
  for (const auto& [k, n] : cells) CHECK(n == 60);
}

TEST_CASE("noise-free texts separate by keyword score") {
  DeskCorpusSpec spec;
  spec.n_per_cell = 60;
  spec.noise_rate = 0.0;
  const auto in = ingest(generate_desk_corpus(spec).posts, TextNormalizer::builtin());
  for (const auto& r : in.records) {
    const int s = keyword_score(r.text.text);
    REQUIRE(s != 0);
    CHECK((s > 0) == (r.y == 1));
  }
}

TEST_CASE("keyword score counts whole phrases") {
  const auto& m = misinfo_signal_phrases();
  const auto& g = reliable_signal_phrases();
  CHECK(m.size() == g.size());
  CHECK(keyword_score("nothing to see") == 0);
  CHECK(keyword_score("x " + m[0] + ". y") == 1);
  CHECK(keyword_score(m[0] + " and " + g[0] + " and " + g[1]) == -1);
}

TEST_CASE("extras are removed exactly by ingest") {
  DeskCorpusSpec spec;
  spec.n_per_cell = 60;
  spec.duplicate_fraction = 0.1;
  const auto corpus = generate_desk_corpus(spec);
  CHECK(corpus.duplicate_ids.size() == 60);
  const auto in = ingest(corpus.posts, TextNormalizer::builtin());
  CHECK(in.report.duplicates == 60);
  CHECK(in.report.skipped_language == corpus.non_english);
  CHECK(in.report.skipped_short == corpus.short_posts);
  CHECK(in.report.dropped_label == corpus.unverified);
  CHECK(in.records.size() == corpus.core);
  for (const auto& r : in.records) CHECK(r.id.rfind("x-", 0) != 0);
}

TEST_CASE("spec validation") {
  DeskCorpusSpec spec;
  spec.sources = {Source::kISOT, Source::kLIAR};
  CHECK_KIND(spec.validate(), kConfig);
  spec = {};
  spec.sources.push_back(Source::kLive);
  CHECK_KIND(spec.validate(), kConfig);
  spec = {};
  spec.noise_rate = 0.5;
  CHECK_KIND(spec.validate(), kConfig);
  spec = {};
  spec.n_per_cell = 10;
  CHECK_KIND(spec.validate(), kConfig);
  spec = {};
  spec.duplicate_fraction = 1.0;
  CHECK_KIND(spec.validate(), kConfig);
  CHECK_NOTHROW(DeskCorpusSpec{}.validate());
}

}
