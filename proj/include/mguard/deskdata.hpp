#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mguard/textnorm.hpp"

namespace mguard {

// Seeded synthetic corpus with a strong lexical class signal. Every
// (source, label) cell holds `n_per_cell` unique, gate-passing core posts;
// duplicates, non-English lines, short lines and PHEME "unverified" rows
// are extras on top, so the core prevalence is exact.
struct DeskCorpusSpec {
  std::uint64_t seed = 42;
  std::size_t n_per_cell = 300;
  std::vector<Source> sources{Source::kISOT, Source::kLIAR, Source::kFNN, Source::kTruthSeeker, Source::kPHEME};
  // Probability that a signal phrase is drawn from the other class.
  double noise_rate = 0.05;
  // Extras, as fractions of the core count.
  double duplicate_fraction = 0.05;
  double non_english_fraction = 0.02;
  double short_fraction = 0.02;
  double unverified_fraction = 0.03;  // of PHEME core

  void validate() const;
};

struct DeskCorpus {
  std::vector<RawPost> posts;  // labels in each source's native format
  std::size_t core = 0;
  std::vector<std::string> duplicate_ids;
  std::size_t non_english = 0;
  std::size_t short_posts = 0;
  std::size_t unverified = 0;
};

DeskCorpus generate_desk_corpus(const DeskCorpusSpec& spec);

// Phrase lists behind the class signal; also used by the keyword-count oracle.
const std::vector<std::string>& misinfo_signal_phrases();
const std::vector<std::string>& reliable_signal_phrases();

// +1 per misinfo phrase, -1 per reliable phrase found in normalized text.
int keyword_score(const std::string& normalized_text);

}  // namespace mguard
