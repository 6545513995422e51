#include "mguard/deskdata.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_set>

#include "mguard/error.hpp"
#include "mguard/rng.hpp"

namespace mguard {
namespace {

// Signal words never appear in the filler lists below.
const std::vector<std::string> kMisinfoPhrases = {
    "shocking truth",      "they do not want you to know", "miracle cure",     "secret plan",
    "share before it is deleted", "mainstream media hides", "hoax exposed",   "wake up people",
    "banned video",        "hidden agenda",                "total cover up",   "insiders leaked",
    "doctors are silenced", "elites panic",                "bombshell leak",   "rigged from the start",
};

const std::vector<std::string> kReliablePhrases = {
    "according to the official report", "researchers found",        "the agency confirmed",
    "public records show",              "a spokesperson said",      "data released on",
    "peer reviewed analysis",           "court documents indicate", "survey results suggest",
    "independent auditors verified",    "the statistics bureau",    "minutes of the meeting",
    "the committee published",          "a registered filing",      "measured over the quarter",
    "fact sheet lists",
};

const std::vector<std::string> kNouns = {
    "vaccine",  "election", "budget",   "school",    "hospital", "council",  "river",   "bridge",
    "farmers",  "tax",      "bill",     "storm",     "governor", "senator",  "company", "factory",
    "market",   "teachers", "nurses",   "rail line", "airport",  "harvest",  "pension", "housing",
    "water",    "energy",   "climate",  "border",    "police",   "museum",   "library", "stadium",
    "festival", "patients", "students", "voters",    "workers",  "tenants",  "drivers", "fishermen",
};

const std::vector<std::string> kVerbs = {
    "changed", "moved",   "opened",  "closed", "raised", "cut",    "reviewed", "delayed", "expanded",
    "blocked", "funded",  "visited", "backed", "ended",  "joined", "planned",  "built",   "replaced",
    "shared",  "counted", "tested",  "sold",   "bought", "named",
};

const std::vector<std::string> kAdjectives = {
    "new",   "local", "regional", "federal", "small", "large",    "rural",  "urban",  "northern", "southern",
    "early", "late",  "annual",   "monthly", "major", "national", "public", "private", "coastal", "eastern",
};

const std::vector<std::string> kPlaces = {
    "the capital", "the county", "the valley", "the harbor", "the suburbs", "the state", "the city",
    "the region",  "the district", "the province",
};

const std::vector<std::string> kGlue = {
    "and", "but", "so", "while", "because", "after", "before", "as",
};

const std::vector<std::string> kCyrillic = {
    "новости", "город",  "вода",    "школа",  "выборы", "бюджет", "погода", "люди",
    "сегодня", "завтра", "правда",  "власти", "район",  "больница", "дорога", "мост",
};

const std::vector<std::string> kEmoji = {"\U0001F631", "\U0001F525", "\U0001F440", "\U0001F4F0", "\U0001F44D"};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

std::string clause(Rng& rng) {
  std::string s = "the " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) + " " + pick(rng, kVerbs) + " the " +
                  pick(rng, kNouns);
  if (rng.bernoulli(0.5)) s += " in " + pick(rng, kPlaces);
  return s;
}

std::size_t word_count(const std::string& s) { return count_ws_tokens(s); }

std::string native_label(Source source, int y, Rng& rng) {
  switch (source) {
    case Source::kISOT: return y ? "fake" : "true";
    case Source::kFNN: return y ? "fake" : "real";
    case Source::kPHEME: return y ? "false" : "true";
    case Source::kLIAR: {
      static const std::vector<std::string> pos = {"pants-fire", "false", "barely-true"};
      static const std::vector<std::string> neg = {"half-true", "mostly-true", "true"};
      return pick(rng, y ? pos : neg);
    }
    case Source::kTruthSeeker: {
      // Keep clear of the 0.5 cut.
      const double score = y ? 0.55 + 0.45 * rng.uniform() : 0.45 * rng.uniform();
      char buf[16];
      std::snprintf(buf, sizeof buf, "%.3f", score);
      return buf;
    }
    case Source::kLive: break;
  }
  throw ConfigError("desk corpus cannot generate source " + std::string(to_string(source)));
}

std::string id_prefix(Source s) {
  std::string p(to_string(s));
  std::transform(p.begin(), p.end(), p.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return p;
}

bool social(Source s) { return s == Source::kPHEME || s == Source::kTruthSeeker; }

// One core post: 2-3 signal phrases woven into filler clauses, 14-55 words.
std::string core_text(Source source, int y, double noise, Rng& rng) {
  const std::size_t target = 14 + rng.below(42);
  const std::size_t n_signal = 2 + rng.below(2);
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < n_signal; ++i) {
    const bool flip = rng.bernoulli(noise);
    const bool misinfo = (y == 1) != flip;
    parts.push_back(pick(rng, misinfo ? kMisinfoPhrases : kReliablePhrases));
  }
  std::string text;
  std::size_t next_signal = 0;
  while (word_count(text) < target || next_signal < parts.size()) {
    if (!text.empty()) text += rng.bernoulli(0.3) ? ". " : " " + pick(rng, kGlue) + " ";
    if (next_signal < parts.size() && (rng.bernoulli(0.5) || word_count(text) + 8 >= target))
      text += parts[next_signal++];
    else
      text += clause(rng);
  }

  // Surface variety that the normalizer has to undo.
  if (rng.bernoulli(0.3)) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  if (rng.bernoulli(0.15)) text += " and it's not over";
  if (rng.bernoulli(0.1)) text += " &amp; more";
  if (social(source)) {
    if (rng.bernoulli(0.4)) text = "@user" + std::to_string(rng.below(500)) + " " + text;
    if (rng.bernoulli(0.4)) text += " #" + pick(rng, kNouns).substr(0, 5) + "news";
    if (rng.bernoulli(0.2)) text += " " + pick(rng, kEmoji);
  }
  if (rng.bernoulli(0.15)) text += " https://example.org/a/" + std::to_string(rng.below(100000));
  return text;
}

std::string non_english_text(Rng& rng) {
  std::string s;
  const std::size_t n = 12 + rng.below(15);
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + pick(rng, kCyrillic);
  return s;
}

std::string short_text(Rng& rng) {
  return "the " + pick(rng, kNouns) + " " + pick(rng, kVerbs) + " " + pick(rng, kPlaces);
}

}  // namespace

const std::vector<std::string>& misinfo_signal_phrases() { return kMisinfoPhrases; }
const std::vector<std::string>& reliable_signal_phrases() { return kReliablePhrases; }

int keyword_score(const std::string& normalized_text) {
  // Sentence punctuation counts as a word boundary.
  std::string padded = " " + normalized_text + " ";
  for (char& c : padded)
    if (std::ispunct(static_cast<unsigned char>(c)) && c != '\'') c = ' ';
  auto count = [&padded](const std::string& phrase) {
    int n = 0;
    const std::string needle = " " + phrase + " ";
    for (auto pos = padded.find(needle); pos != std::string::npos; pos = padded.find(needle, pos + 1)) ++n;
    return n;
  };
  int score = 0;
  for (const auto& p : kMisinfoPhrases) score += count(p);
  for (const auto& p : kReliablePhrases) score -= count(p);
  return score;
}

void DeskCorpusSpec::validate() const {
  std::unordered_set<Source> distinct(sources.begin(), sources.end());
  if (distinct.size() < 3) throw ConfigError("desk corpus: sources needs at least 3 distinct sources");
  if (distinct.size() != sources.size()) throw ConfigError("desk corpus: sources lists a source twice");
  if (distinct.contains(Source::kLive)) throw ConfigError("desk corpus: sources cannot include Live");
  if (n_per_cell == 0 || 2 * n_per_cell * sources.size() < 600)
    throw ConfigError("desk corpus: n_per_cell gives fewer than 600 core posts");
  for (auto [name, v] : {std::pair{"noise_rate", noise_rate}, {"duplicate_fraction", duplicate_fraction},
                         {"non_english_fraction", non_english_fraction}, {"short_fraction", short_fraction},
                         {"unverified_fraction", unverified_fraction}})
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("desk corpus: ") + name + " must be in [0, 1)");
  if (noise_rate >= 0.5) throw ConfigError("desk corpus: noise_rate must be below 0.5");
}

DeskCorpus generate_desk_corpus(const DeskCorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const TextNormalizer& norm = TextNormalizer::builtin();
  DeskCorpus out;
  std::unordered_set<std::string> seen;  // normalized core texts

  std::vector<RawPost> core;
  for (Source source : spec.sources) {
    const std::string prefix = id_prefix(source);
    std::size_t serial = 0;
    for (int y : {1, 0}) {
      for (std::size_t i = 0; i < spec.n_per_cell; ++i) {
        std::string text;
        for (;;) {
          text = core_text(source, y, spec.noise_rate, rng);
          const CleanText clean = norm.normalize(text);
          if (length_gate(clean) && norm.english_gate(clean) && seen.insert(clean.text).second) break;
        }
        char id[64];
        std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), serial++);
        core.push_back(RawPost{id, Platform::kOther, std::move(text), native_label(source, y, rng), source});
      }
    }
  }
  rng.shuffle(std::span<RawPost>(core));
  out.core = core.size();

  std::vector<RawPost> extras;
  std::size_t extra_serial = 0;
  auto extra_id = [&extra_serial](const char* kind) {
    char id[64];
    std::snprintf(id, sizeof id, "x-%s-%05zu", kind, extra_serial++);
    return std::string(id);
  };
  const auto n_core = static_cast<double>(core.size());
  const auto n_dup = static_cast<std::size_t>(std::llround(spec.duplicate_fraction * n_core));
  for (std::size_t i = 0; i < n_dup; ++i) {
    RawPost d = core[rng.below(core.size())];
    d.id = extra_id("dup");
    out.duplicate_ids.push_back(d.id);
    extras.push_back(std::move(d));
  }
  const auto n_foreign = static_cast<std::size_t>(std::llround(spec.non_english_fraction * n_core));
  for (std::size_t i = 0; i < n_foreign; ++i) {
    const Source s = pick(rng, spec.sources);
    const int y = static_cast<int>(rng.below(2));
    extras.push_back(RawPost{extra_id("ru"), Platform::kOther, non_english_text(rng), native_label(s, y, rng), s});
  }
  out.non_english = n_foreign;
  const auto n_short = static_cast<std::size_t>(std::llround(spec.short_fraction * n_core));
  for (std::size_t i = 0; i < n_short; ++i) {
    const Source s = pick(rng, spec.sources);
    const int y = static_cast<int>(rng.below(2));
    extras.push_back(RawPost{extra_id("short"), Platform::kOther, short_text(rng), native_label(s, y, rng), s});
  }
  out.short_posts = n_short;
  if (std::find(spec.sources.begin(), spec.sources.end(), Source::kPHEME) != spec.sources.end()) {
    const auto n_unv =
        static_cast<std::size_t>(std::llround(spec.unverified_fraction * 2.0 * static_cast<double>(spec.n_per_cell)));
    for (std::size_t i = 0; i < n_unv; ++i) {
      const int y = static_cast<int>(rng.below(2));
      extras.push_back(RawPost{extra_id("unv"), Platform::kX, core_text(Source::kPHEME, y, spec.noise_rate, rng),
                               "unverified", Source::kPHEME});
    }
    out.unverified = n_unv;
  }
  rng.shuffle(std::span<RawPost>(extras));

  // Extras follow the core so every duplicate comes after its original.
  out.posts = std::move(core);
  out.posts.insert(out.posts.end(), std::make_move_iterator(extras.begin()), std::make_move_iterator(extras.end()));
  for (auto& p : out.posts) p.platform = social(p.source) ? Platform::kX : Platform::kNews;
  return out;
}

}  // namespace mguard
