#include "mguard/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "mguard/error.hpp"
#include "mguard/rng.hpp"

namespace mguard {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

[[noreturn]] void reject_label(Source source, std::string_view raw) {
  throw DataError("unknown label '" + std::string(raw) + "' for source " + std::string(to_string(source)));
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

std::optional<int> harmonize_label(Source source, std::string_view raw_label) {
  const std::string l = lower(trim(raw_label));
  switch (source) {
    case Source::kISOT:
      if (l == "fake") return 1;
      if (l == "true") return 0;
      break;
    case Source::kFNN:
      if (l == "fake") return 1;
      if (l == "real") return 0;
      break;
    case Source::kPHEME:
      if (l == "false") return 1;
      if (l == "true") return 0;
      if (l == "unverified") return std::nullopt;
      break;
    case Source::kLIAR:
      if (l == "pants-on-fire" || l == "pants-fire" || l == "false" || l == "barely-true") return 1;
      if (l == "half-true" || l == "mostly-true" || l == "true") return 0;
      break;
    case Source::kTruthSeeker: {
      // Crowd misinformation score in [0, 1].
      double score = 0.0;
      const char* first = l.data();
      const char* last = l.data() + l.size();
      auto [ptr, ec] = std::from_chars(first, last, score);
      if (ec == std::errc() && ptr == last && score >= 0.0 && score <= 1.0) return score >= 0.5 ? 1 : 0;
      break;
    }
    case Source::kLive:
      if (l == "1") return 1;
      if (l == "0") return 0;
      break;
  }
  reject_label(source, raw_label);
}

DedupResult dedup(std::vector<CleanRecord> records) {
  DedupResult out;
  std::unordered_set<Fingerprint> seen;
  seen.reserve(records.size());
  out.records.reserve(records.size());
  for (auto& r : records) {
    auto& counts = out.per_source[r.source];
    ++counts.seen;
    if (!seen.insert(r.fp).second) continue;
    ++counts.retained;
    out.records.push_back(std::move(r));
  }
  return out;
}

IngestResult ingest(const std::vector<RawPost>& posts, const TextNormalizer& normalizer, const GateConfig& gates) {
  IngestResult result;
  auto& rep = result.report;
  std::vector<CleanRecord> gated;
  gated.reserve(posts.size());
  for (const auto& post : posts) {
    ++rep.raw;
    if (!post.raw_label) throw DataError("record " + post.id + " has no label");
    const auto y = harmonize_label(post.source, *post.raw_label);
    if (!y) {
      ++rep.dropped_label;
      continue;
    }
    CleanText text = normalizer.normalize(post.text);
    if (!length_gate(text, gates.min_tokens)) {
      ++rep.skipped_short;
      continue;
    }
    if (!normalizer.english_gate(text, gates)) {
      ++rep.skipped_language;
      continue;
    }
    CleanRecord rec;
    rec.id = post.id;
    rec.source = post.source;
    rec.y = *y;
    rec.fp = fingerprint(text.text);
    rec.text = std::move(text);
    gated.push_back(std::move(rec));
  }
  auto d = dedup(std::move(gated));
  rep.per_source = d.per_source;
  for (const auto& [src, c] : d.per_source) rep.duplicates += c.seen - c.retained;
  result.records = std::move(d.records);
  return result;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kStage0: return "Stage0";
    case Split::kStage1: return "Stage1";
    case Split::kStage2: return "Stage2";
    case Split::kDev: return "Dev";
    case Split::kTest: return "Test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits)
    if (to_string(s) == name) return s;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::unordered_map<std::string, Split> SplitManifest::index() const {
  std::unordered_map<std::string, Split> m;
  m.reserve(assignments.size());
  for (const auto& [id, s] : assignments) m.emplace(id, s);
  return m;
}

std::vector<std::string> SplitManifest::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, split] : assignments)
    if (split == s) out.push_back(id);
  return out;
}

std::string SplitManifest::serialize() const {
  std::ostringstream os;
  os << "# split manifest v1\n";
  os << "seed " << seed << "\n";
  for (Split s : kAllSplits) {
    const auto& st = stats_for(s);
    os << "stats " << to_string(s) << " count=" << st.count << " positives=" << st.positives
       << " prevalence=" << std::fixed << std::setprecision(6) << st.prevalence() << "\n";
  }
  for (Split s : kAllSplits) {
    os << "[" << to_string(s) << "]\n";
    for (const auto& [id, split] : assignments)
      if (split == s) os << id << "\n";
  }
  return os.str();
}

SplitManifest SplitManifest::parse(std::string_view text) {
  SplitManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::optional<Split> current;
  bool have_seed = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      current = parse_split(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    if (!current) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "seed") {
        ls >> m.seed;
        have_seed = true;
      } else if (key == "stats") {
        std::string name, count, pos;
        ls >> name >> count >> pos;
        auto& st = m.stats[static_cast<std::size_t>(parse_split(name))];
        if (count.rfind("count=", 0) != 0 || pos.rfind("positives=", 0) != 0)
          throw DataError("malformed manifest stats line: " + line);
        st.count = std::stoull(count.substr(6));
        st.positives = std::stoull(pos.substr(10));
      } else {
        throw DataError("malformed manifest line: " + line);
      }
      continue;
    }
    m.assignments.emplace_back(line, *current);
  }
  if (!have_seed) throw DataError("manifest has no seed line");
  return m;
}

SplitManifest build_splits(const std::vector<CleanRecord>& records, const SplitConfig& config) {
  Rng rng(config.seed);
  std::vector<std::optional<Split>> assigned(records.size());

  std::map<Source, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (records[i].source) {
      case Source::kISOT: assigned[i] = Split::kStage0; break;
      case Source::kLIAR: assigned[i] = Split::kStage1; break;
      case Source::kLive: throw DataError("live record " + records[i].id + " cannot be assigned to a split");
      default: pools[records[i].source].push_back(i);
    }
  }

  double total_weight = 0.0;
  for (const auto& [src, w] : config.stage2_mix) {
    if (w < 0.0) throw ConfigError("stage2_mix weight for " + std::string(to_string(src)) + " is negative");
    if (src == Source::kISOT || src == Source::kLIAR || src == Source::kLive)
      throw ConfigError("stage2_mix may only use FNN, TruthSeeker and PHEME");
    if (w > 0.0 && pools[src].empty())
      throw DataError("empty source pool for Stage2 component " + std::string(to_string(src)));
    total_weight += w;
  }
  if (total_weight <= 0.0) throw ConfigError("stage2_mix weights sum to zero");

  double target = static_cast<double>(config.stage2_target);
  if (config.stage2_target == 0) {
    const auto it = config.stage2_mix.find(Source::kFNN);
    if (it == config.stage2_mix.end() || it->second <= 0.0)
      throw ConfigError("automatic Stage2 sizing needs a positive FNN weight");
    target = static_cast<double>(pools[Source::kFNN].size()) * total_weight / it->second;
  }

  // Sampling without replacement, capped at what each source has.
  for (auto& [src, pool] : pools) {
    rng.shuffle(std::span(pool));
    const auto it = config.stage2_mix.find(src);
    const double w = it == config.stage2_mix.end() ? 0.0 : it->second;
    const auto quota = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::llround(target * w / total_weight)));
    for (std::size_t k = 0; k < quota; ++k) assigned[pool[k]] = Split::kStage2;
  }

  // Remainder: split each (source, label) cell 1:1. Odd leftovers are dealt
  // out by label so both split sizes and prevalences stay within one record.
  std::map<std::pair<Source, int>, std::vector<std::size_t>> cells;
  for (const auto& [src, pool] : pools)
    for (std::size_t i : pool)
      if (!assigned[i]) cells[{src, records[i].y}].push_back(i);
  std::vector<std::size_t> leftovers;
  for (auto& [cell, idx] : cells) {
    rng.shuffle(std::span(idx));
    const std::size_t half = idx.size() / 2;
    for (std::size_t k = 0; k < half; ++k) assigned[idx[k]] = Split::kDev;
    for (std::size_t k = half; k < 2 * half; ++k) assigned[idx[k]] = Split::kTest;
    if (idx.size() % 2) leftovers.push_back(idx.back());
  }
  std::stable_sort(leftovers.begin(), leftovers.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].y < records[b].y; });
  for (std::size_t k = 0; k < leftovers.size(); ++k) assigned[leftovers[k]] = k % 2 ? Split::kTest : Split::kDev;

  SplitManifest m;
  m.seed = config.seed;
  m.assignments.reserve(records.size());
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!ids.insert(records[i].id).second) throw DataError("duplicate record id " + records[i].id);
    const Split s = *assigned[i];
    m.assignments.emplace_back(records[i].id, s);
    auto& st = m.stats[static_cast<std::size_t>(s)];
    ++st.count;
    st.positives += static_cast<std::size_t>(records[i].y);
  }
  return m;
}

std::vector<CleanRecord> select_split(const std::vector<CleanRecord>& records, const SplitManifest& manifest,
                                      Split split) {
  std::unordered_map<std::string_view, const CleanRecord*> by_id;
  by_id.reserve(records.size());
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<CleanRecord> out;
  for (const auto& [id, s] : manifest.assignments) {
    if (s != split) continue;
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("manifest id " + id + " not found among records");
    out.push_back(*it->second);
  }
  return out;
}

std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case '\\': out.push_back('\\'); break;
      default:
        out.push_back('\\');
        out.push_back(s[i]);
    }
  }
  return out;
}

std::vector<RawPost> read_raw_records(std::istream& in) {
  std::vector<RawPost> posts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) throw DataError("line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    RawPost p;
    p.id = unescape_field(f[0]);
    if (p.id.empty()) throw DataError("line " + std::to_string(lineno) + ": empty id");
    p.source = parse_source(f[1]);
    p.platform = p.source == Source::kPHEME || p.source == Source::kTruthSeeker ? Platform::kX : Platform::kNews;
    p.raw_label = unescape_field(f[2]);
    p.text = unescape_field(f[3]);
    posts.push_back(std::move(p));
  }
  return posts;
}

std::vector<RawPost> read_raw_records(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_raw_records(in);
}

void write_raw_records(std::ostream& out, const std::vector<RawPost>& posts) {
  for (const auto& p : posts) {
    out << escape_field(p.id) << '\t' << to_string(p.source) << '\t' << escape_field(p.raw_label.value_or(""))
        << '\t' << escape_field(p.text) << '\n';
  }
}

std::vector<CleanRecord> read_clean_records(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<CleanRecord> out;
  for (auto& p : read_raw_records(in)) {
    CleanRecord r;
    r.id = std::move(p.id);
    r.source = p.source;
    if (*p.raw_label == "1") {
      r.y = 1;
    } else if (*p.raw_label == "0") {
      r.y = 0;
    } else {
      throw DataError("clean record " + r.id + " has non-binary label '" + *p.raw_label + "'");
    }
    r.text.ws_token_count = count_ws_tokens(p.text);
    r.text.text = std::move(p.text);
    r.fp = fingerprint(r.text.text);
    out.push_back(std::move(r));
  }
  return out;
}

void write_clean_records(std::ostream& out, const std::vector<CleanRecord>& records) {
  for (const auto& r : records) {
    out << escape_field(r.id) << '\t' << to_string(r.source) << '\t' << r.y << '\t' << escape_field(r.text.text)
        << '\n';
  }
}

void write_clean_records(const std::filesystem::path& path, const std::vector<CleanRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_clean_records(out, records);
}

}  // namespace mguard
