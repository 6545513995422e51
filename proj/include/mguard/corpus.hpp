#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mguard/blake2b.hpp"
#include "mguard/textnorm.hpp"

namespace mguard {

struct CleanRecord {
  std::string id;
  Source source = Source::kLive;
  CleanText text;
  int y = 0;  // 1 = misinformation, 0 = reliable
  Fingerprint fp = 0;
};

// Maps a corpus-native label to y. Returns nullopt for labels that mean
// "drop this record" (PHEME unverified). Throws DataError for labels the
// source does not define.
std::optional<int> harmonize_label(Source source, std::string_view raw_label);

struct SourceCounts {
  std::size_t seen = 0;
  std::size_t retained = 0;
};

struct DedupResult {
  std::vector<CleanRecord> records;
  std::map<Source, SourceCounts> per_source;
};

// Keeps the first record for each fingerprint, preserving input order.
DedupResult dedup(std::vector<CleanRecord> records);

struct IngestReport {
  std::size_t raw = 0;
  std::size_t dropped_label = 0;
  std::size_t skipped_short = 0;
  std::size_t skipped_language = 0;
  std::size_t duplicates = 0;
  std::map<Source, SourceCounts> per_source;  // after gating, through dedup
};

struct IngestResult {
  std::vector<CleanRecord> records;
  IngestReport report;
};

// normalize -> label -> length gate -> language gate -> fingerprint -> dedup.
IngestResult ingest(const std::vector<RawPost>& posts, const TextNormalizer& normalizer,
                    const GateConfig& gates = {});

enum class Split : std::uint8_t { kStage0, kStage1, kStage2, kDev, kTest };
inline constexpr std::array<Split, 5> kAllSplits{Split::kStage0, Split::kStage1, Split::kStage2,
                                                 Split::kDev, Split::kTest};
std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct SplitStats {
  std::size_t count = 0;
  std::size_t positives = 0;
  double prevalence() const { return count ? static_cast<double>(positives) / static_cast<double>(count) : 0.0; }
  friend bool operator==(const SplitStats&, const SplitStats&) = default;
};

struct SplitConfig {
  std::uint64_t seed = 42;
  // Stage-2 sampling weights per source.
  std::map<Source, double> stage2_mix{{Source::kFNN, 0.5}, {Source::kTruthSeeker, 0.3}, {Source::kPHEME, 0.2}};
  // Target Stage-2 rows; 0 means "all FNN, others scaled to the mix ratio".
  std::size_t stage2_target = 600;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  // Record ids in ingestion order with their split.
  std::vector<std::pair<std::string, Split>> assignments;
  std::array<SplitStats, 5> stats{};

  const SplitStats& stats_for(Split s) const { return stats[static_cast<std::size_t>(s)]; }
  std::unordered_map<std::string, Split> index() const;
  std::vector<std::string> ids(Split s) const;

  std::string serialize() const;
  static SplitManifest parse(std::string_view text);
  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

SplitManifest build_splits(const std::vector<CleanRecord>& records, const SplitConfig& config = {});

// Records of one split, in manifest order.
std::vector<CleanRecord> select_split(const std::vector<CleanRecord>& records, const SplitManifest& manifest,
                                      Split split);

// Record files: one record per line, `id<TAB>source<TAB>label<TAB>text`.
// Backslash, tab, CR and LF inside fields are escaped as \\ \t \r \n.
// Raw files carry the corpus-native label; clean files carry 0/1 and
// normalized text.
std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);

std::vector<RawPost> read_raw_records(std::istream& in);
std::vector<RawPost> read_raw_records(const std::filesystem::path& path);
void write_raw_records(std::ostream& out, const std::vector<RawPost>& posts);

std::vector<CleanRecord> read_clean_records(const std::filesystem::path& path);
void write_clean_records(std::ostream& out, const std::vector<CleanRecord>& records);
void write_clean_records(const std::filesystem::path& path, const std::vector<CleanRecord>& records);

}  // namespace mguard
