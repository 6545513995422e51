#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "mguard/blake2b.hpp"
#include "mguard/encoder.hpp"
#include "mguard/quant.hpp"
#include "mguard/textnorm.hpp"
#include "mguard/tokenizer.hpp"

namespace mguard {

// Posts are truncated to this many tokens (including [CLS]/[SEP]) or the
// model's max_len, whichever is smaller.
inline constexpr std::size_t kMaxPostTokens = kDefaultMaxLen;

struct FeedPost {
  std::string post_id;
  Platform platform = Platform::kOther;
  std::string text;
};

enum class VerdictStatus { kFlagged, kClean, kSkippedLanguage, kSkippedShort, kSuppressedDuplicate };
std::string_view to_string(VerdictStatus s);

struct Verdict {
  std::string post_id;
  VerdictStatus status = VerdictStatus::kClean;
  std::optional<double> p1;
  double latency_ms = 0.0;

  // One line of JSON; p1 is null when absent.
  std::string to_json() const;
};

// Immutable model shared by sessions: float or int8 weights plus vocab.
class InferenceModel {
 public:
  InferenceModel(Params params, Vocab vocab);
  InferenceModel(QuantModel qmodel, Vocab vocab);

  bool quantized() const { return std::holds_alternative<QuantModel>(model_); }
  const ModelConfig& config() const;
  const Vocab& vocab() const { return vocab_; }
  std::size_t max_tokens() const;

  TokenSeq encode(const CleanText& text) const;
  double predict(const TokenSeq& seq) const;
  std::vector<double> predict(std::span<const TokenSeq> seqs) const;

 private:
  std::variant<Params, QuantModel> model_;
  Vocab vocab_;
};

// In-memory per-session state; never persisted.
class Session {
 public:
  explicit Session(double tau, GateConfig gates = {}, const TextNormalizer* normalizer = nullptr);

  double tau() const { return tau_; }
  const GateConfig& gates() const { return gates_; }
  const TextNormalizer& normalizer() const { return *normalizer_; }
  bool seen(Fingerprint fp) const { return seen_.contains(fp); }
  void mark_seen(Fingerprint fp) { seen_.insert(fp); }
  std::size_t seen_count() const { return seen_.size(); }
  const std::vector<double>& latencies() const { return latencies_; }
  void record_latency(double ms) { latencies_.push_back(ms); }

 private:
  double tau_;
  GateConfig gates_;
  const TextNormalizer* normalizer_;
  std::unordered_set<Fingerprint> seen_;
  std::vector<double> latencies_;
};

// normalize -> length gate -> English gate -> duplicate check -> encode ->
// predict. Only verdicts carrying p1 add the fingerprint to the seen set.
// Throws StateError when `model` is null.
Verdict classify_post(Session& session, const InferenceModel* model, const FeedPost& post);

struct LatencyStats {
  std::size_t count = 0;
  double median = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double mean = 0.0;

  std::string to_json() const;
};

// Nearest rank: P_q is the value at 1-based index ceil(q * n) of the sorted samples.
double nearest_rank(std::span<const double> sorted, double q);
LatencyStats latency_stats(std::span<const double> samples);

struct BenchResult {
  LatencyStats stats;
  std::vector<double> samples;  // post-warmup, in run order
  std::vector<Verdict> verdicts;
  long max_rss_kb = 0;

  std::string to_json() const;
};

// Runs every post through a fresh session and drops the first `warmup_n`
// latency samples. Needs at least warmup_n + 1 posts.
BenchResult bench(const InferenceModel& model, std::span<const FeedPost> posts, double tau,
                  std::size_t warmup_n = 10, const GateConfig& gates = {});

// Resident-set high-water mark of this process in KiB (getrusage).
long max_rss_kb();

// Export bundle directory:
//   model.q8     quantized checkpoint
//   vocab.txt    one token per line
//   config.json  model config, gates and token limit
//   bundle.json  format version, tau, and BLAKE2b-256 hex of each file
struct Bundle {
  std::shared_ptr<const InferenceModel> model;
  double tau = 0.5;
  GateConfig gates;
};

void export_bundle(const std::filesystem::path& dir, const QuantModel& qmodel, const Vocab& vocab, double tau,
                   const GateConfig& gates = {});
// Verifies file hashes; throws IoError for missing files and DataError for
// corrupt ones.
Bundle load_bundle(const std::filesystem::path& dir);

// BLAKE2b-256 hex digest of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace mguard
