#include "mguard/runtime.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mguard/error.hpp"

namespace mguard {
namespace {

using json = nlohmann::ordered_json;

constexpr int kBundleVersion = 1;
constexpr const char* kModelFile = "model.q8";
constexpr const char* kVocabFile = "vocab.txt";
constexpr const char* kConfigFile = "config.json";
constexpr const char* kManifestFile = "bundle.json";

json config_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
              {"n_classes", c.n_classes}};
}

json gates_json(const GateConfig& g) {
  return json{{"min_ascii_fraction", g.min_ascii_fraction},
              {"min_stopword_hits", g.min_stopword_hits},
              {"min_tokens", g.min_tokens}};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write " + path.string());
}

std::string hash_hex(std::string_view bytes) { return to_hex(Blake2b::hash(bytes, 32)); }

}  // namespace

std::string_view to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::kFlagged: return "flagged";
    case VerdictStatus::kClean: return "clean";
    case VerdictStatus::kSkippedLanguage: return "skipped_language";
    case VerdictStatus::kSkippedShort: return "skipped_short";
    case VerdictStatus::kSuppressedDuplicate: return "suppressed_duplicate";
  }
  return "unknown";
}

std::string Verdict::to_json() const {
  json j;
  j["post_id"] = post_id;
  j["status"] = std::string(mguard::to_string(status));
  j["p1"] = p1 ? json(*p1) : json(nullptr);
  j["latency_ms"] = latency_ms;
  return j.dump();
}

// ---- model -------------------------------------------------------------------

namespace {
void check_vocab(const Vocab& vocab, const ModelConfig& config) {
  config.validate();
  if (vocab.size() > static_cast<std::size_t>(config.vocab_size))
    throw ConfigError("vocab has " + std::to_string(vocab.size()) + " tokens but the model only " +
                      std::to_string(config.vocab_size));
}
}  // namespace

InferenceModel::InferenceModel(Params params, Vocab vocab) : model_(std::move(params)), vocab_(std::move(vocab)) {
  check_vocab(vocab_, config());
}

InferenceModel::InferenceModel(QuantModel qmodel, Vocab vocab) : model_(std::move(qmodel)), vocab_(std::move(vocab)) {
  check_vocab(vocab_, config());
}

const ModelConfig& InferenceModel::config() const {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config; }, model_);
}

std::size_t InferenceModel::max_tokens() const {
  return std::min(kMaxPostTokens, static_cast<std::size_t>(config().max_len));
}

TokenSeq InferenceModel::encode(const CleanText& text) const { return mguard::encode(vocab_, text, max_tokens()); }

double InferenceModel::predict(const TokenSeq& seq) const { return predict(std::span<const TokenSeq>(&seq, 1)).front(); }

std::vector<double> InferenceModel::predict(std::span<const TokenSeq> seqs) const {
  return std::visit([seqs](const auto& m) { return mguard::predict(m, seqs); }, model_);
}

// ---- session -------------------------------------------------------------------

Session::Session(double tau, GateConfig gates, const TextNormalizer* normalizer)
    : tau_(tau), gates_(gates), normalizer_(normalizer ? normalizer : &TextNormalizer::builtin()) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must be within [0, 1]");
}

Verdict classify_post(Session& session, const InferenceModel* model, const FeedPost& post) {
  if (!model) throw StateError("classify_post: no model loaded");
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  v.post_id = post.post_id;

  const CleanText clean = session.normalizer().normalize(post.text);
  if (!length_gate(clean, session.gates().min_tokens)) {
    v.status = VerdictStatus::kSkippedShort;
  } else if (!session.normalizer().english_gate(clean, session.gates())) {
    v.status = VerdictStatus::kSkippedLanguage;
  } else {
    const Fingerprint fp = fingerprint(clean.text);
    if (session.seen(fp)) {
      v.status = VerdictStatus::kSuppressedDuplicate;
    } else {
      const double p1 = model->predict(model->encode(clean));
      v.p1 = p1;
      v.status = p1 >= session.tau() ? VerdictStatus::kFlagged : VerdictStatus::kClean;
      session.mark_seen(fp);
    }
  }

  v.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  session.record_latency(v.latency_ms);
  return v;
}

// ---- latency -------------------------------------------------------------------

double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("percentile of an empty sample");
  const auto n = static_cast<double>(sorted.size());
  // Guard against q*n landing a hair above an integer (e.g. 0.9 * 100).
  const double rank = std::ceil(q * n - 1e-9);
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, n)) - 1;
  return sorted[idx];
}

LatencyStats latency_stats(std::span<const double> samples) {
  if (samples.empty()) throw DataError("latency_stats needs at least one sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  LatencyStats s;
  s.count = sorted.size();
  s.median = nearest_rank(sorted, 0.50);
  s.p90 = nearest_rank(sorted, 0.90);
  s.p99 = nearest_rank(sorted, 0.99);
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  return s;
}

std::string LatencyStats::to_json() const {
  json j;
  j["count"] = count;
  j["median_ms"] = median;
  j["p90_ms"] = p90;
  j["p99_ms"] = p99;
  j["mean_ms"] = mean;
  return j.dump();
}

long max_rss_kb() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) return 0;
  return usage.ru_maxrss;  // KiB on Linux
}

BenchResult bench(const InferenceModel& model, std::span<const FeedPost> posts, double tau, std::size_t warmup_n,
                  const GateConfig& gates) {
  if (posts.size() < warmup_n + 1)
    throw DataError("bench needs at least " + std::to_string(warmup_n + 1) + " posts, got " +
                    std::to_string(posts.size()));
  Session session(tau, gates);
  BenchResult r;
  r.verdicts.reserve(posts.size());
  for (const auto& post : posts) r.verdicts.push_back(classify_post(session, &model, post));
  const auto& all = session.latencies();
  r.samples.assign(all.begin() + static_cast<std::ptrdiff_t>(warmup_n), all.end());
  r.stats = latency_stats(r.samples);
  r.max_rss_kb = max_rss_kb();
  return r;
}

std::string BenchResult::to_json() const {
  json j = json::parse(stats.to_json());
  json counts = json::object();
  for (auto s : {VerdictStatus::kFlagged, VerdictStatus::kClean, VerdictStatus::kSkippedLanguage,
                 VerdictStatus::kSkippedShort, VerdictStatus::kSuppressedDuplicate})
    counts[std::string(to_string(s))] = std::count_if(verdicts.begin(), verdicts.end(),
                                                      [s](const Verdict& v) { return v.status == s; });
  j["status_counts"] = counts;
  j["max_rss_kb"] = max_rss_kb;
  return j.dump();
}

// ---- bundle -------------------------------------------------------------------

std::string file_hash(const std::filesystem::path& path) { return hash_hex(read_file(path)); }

void export_bundle(const std::filesystem::path& dir, const QuantModel& qmodel, const Vocab& vocab, double tau,
                   const GateConfig& gates) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must be within [0, 1]");
  check_vocab(vocab, qmodel.config);
  std::filesystem::create_directories(dir);

  std::ostringstream model_bytes;
  write_quantized(model_bytes, qmodel);
  const std::string vocab_bytes = vocab.serialize();
  json cfg;
  cfg["model"] = config_json(qmodel.config);
  cfg["gates"] = gates_json(gates);
  cfg["max_tokens"] = std::min(kMaxPostTokens, static_cast<std::size_t>(qmodel.config.max_len));
  const std::string cfg_bytes = cfg.dump(2) + "\n";

  write_file(dir / kModelFile, model_bytes.str());
  write_file(dir / kVocabFile, vocab_bytes);
  write_file(dir / kConfigFile, cfg_bytes);

  json manifest;
  manifest["format"] = "mguard-bundle";
  manifest["version"] = kBundleVersion;
  manifest["tau"] = tau;
  manifest["hash"] = "blake2b-256";
  manifest["files"] = json{{kModelFile, hash_hex(model_bytes.str())},
                           {kVocabFile, hash_hex(vocab_bytes)},
                           {kConfigFile, hash_hex(cfg_bytes)}};
  write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

Bundle load_bundle(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifestFile));
  } catch (const json::exception& e) {
    throw DataError("bundle manifest is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (manifest.at("version").get<int>() != kBundleVersion) throw DataError("unsupported bundle version");
    std::map<std::string, std::string> bytes;
    for (const char* name : {kModelFile, kVocabFile, kConfigFile}) {
      bytes[name] = read_file(dir / name);
      if (hash_hex(bytes[name]) != manifest.at("files").at(name).get<std::string>())
        throw DataError(std::string("bundle file ") + name + " does not match its recorded hash");
    }
    Bundle b;
    b.tau = manifest.at("tau").get<double>();
    if (!(b.tau >= 0.0 && b.tau <= 1.0)) throw DataError("bundle tau outside [0, 1]");
    const json cfg = json::parse(bytes[kConfigFile]);
    const json& g = cfg.at("gates");
    b.gates.min_ascii_fraction = g.at("min_ascii_fraction").get<double>();
    b.gates.min_stopword_hits = g.at("min_stopword_hits").get<std::size_t>();
    b.gates.min_tokens = g.at("min_tokens").get<std::size_t>();
    std::istringstream model_in(bytes[kModelFile]);
    QuantModel qmodel = read_quantized(model_in);
    if (config_json(qmodel.config) != cfg.at("model")) throw DataError("bundle config disagrees with model.q8");
    b.model = std::make_shared<InferenceModel>(std::move(qmodel), Vocab::parse(bytes[kVocabFile]));
    return b;
  } catch (const json::exception& e) {
    throw DataError("bundle is malformed: " + std::string(e.what()));
  }
}

}  // namespace mguard
