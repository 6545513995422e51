#pragma once

// Run-directory operations behind the CLI subcommands. One JSON config
// drives everything; `key.path=value` overrides patch it before validation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mguard/corpus.hpp"
#include "mguard/deskdata.hpp"
#include "mguard/eval.hpp"
#include "mguard/quant.hpp"
#include "mguard/runtime.hpp"
#include "mguard/train.hpp"

namespace mguard {

struct RunConfig {
  std::uint64_t seed = 42;
  std::vector<std::filesystem::path> corpus;
  std::filesystem::path run_dir = "run";
  ModelConfig model;
  GateConfig gates;
  SplitConfig splits;
  CurriculumPlan plan = CurriculumPlan::three_stage();
  bool quantize = true;
  std::optional<double> tau_override;
  std::size_t bench_warmup = 10;
  DeskCorpusSpec desk;

  // Relative paths resolve against `base_dir`. Unknown or mistyped fields
  // throw ConfigError naming the field.
  static RunConfig parse(std::string_view json_text, const std::filesystem::path& base_dir = {},
                         std::span<const std::string> overrides = {});
  static RunConfig load(const std::filesystem::path& file, std::span<const std::string> overrides = {});
  // Canonical snapshot with absolute paths; parse(to_json()) round-trips.
  std::string to_json() const;
};

// Fixed file names inside a run directory.
namespace run_files {
inline constexpr const char* kManifest = "splits.manifest";
inline constexpr const char* kRecordsDir = "records";
inline constexpr const char* kIngestReport = "ingest_report.json";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kHistory = "history.jsonl";
inline constexpr const char* kCalibration = "calibration.json";
inline constexpr const char* kQuantized = "model.q8";
inline constexpr const char* kSizeReport = "size_report.json";
inline constexpr const char* kBench = "bench.json";
inline constexpr const char* kBundleDir = "bundle";
inline constexpr const char* kRunManifestDir = "manifests";
}  // namespace run_files

std::filesystem::path split_records_path(const std::filesystem::path& run_dir, Split split);

struct PrepareOutcome {
  IngestReport report;
  SplitManifest manifest;
  std::size_t vocab_size = 0;
};
PrepareOutcome run_prepare(const RunConfig& config);

struct TrainOutcome {
  TrainHistory history;
  ThresholdCalibration calibration;
};
// Throws kDivergence after writing history when the run aborts.
TrainOutcome run_train(const RunConfig& config, const EpochCallback& on_epoch = {});

SizeReport run_quantize(const RunConfig& config);

// Threshold: config.tau_override, else the calibration record.
double resolve_tau(const RunConfig& config);
MetricsReport run_eval(const RunConfig& config, Split split, bool quantized);

// Benchmarks the quantized model (float if quantize is off) on the Test split texts.
BenchResult run_bench(const RunConfig& config);

// Posts from a record file (.tsv) or one post per line.
std::vector<FeedPost> read_posts(const std::filesystem::path& path);
std::vector<Verdict> run_classify(const std::filesystem::path& bundle_dir, std::span<const FeedPost> posts);

std::filesystem::path run_export_bundle(const RunConfig& config, const std::filesystem::path& out_dir = {});

DeskCorpus run_desk_gen(const RunConfig& config, const std::filesystem::path& out_file);

// Writes <run_dir>/manifests/<command>.json: config snapshot, seed, and the
// BLAKE2b-256 of each listed artifact (paths relative to the run dir when
// inside it). Eval manifests are named after their metrics file.
void write_run_manifest(const RunConfig& config, const std::string& command,
                        const std::vector<std::filesystem::path>& artifacts);

// Load helpers shared with tests and bindings.
TrainData load_train_data(const RunConfig& config, const Vocab& vocab, Split split);

}  // namespace mguard
