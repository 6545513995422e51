// mguard: command-line entry point for the on-device misinformation toolkit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mguard/error.hpp"
#include "mguard/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mguard;

namespace {

// Exit codes, one per error category.
int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return 2;
    case ErrorKind::kConfig: return 3;
    case ErrorKind::kIo: return 4;
    case ErrorKind::kData: return 5;
    case ErrorKind::kShape: return 6;
    case ErrorKind::kDivergence: return 7;
    case ErrorKind::kState: return 8;
  }
  return 1;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kData: return "data";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kState: return "state";
  }
  return "internal";
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run_dir;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run config")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override a config field, e.g. --set train.lr=0.001");
    app->add_option("--run-dir", run_dir, "override run_dir");
    app->add_option("--seed", seed, "override the master seed");
  }

  RunConfig load() const {
    std::vector<std::string> overrides = sets;
    if (!run_dir.empty()) overrides.push_back("run_dir=\"" + fs::absolute(run_dir).generic_string() + "\"");
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (config.empty()) return RunConfig::parse("{}", fs::current_path(), overrides);
    return RunConfig::load(config, overrides);
  }
};

void print_json(const std::string& s) { std::cout << s << (s.ends_with('\n') ? "" : "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mguard: on-device misinformation detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mguard 0.1.0");

  Common common;

  auto* desk = app.add_subcommand("desk-gen", "generate the seeded synthetic desk corpus");
  common.attach(desk);
  std::string desk_out;
  desk->add_option("-o,--out", desk_out, "output record file")->required();

  auto* prepare = app.add_subcommand("prepare", "ingest corpora, build splits, records and vocab");
  common.attach(prepare);

  auto* train = app.add_subcommand("train", "run the curriculum and calibrate the threshold");
  common.attach(train);
  bool quiet = false;
  train->add_flag("-q,--quiet", quiet, "no per-epoch progress");

  auto* quantize = app.add_subcommand("quantize", "int8-quantize the trained checkpoint");
  common.attach(quantize);

  auto* eval = app.add_subcommand("eval", "metrics on a split at the calibrated threshold");
  common.attach(eval);
  std::string split_name = "Test";
  std::string model_kind = "both";
  eval->add_option("--split", split_name, "Stage0|Stage1|Stage2|Dev|Test");
  eval->add_option("--model", model_kind, "float|int8|both")->check(CLI::IsMember({"float", "int8", "both"}));

  auto* benchc = app.add_subcommand("bench", "latency percentiles on the Test split");
  common.attach(benchc);

  auto* classify = app.add_subcommand("classify", "classify posts with an exported bundle");
  std::string bundle_dir, input, output;
  classify->add_option("-b,--bundle", bundle_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
  classify->add_option("-i,--input", input, "posts: .tsv record file or one post per line")
      ->required()
      ->check(CLI::ExistingFile);
  classify->add_option("-o,--output", output, "verdict JSONL (default stdout)");

  auto* exportb = app.add_subcommand("export-bundle", "package model.q8, vocab, config and tau");
  common.attach(exportb);
  std::string bundle_out;
  exportb->add_option("-o,--out", bundle_out, "bundle directory (default <run_dir>/bundle)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mguard: usage error: " << e.what() << "\n";
    return exit_code(ErrorKind::kUsage);
  }

  try {
    if (*desk) {
      const RunConfig cfg = common.load();
      const auto corpus = run_desk_gen(cfg, desk_out);
      std::cout << "{\"posts\": " << corpus.posts.size() << ", \"core\": " << corpus.core
                << ", \"duplicates\": " << corpus.duplicate_ids.size() << ", \"non_english\": " << corpus.non_english
                << ", \"short\": " << corpus.short_posts << ", \"unverified\": " << corpus.unverified << "}\n";
    } else if (*prepare) {
      const RunConfig cfg = common.load();
      const auto out = run_prepare(cfg);
      std::cout << "{\"retained\": " << out.manifest.assignments.size() << ", \"duplicates\": " << out.report.duplicates
                << ", \"vocab_size\": " << out.vocab_size << "}\n";
    } else if (*train) {
      const RunConfig cfg = common.load();
      EpochCallback cb;
      if (!quiet)
        cb = [](const EpochRecord& e) {
          std::fprintf(stderr, "[%s %d] loss %.4f dev macro-F1 %.4f acc %.4f auroc %.4f\n", e.stage.c_str(),
                       e.stage_epoch, e.train_loss, e.dev_macro_f1, e.dev_accuracy, e.dev_auroc);
        };
      const auto out = run_train(cfg, cb);
      std::cout << "{\"best_epoch\": " << out.history.best_epoch
                << ", \"best_dev_macro_f1\": " << out.history.best_dev_macro_f1 << ", \"tau\": " << out.calibration.tau
                << ", \"dev_macro_f1_at_tau\": " << out.calibration.macro_f1 << "}\n";
    } else if (*quantize) {
      print_json(run_quantize(common.load()).to_json());
    } else if (*eval) {
      const RunConfig cfg = common.load();
      Split split;
      try {
        split = parse_split(split_name);
      } catch (const Error&) {
        throw Error(ErrorKind::kUsage, "unknown split '" + split_name + "'");
      }
      if (model_kind != "int8") print_json(run_eval(cfg, split, false).to_json());
      if (model_kind != "float") print_json(run_eval(cfg, split, true).to_json());
    } else if (*benchc) {
      print_json(run_bench(common.load()).to_json());
    } else if (*classify) {
      const auto verdicts = run_classify(bundle_dir, read_posts(input));
      std::ofstream file;
      if (!output.empty()) {
        file.open(output, std::ios::binary);
        if (!file) throw IoError("cannot write " + output);
      }
      std::ostream& out = output.empty() ? std::cout : file;
      for (const auto& v : verdicts) out << v.to_json() << "\n";
    } else if (*exportb) {
      const fs::path dir = run_export_bundle(common.load(), bundle_out);
      std::cout << "{\"bundle\": \"" << dir.generic_string() << "\"}\n";
    }
  } catch (const Error& e) {
    std::cerr << "mguard: " << kind_name(e.kind()) << " error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "mguard: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
