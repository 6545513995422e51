#include "mguard/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mguard/error.hpp"

namespace mguard {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---- strict config reading -------------------------------------------------

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config field '" + label() + "' must be an object");
  }

  std::string name(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const json* find(const char* key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const char* key, int& dst) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw type(key, "an integer");
      dst = v->get<int>();
    }
  }
  template <typename U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  void read(const char* key, U& dst) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw type(key, "a non-negative integer");
      dst = v->get<U>();
    }
  }
  void read(const char* key, double& dst) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw type(key, "a number");
      dst = v->get<double>();
    }
  }
  void read(const char* key, float& dst) {
    double d = dst;
    read(key, d);
    dst = static_cast<float>(d);
  }
  void read(const char* key, bool& dst) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw type(key, "a boolean");
      dst = v->get<bool>();
    }
  }
  void read(const char* key, std::string& dst) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw type(key, "a string");
      dst = v->get<std::string>();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw ConfigError("unknown config field '" + name(k) + "'");
  }

  Error type(std::string_view key, std::string_view what) const {
    return ConfigError("config field '" + name(key) + "' must be " + std::string(what));
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

std::string_view loss_name(LossKind k) { return k == LossKind::kFocal ? "focal" : "weighted_bce"; }

LossKind parse_loss(const std::string& s, const std::string& field) {
  if (s == "focal") return LossKind::kFocal;
  if (s == "weighted_bce") return LossKind::kWeightedBce;
  throw ConfigError("config field '" + field + "' must be \"focal\" or \"weighted_bce\"");
}

StageSpec parse_stage(const json& j, const std::string& path) {
  Fields f(j, path);
  StageSpec s;
  f.read("name", s.name);
  std::string split(to_string(s.split));
  f.read("split", split);
  try {
    s.split = parse_split(split);
  } catch (const Error&) {
    throw ConfigError("config field '" + f.name("split") + "' names an unknown split '" + split + "'");
  }
  if (s.split == Split::kDev || s.split == Split::kTest)
    throw ConfigError("config field '" + f.name("split") + "' cannot train on " + split);
  f.read("epochs", s.epochs);
  std::string loss(loss_name(s.loss));
  f.read("loss", loss);
  s.loss = parse_loss(loss, f.name("loss"));
  f.read("fgm", s.fgm_enabled);
  f.read("freeze_lowest_layers", s.freeze_lowest_layers);
  f.read("balance_classes", s.balance_classes);
  if (const json* w = f.find("class_weights"); w && !w->is_null()) {
    if (!w->is_array() || w->size() != 2 || !(*w)[0].is_number() || !(*w)[1].is_number())
      throw f.type("class_weights", "null or a pair of numbers");
    s.class_weights = std::array<double, 2>{(*w)[0].get<double>(), (*w)[1].get<double>()};
  }
  f.finish();
  if (s.name.empty()) s.name = std::string(to_string(s.split));
  return s;
}

json stage_json(const StageSpec& s) {
  json j;
  j["name"] = s.name;
  j["split"] = std::string(to_string(s.split));
  j["epochs"] = s.epochs;
  j["loss"] = std::string(loss_name(s.loss));
  j["fgm"] = s.fgm_enabled;
  j["freeze_lowest_layers"] = s.freeze_lowest_layers;
  j["balance_classes"] = s.balance_classes;
  j["class_weights"] = s.class_weights ? json::array({(*s.class_weights)[0], (*s.class_weights)[1]}) : json(nullptr);
  return j;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p.lexically_normal();
  return (base / p).lexically_normal();
}

// "a.b.0.c=value" -> JSON pointer /a/b/0/c; the value is JSON when it parses, else a string.
void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::kUsage, "override must look like key.path=value: " + spec);
  std::string pointer = "/";
  for (char c : spec.substr(0, eq)) pointer += c == '.' ? '/' : c;
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  try {
    root[json::json_pointer(pointer)] = value;
  } catch (const json::exception&) {
    throw ConfigError("cannot apply override '" + spec + "'");
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size())))
    throw IoError("cannot write " + path.string());
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw IoError("missing " + path.string() + " (" + hint + ")");
}

std::size_t encode_len(const ModelConfig& m) { return std::min(kMaxPostTokens, static_cast<std::size_t>(m.max_len)); }

}  // namespace

// ---- RunConfig -------------------------------------------------------------------

RunConfig RunConfig::parse(std::string_view json_text, const fs::path& base_dir, std::span<const std::string> overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);

  RunConfig c;
  Fields f(root, "");
  f.read("seed", c.seed);
  if (const json* corpus = f.find("corpus")) {
    if (!corpus->is_array()) throw f.type("corpus", "a list of paths");
    for (const auto& p : *corpus) {
      if (!p.is_string()) throw f.type("corpus", "a list of paths");
      c.corpus.push_back(resolve(p.get<std::string>(), base_dir));
    }
  }
  std::string run_dir = c.run_dir.string();
  f.read("run_dir", run_dir);
  c.run_dir = resolve(run_dir, base_dir);

  if (const json* m = f.find("model")) {
    Fields mf(*m, "model");
    mf.read("n_layers", c.model.n_layers);
    mf.read("d_model", c.model.d_model);
    mf.read("n_heads", c.model.n_heads);
    mf.read("d_ff", c.model.d_ff);
    mf.read("vocab_size", c.model.vocab_size);
    mf.read("max_len", c.model.max_len);
    mf.read("n_classes", c.model.n_classes);
    mf.read("dropout", c.model.dropout);
    mf.finish();
  }
  if (const json* g = f.find("gates")) {
    Fields gf(*g, "gates");
    gf.read("min_ascii_fraction", c.gates.min_ascii_fraction);
    gf.read("min_stopword_hits", c.gates.min_stopword_hits);
    gf.read("min_tokens", c.gates.min_tokens);
    gf.finish();
  }
  if (const json* s = f.find("splits")) {
    Fields sf(*s, "splits");
    sf.read("stage2_target", c.splits.stage2_target);
    if (const json* mix = sf.find("stage2_mix")) {
      if (!mix->is_object()) throw sf.type("stage2_mix", "an object of source weights");
      c.splits.stage2_mix.clear();
      for (const auto& [k, v] : mix->items()) {
        Source src;
        try {
          src = parse_source(k);
        } catch (const Error&) {
          throw ConfigError("config field 'splits.stage2_mix." + k + "' names an unknown source");
        }
        if (!v.is_number()) throw ConfigError("config field 'splits.stage2_mix." + k + "' must be a number");
        c.splits.stage2_mix[src] = v.get<double>();
      }
    }
    sf.finish();
  }
  if (const json* t = f.find("train")) {
    Fields tf(*t, "train");
    auto& p = c.plan;
    tf.read("lr", p.lr);
    tf.read("warmup_frac", p.warmup_frac);
    tf.read("batch_size", p.batch_size);
    tf.read("accumulation_steps", p.accumulation_steps);
    tf.read("patience", p.patience);
    tf.read("fgm_epsilon", p.fgm_epsilon);
    tf.read("focal_alpha", p.focal_alpha);
    tf.read("focal_gamma", p.focal_gamma);
    tf.read("weight_decay", p.adamw.weight_decay);
    tf.read("adam_beta1", p.adamw.beta1);
    tf.read("adam_beta2", p.adamw.beta2);
    tf.read("adam_eps", p.adamw.eps);
    if (const json* stages = tf.find("stages")) {
      if (!stages->is_array()) throw tf.type("stages", "a list of stage objects");
      p.stages.clear();
      for (std::size_t i = 0; i < stages->size(); ++i)
        p.stages.push_back(parse_stage((*stages)[i], "train.stages." + std::to_string(i)));
    }
    tf.finish();
  }
  f.read("quantize", c.quantize);
  if (const json* tau = f.find("tau_override"); tau && !tau->is_null()) {
    if (!tau->is_number()) throw f.type("tau_override", "null or a number");
    c.tau_override = tau->get<double>();
  }
  if (const json* b = f.find("bench")) {
    Fields bf(*b, "bench");
    bf.read("warmup", c.bench_warmup);
    bf.finish();
  }
  if (const json* d = f.find("desk")) {
    Fields df(*d, "desk");
    df.read("n_per_cell", c.desk.n_per_cell);
    df.read("noise_rate", c.desk.noise_rate);
    df.read("duplicate_fraction", c.desk.duplicate_fraction);
    df.read("non_english_fraction", c.desk.non_english_fraction);
    df.read("short_fraction", c.desk.short_fraction);
    df.read("unverified_fraction", c.desk.unverified_fraction);
    if (const json* srcs = df.find("sources")) {
      if (!srcs->is_array()) throw df.type("sources", "a list of source names");
      c.desk.sources.clear();
      for (const auto& s : *srcs) {
        if (!s.is_string()) throw df.type("sources", "a list of source names");
        try {
          c.desk.sources.push_back(parse_source(s.get<std::string>()));
        } catch (const Error&) {
          throw ConfigError("config field 'desk.sources' names an unknown source '" + s.get<std::string>() + "'");
        }
      }
    }
    df.finish();
  }
  f.finish();

  // One master seed drives splits, init, shuffling, dropout and the desk corpus.
  c.splits.seed = c.seed;
  c.plan.seed = c.seed;
  c.desk.seed = c.seed;

  c.model.validate();
  c.plan.validate(c.model);
  if (!(c.gates.min_ascii_fraction >= 0.0 && c.gates.min_ascii_fraction <= 1.0))
    throw ConfigError("config field 'gates.min_ascii_fraction' must be in [0, 1]");
  if (c.tau_override && !(*c.tau_override >= 0.0 && *c.tau_override <= 1.0))
    throw ConfigError("config field 'tau_override' must be in [0, 1]");
  if (c.model.n_classes != 2) throw ConfigError("config field 'model.n_classes' must be 2");
  return c;
}

RunConfig RunConfig::load(const fs::path& file, std::span<const std::string> overrides) {
  if (!fs::exists(file)) throw IoError("config file not found: " + file.string());
  return parse(read_text(file), fs::absolute(file).parent_path(), overrides);
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  json corpus_list = json::array();
  for (const auto& p : corpus) corpus_list.push_back(fs::absolute(p).lexically_normal().string());
  j["corpus"] = corpus_list;
  j["run_dir"] = fs::absolute(run_dir).lexically_normal().string();
  j["model"] = {{"n_layers", model.n_layers}, {"d_model", model.d_model},       {"n_heads", model.n_heads},
                {"d_ff", model.d_ff},         {"vocab_size", model.vocab_size}, {"max_len", model.max_len},
                {"n_classes", model.n_classes}, {"dropout", model.dropout}};
  j["gates"] = {{"min_ascii_fraction", gates.min_ascii_fraction},
                {"min_stopword_hits", gates.min_stopword_hits},
                {"min_tokens", gates.min_tokens}};
  json mix = json::object();
  for (const auto& [s, w] : splits.stage2_mix) mix[std::string(to_string(s))] = w;
  j["splits"] = {{"stage2_target", splits.stage2_target}, {"stage2_mix", mix}};
  json stages = json::array();
  for (const auto& s : plan.stages) stages.push_back(stage_json(s));
  j["train"] = {{"lr", plan.lr},
                {"warmup_frac", plan.warmup_frac},
                {"batch_size", plan.batch_size},
                {"accumulation_steps", plan.accumulation_steps},
                {"patience", plan.patience},
                {"fgm_epsilon", plan.fgm_epsilon},
                {"focal_alpha", plan.focal_alpha},
                {"focal_gamma", plan.focal_gamma},
                {"weight_decay", plan.adamw.weight_decay},
                {"adam_beta1", plan.adamw.beta1},
                {"adam_beta2", plan.adamw.beta2},
                {"adam_eps", plan.adamw.eps},
                {"stages", stages}};
  j["quantize"] = quantize;
  j["tau_override"] = tau_override ? json(*tau_override) : json(nullptr);
  j["bench"] = {{"warmup", bench_warmup}};
  json srcs = json::array();
  for (auto s : desk.sources) srcs.push_back(std::string(to_string(s)));
  j["desk"] = {{"n_per_cell", desk.n_per_cell},
               {"noise_rate", desk.noise_rate},
               {"duplicate_fraction", desk.duplicate_fraction},
               {"non_english_fraction", desk.non_english_fraction},
               {"short_fraction", desk.short_fraction},
               {"unverified_fraction", desk.unverified_fraction},
               {"sources", srcs}};
  return j.dump(2);
}

// ---- run manifest -----------------------------------------------------------------

void write_run_manifest(const RunConfig& config, const std::string& command, const std::vector<fs::path>& artifacts) {
  json j;
  j["command"] = command;
  j["seed"] = config.seed;
  j["config"] = json::parse(config.to_json());
  json inputs = json::object();
  for (const auto& p : config.corpus)
    if (fs::exists(p)) inputs[fs::absolute(p).lexically_normal().string()] = file_hash(p);
  j["inputs"] = inputs;
  json arts = json::object();
  const fs::path root = fs::absolute(config.run_dir).lexically_normal();
  for (const auto& a : artifacts) {
    const fs::path abs = fs::absolute(a).lexically_normal();
    const fs::path rel = abs.lexically_relative(root);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    if (fs::is_directory(abs)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(abs))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& p : files) {
        const fs::path r = p.lexically_relative(root);
        arts[inside ? r.generic_string() : p.generic_string()] = file_hash(p);
      }
    } else {
      arts[inside ? rel.generic_string() : abs.generic_string()] = file_hash(abs);
    }
  }
  j["artifacts"] = arts;
  write_text(config.run_dir / run_files::kRunManifestDir / (command + ".json"), j.dump(2) + "\n");
}

fs::path split_records_path(const fs::path& run_dir, Split split) {
  std::string name(to_string(split));
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return run_dir / run_files::kRecordsDir / (name + ".tsv");
}

// ---- prepare ---------------------------------------------------------------------

PrepareOutcome run_prepare(const RunConfig& config) {
  if (config.corpus.empty()) throw ConfigError("config field 'corpus' lists no files");
  std::vector<RawPost> raw;
  for (const auto& p : config.corpus) {
    if (!fs::exists(p)) throw IoError("corpus file not found: " + p.string());
    auto posts = read_raw_records(p);
    raw.insert(raw.end(), std::make_move_iterator(posts.begin()), std::make_move_iterator(posts.end()));
  }
  auto ingested = ingest(raw, TextNormalizer::builtin(), config.gates);
  PrepareOutcome out;
  out.report = ingested.report;
  out.manifest = build_splits(ingested.records, config.splits);

  fs::create_directories(config.run_dir / run_files::kRecordsDir);
  std::vector<fs::path> artifacts;
  write_text(config.run_dir / run_files::kManifest, out.manifest.serialize());
  artifacts.push_back(config.run_dir / run_files::kManifest);
  std::vector<CleanText> train_text;
  for (Split s : kAllSplits) {
    const auto recs = select_split(ingested.records, out.manifest, s);
    write_clean_records(split_records_path(config.run_dir, s), recs);
    artifacts.push_back(split_records_path(config.run_dir, s));
    if (s == Split::kStage0 || s == Split::kStage1 || s == Split::kStage2)
      for (const auto& r : recs) train_text.push_back(r.text);
  }
  const Vocab vocab = build_vocab(train_text, static_cast<std::size_t>(config.model.vocab_size));
  vocab.save(config.run_dir / run_files::kVocab);
  artifacts.push_back(config.run_dir / run_files::kVocab);
  out.vocab_size = vocab.size();

  const auto& r = out.report;
  json rep;
  rep["raw"] = r.raw;
  rep["dropped_label"] = r.dropped_label;
  rep["skipped_short"] = r.skipped_short;
  rep["skipped_language"] = r.skipped_language;
  rep["duplicates"] = r.duplicates;
  rep["retained"] = ingested.records.size();
  json per = json::object();
  for (const auto& [s, c] : r.per_source) per[std::string(to_string(s))] = {{"seen", c.seen}, {"retained", c.retained}};
  rep["per_source"] = per;
  json splits = json::object();
  for (Split s : kAllSplits) {
    const auto& st = out.manifest.stats_for(s);
    splits[std::string(to_string(s))] = {{"count", st.count}, {"positives", st.positives}, {"prevalence", st.prevalence()}};
  }
  rep["splits"] = splits;
  rep["seed"] = config.seed;
  write_text(config.run_dir / run_files::kIngestReport, rep.dump(2) + "\n");
  artifacts.push_back(config.run_dir / run_files::kIngestReport);
  write_run_manifest(config, "prepare", artifacts);
  return out;
}

// ---- train --------------------------------------------------------------------------

TrainData load_train_data(const RunConfig& config, const Vocab& vocab, Split split) {
  const fs::path path = split_records_path(config.run_dir, split);
  require_file(path, "run prepare first");
  TrainData d;
  for (const auto& r : read_clean_records(path)) {
    d.seqs.push_back(encode(vocab, r.text, encode_len(config.model)));
    d.labels.push_back(r.y);
  }
  return d;
}

namespace {
Vocab load_run_vocab(const RunConfig& config) {
  const fs::path path = config.run_dir / run_files::kVocab;
  require_file(path, "run prepare first");
  return Vocab::load(path);
}

Params load_run_checkpoint(const RunConfig& config) {
  const fs::path path = config.run_dir / run_files::kCheckpoint;
  require_file(path, "run train first");
  Params p = load_checkpoint(path);
  if (p.config != config.model) {
    ModelConfig a = p.config, b = config.model;
    a.dropout = b.dropout;  // dropout does not affect inference
    if (a != b) throw ConfigError("checkpoint architecture does not match config field 'model'");
  }
  return p;
}
}  // namespace

TrainOutcome run_train(const RunConfig& config, const EpochCallback& on_epoch) {
  const Vocab vocab = load_run_vocab(config);
  std::map<Split, TrainData> data;
  for (const auto& s : config.plan.stages)
    if (!data.contains(s.split)) data[s.split] = load_train_data(config, vocab, s.split);
  const TrainData dev = load_train_data(config, vocab, Split::kDev);

  Rng init_rng(config.seed);
  Params init = Params::initialized(config.model, init_rng);
  TrainResult result = run_curriculum(config.plan, data, dev, std::move(init), on_epoch);

  write_text(config.run_dir / run_files::kHistory, result.history.to_jsonl());
  if (result.history.aborted) {
    write_run_manifest(config, "train", {config.run_dir / run_files::kHistory});
    throw Error(ErrorKind::kDivergence, "training diverged: " + result.history.abort_reason);
  }
  save_checkpoint(config.run_dir / run_files::kCheckpoint, result.best);

  TrainOutcome out;
  out.history = result.history;
  const auto probs = predict(result.best, dev.seqs);
  out.calibration = calibrate_threshold(probs, dev.labels);
  json cal;
  cal["tau"] = out.calibration.tau;
  cal["dev_macro_f1"] = out.calibration.macro_f1;
  cal["best_epoch"] = result.history.best_epoch;
  cal["best_dev_macro_f1_at_0_5"] = result.history.best_dev_macro_f1;
  cal["grid"] = default_threshold_grid();
  cal["seed"] = config.seed;
  write_text(config.run_dir / run_files::kCalibration, cal.dump(2) + "\n");
  write_run_manifest(config, "train",
                     {config.run_dir / run_files::kCheckpoint, config.run_dir / run_files::kHistory,
                      config.run_dir / run_files::kCalibration});
  return out;
}

// ---- quantize / eval / bench ----------------------------------------------------------

SizeReport run_quantize(const RunConfig& config) {
  const Params params = load_run_checkpoint(config);
  const QuantModel q = quantize_model(params);
  save_quantized(config.run_dir / run_files::kQuantized, q);
  const SizeReport report = size_report(params, q);
  write_text(config.run_dir / run_files::kSizeReport, report.to_json() + "\n");
  write_run_manifest(config, "quantize",
                     {config.run_dir / run_files::kQuantized, config.run_dir / run_files::kSizeReport});
  return report;
}

double resolve_tau(const RunConfig& config) {
  if (config.tau_override) return *config.tau_override;
  const fs::path path = config.run_dir / run_files::kCalibration;
  require_file(path, "run train first or set tau_override");
  try {
    return json::parse(read_text(path)).at("tau").get<double>();
  } catch (const json::exception& e) {
    throw DataError("calibration record is malformed: " + std::string(e.what()));
  }
}

namespace {
InferenceModel load_run_model(const RunConfig& config, bool quantized) {
  Vocab vocab = load_run_vocab(config);
  if (quantized) {
    const fs::path path = config.run_dir / run_files::kQuantized;
    require_file(path, "run quantize first");
    return InferenceModel(load_quantized(path), std::move(vocab));
  }
  return InferenceModel(load_run_checkpoint(config), std::move(vocab));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}
}  // namespace

MetricsReport run_eval(const RunConfig& config, Split split, bool quantized) {
  const InferenceModel model = load_run_model(config, quantized);
  const double tau = resolve_tau(config);
  const fs::path path = split_records_path(config.run_dir, split);
  require_file(path, "run prepare first");
  std::vector<TokenSeq> seqs;
  std::vector<int> labels;
  for (const auto& r : read_clean_records(path)) {
    seqs.push_back(model.encode(r.text));
    labels.push_back(r.y);
  }
  if (seqs.empty()) throw DataError("split " + std::string(to_string(split)) + " is empty");
  const auto probs = model.predict(seqs);
  const MetricsReport report = evaluate(probs, labels, tau);
  json j = json::parse(report.to_json());
  j["split"] = std::string(to_string(split));
  j["model"] = quantized ? "int8" : "float";
  j["n"] = labels.size();
  j["seed"] = config.seed;
  const fs::path out = config.run_dir / ("metrics_" + lower(to_string(split)) + (quantized ? "_int8" : "_float") + ".json");
  write_text(out, j.dump(2) + "\n");
  write_run_manifest(config, out.stem().string(), {out});
  return report;
}

BenchResult run_bench(const RunConfig& config) {
  const InferenceModel model = load_run_model(config, config.quantize);
  const double tau = resolve_tau(config);
  const fs::path path = split_records_path(config.run_dir, Split::kTest);
  require_file(path, "run prepare first");
  std::vector<FeedPost> posts;
  for (const auto& r : read_clean_records(path)) posts.push_back(FeedPost{r.id, Platform::kOther, r.text.text});
  BenchResult result = bench(model, posts, tau, config.bench_warmup, config.gates);
  json j = json::parse(result.to_json());
  j["model"] = config.quantize ? "int8" : "float";
  j["warmup"] = config.bench_warmup;
  j["posts"] = posts.size();
  j["seed"] = config.seed;
  write_text(config.run_dir / run_files::kBench, j.dump(2) + "\n");
  write_run_manifest(config, "bench", {config.run_dir / run_files::kBench});
  return result;
}

// ---- classify / bundle / desk -------------------------------------------------------------

std::vector<FeedPost> read_posts(const fs::path& path) {
  std::vector<FeedPost> posts;
  if (path.extension() == ".tsv") {
    for (auto& r : read_raw_records(path)) posts.push_back(FeedPost{r.id, r.platform, std::move(r.text)});
    return posts;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    posts.push_back(FeedPost{"line-" + std::to_string(n), Platform::kOther, line});
  }
  return posts;
}

std::vector<Verdict> run_classify(const fs::path& bundle_dir, std::span<const FeedPost> posts) {
  const Bundle b = load_bundle(bundle_dir);
  Session session(b.tau, b.gates);
  std::vector<Verdict> out;
  out.reserve(posts.size());
  for (const auto& p : posts) out.push_back(classify_post(session, b.model.get(), p));
  return out;
}

fs::path run_export_bundle(const RunConfig& config, const fs::path& out_dir) {
  const fs::path q = config.run_dir / run_files::kQuantized;
  require_file(q, "run quantize first");
  const fs::path dir = out_dir.empty() ? config.run_dir / run_files::kBundleDir : out_dir;
  export_bundle(dir, load_quantized(q), load_run_vocab(config), resolve_tau(config), config.gates);
  write_run_manifest(config, "export-bundle", {dir});
  return dir;
}

DeskCorpus run_desk_gen(const RunConfig& config, const fs::path& out_file) {
  DeskCorpus corpus = generate_desk_corpus(config.desk);
  std::ostringstream ss;
  write_raw_records(ss, corpus.posts);
  write_text(out_file, ss.str());
  return corpus;
}

}  // namespace mguard
