#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "mguard/blake2b.hpp"
#include "mguard/corpus.hpp"
#include "mguard/deskdata.hpp"
#include "mguard/error.hpp"
#include "mguard/eval.hpp"
#include "mguard/pipeline.hpp"
#include "mguard/quant.hpp"
#include "mguard/runtime.hpp"
#include "mguard/textnorm.hpp"
#include "mguard/tokenizer.hpp"
#include "mguard/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mguard;

namespace {

// JSON text from the C++ side becomes plain Python objects.
py::object from_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

py::dict verdict_dict(const Verdict& v) {
  py::dict d;
  d["post_id"] = v.post_id;
  d["status"] = std::string(to_string(v.status));
  d["p1"] = v.p1 ? py::object(py::float_(*v.p1)) : py::object(py::none());
  d["latency_ms"] = v.latency_ms;
  return d;
}

FeedPost to_post(const py::handle& h, std::size_t index) {
  if (py::isinstance<py::str>(h)) return {"post-" + std::to_string(index), Platform::kOther, h.cast<std::string>()};
  const auto d = h.cast<py::dict>();
  FeedPost p;
  p.post_id = d.contains("post_id") ? d["post_id"].cast<std::string>() : "post-" + std::to_string(index);
  p.text = d["text"].cast<std::string>();
  if (d.contains("platform")) p.platform = parse_platform(d["platform"].cast<std::string>());
  return p;
}

// A loaded bundle plus one in-memory session.
class Classifier {
 public:
  explicit Classifier(const fs::path& dir) : bundle_(load_bundle(dir)), session_(bundle_.tau, bundle_.gates) {}

  double tau() const { return bundle_.tau; }
  py::list classify(const py::iterable& posts) {
    std::vector<FeedPost> batch;
    std::size_t i = 0;
    for (const auto& h : posts) batch.push_back(to_post(h, i++));
    std::vector<Verdict> out;
    {
      py::gil_scoped_release release;
      for (const auto& p : batch) out.push_back(classify_post(session_, bundle_.model.get(), p));
    }
    py::list l;
    for (const auto& v : out) l.append(verdict_dict(v));
    return l;
  }
  void reset() { session_ = Session(bundle_.tau, bundle_.gates); }
  std::size_t seen_count() const { return session_.seen_count(); }

 private:
  Bundle bundle_;
  Session session_;
};

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  return RunConfig::load(path, overrides);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "On-device misinformation detection toolkit (C++ core)";

  static py::exception<Error> base(m, "MguardError", PyExc_RuntimeError);
  static py::exception<Error> config_error(m, "ConfigError", base.ptr());
  static py::exception<Error> io_error(m, "IoError", base.ptr());
  static py::exception<Error> data_error(m, "DataError", base.ptr());
  static py::exception<Error> state_error(m, "StateError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::kConfig: py::set_error(config_error, e.what()); break;
        case ErrorKind::kIo: py::set_error(io_error, e.what()); break;
        case ErrorKind::kData: py::set_error(data_error, e.what()); break;
        case ErrorKind::kState: py::set_error(state_error, e.what()); break;
        default: py::set_error(base, e.what()); break;
      }
    }
  });

  // text
  m.def("normalize", [](const std::string& text) { return TextNormalizer::builtin().normalize(text).text; }, py::arg("text"));
  m.def("english_gate",
        [](const std::string& text) { return TextNormalizer::builtin().english_gate(TextNormalizer::builtin().normalize(text)); },
        py::arg("text"));
  m.def("length_gate", [](const std::string& text, std::size_t min_tokens) {
    return length_gate(TextNormalizer::builtin().normalize(text), min_tokens);
  }, py::arg("text"), py::arg("min_tokens") = 10);
  m.def("fingerprint", [](const std::string& normalized) { return fingerprint_hex(fingerprint(normalized)); },
        py::arg("normalized_text"));

  // tokenizer
  py::class_<Vocab>(m, "Vocab")
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save)
      .def("__len__", &Vocab::size)
      .def_property_readonly("tokens", &Vocab::tokens)
      .def("encode", [](const Vocab& v, const std::string& text, std::size_t max_len) {
        const auto seq = encode(v, TextNormalizer::builtin().normalize(text), max_len);
        return py::make_tuple(seq.ids, seq.mask);
      }, py::arg("text"), py::arg("max_len") = kDefaultMaxLen)
      .def("tokenize", [](const Vocab& v, const std::string& text) {
        std::vector<std::string> out;
        for (auto id : tokenize(v, TextNormalizer::builtin().normalize(text).text)) out.push_back(v.token(id));
        return out;
      });
  m.def("build_vocab", [](const std::vector<std::string>& texts, std::size_t size) {
    std::vector<CleanText> clean;
    for (const auto& t : texts) clean.push_back(TextNormalizer::builtin().normalize(t));
    return build_vocab(clean, size);
  }, py::arg("texts"), py::arg("size"));

  // losses and metrics
  m.def("focal_loss", &focal_loss, py::arg("p"), py::arg("y"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("weighted_bce", &weighted_bce, py::arg("p"), py::arg("y"), py::arg("w0"), py::arg("w1"));
  m.def("evaluate", [](const std::vector<double>& p, const std::vector<int>& y, double tau) {
    return from_json(evaluate(p, y, tau).to_json());
  }, py::arg("probs"), py::arg("labels"), py::arg("tau") = 0.5);
  m.def("auroc", [](const std::vector<double>& p, const std::vector<int>& y) { return auroc(p, y); });
  m.def("calibrate_threshold", [](const std::vector<double>& p, const std::vector<int>& y) {
    const auto c = calibrate_threshold(p, y);
    return py::make_tuple(c.tau, c.macro_f1);
  }, py::arg("probs"), py::arg("labels"));
  m.def("latency_stats", [](const std::vector<double>& s) { return from_json(latency_stats(s).to_json()); });
  m.def("nearest_rank", [](std::vector<double> s, double q) {
    std::sort(s.begin(), s.end());
    return nearest_rank(s, q);
  }, py::arg("samples"), py::arg("q"));

  // quantization
  m.def("quantize_rows", [](py::array_t<float, py::array::c_style | py::array::forcecast> w) {
    if (w.ndim() != 2) throw ShapeError("quantize_rows expects a 2-D array");
    Mat<float> mat(w.shape(0), w.shape(1));
    std::copy(w.data(), w.data() + w.size(), mat.data());
    const auto q = quantize_tensor(mat);
    py::array_t<std::int8_t> qa({w.shape(0), w.shape(1)});
    std::copy(q.q.begin(), q.q.end(), qa.mutable_data());
    return py::make_tuple(qa, py::array_t<float>(static_cast<py::ssize_t>(q.scales.size()), q.scales.data()));
  }, py::arg("weights"), "Per-row symmetric int8 quantization; returns (q, scales).");

  // desk corpus
  m.def("generate_desk_corpus", [](std::uint64_t seed, std::size_t n_per_cell, double noise_rate) {
    DeskCorpusSpec spec;
    spec.seed = seed;
    spec.n_per_cell = n_per_cell;
    spec.noise_rate = noise_rate;
    const auto c = generate_desk_corpus(spec);
    py::list out;
    for (const auto& p : c.posts) {
      py::dict d;
      d["id"] = p.id;
      d["source"] = std::string(to_string(p.source));
      d["platform"] = std::string(to_string(p.platform));
      d["text"] = p.text;
      d["label"] = p.raw_label ? py::object(py::str(*p.raw_label)) : py::object(py::none());
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 42, py::arg("n_per_cell") = 300, py::arg("noise_rate") = 0.05);

  // pipeline
  py::class_<RunConfig>(m, "RunConfig")
      .def_static("load", &load_config, py::arg("path"), py::arg("overrides") = std::vector<std::string>{})
      .def_static("parse", [](const std::string& text, const fs::path& base, const std::vector<std::string>& ov) {
        return RunConfig::parse(text, base, ov);
      }, py::arg("text"), py::arg("base_dir") = fs::path{}, py::arg("overrides") = std::vector<std::string>{})
      .def_property_readonly("run_dir", [](const RunConfig& c) { return c.run_dir; })
      .def_property_readonly("seed", [](const RunConfig& c) { return c.seed; })
      .def("to_json", [](const RunConfig& c) { return from_json(c.to_json()); });

  m.def("desk_gen", [](const RunConfig& c, const fs::path& out) {
    const auto d = run_desk_gen(c, out);
    return d.posts.size();
  });
  m.def("prepare", [](const RunConfig& c) {
    PrepareOutcome o;
    {
      py::gil_scoped_release release;
      o = run_prepare(c);
    }
    py::dict d;
    d["retained"] = o.manifest.assignments.size();
    d["duplicates"] = o.report.duplicates;
    d["vocab_size"] = o.vocab_size;
    return d;
  });
  m.def("train", [](const RunConfig& c) {
    TrainOutcome o;
    {
      py::gil_scoped_release release;
      o = run_train(c);
    }
    py::dict d;
    d["best_epoch"] = o.history.best_epoch;
    d["best_dev_macro_f1"] = o.history.best_dev_macro_f1;
    d["tau"] = o.calibration.tau;
    d["epochs"] = o.history.epochs.size();
    return d;
  });
  m.def("quantize", [](const RunConfig& c) { return from_json(run_quantize(c).to_json()); });
  m.def("eval", [](const RunConfig& c, const std::string& split, bool quantized) {
    return from_json(run_eval(c, parse_split(split), quantized).to_json());
  }, py::arg("config"), py::arg("split") = "Test", py::arg("quantized") = true);
  m.def("bench", [](const RunConfig& c) {
    BenchResult b;
    {
      py::gil_scoped_release release;
      b = run_bench(c);
    }
    return from_json(b.to_json());
  });
  m.def("export_bundle", [](const RunConfig& c, const fs::path& out) { return run_export_bundle(c, out); },
        py::arg("config"), py::arg("out_dir") = fs::path{});

  py::class_<Classifier>(m, "Classifier")
      .def(py::init<const fs::path&>(), py::arg("bundle_dir"))
      .def_property_readonly("tau", &Classifier::tau)
      .def_property_readonly("seen_count", &Classifier::seen_count)
      .def("classify", &Classifier::classify, py::arg("posts"),
           "Posts are strings or dicts with text and optional post_id/platform.")
      .def("reset", &Classifier::reset, "Forget the duplicate-suppression state.");
}
