#include "mguard/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "encoder_ops.hpp"
#include "mguard/error.hpp"

namespace mguard {
namespace {

constexpr char kQuantMagic[4] = {'M', 'G', 'Q', '8'};
constexpr std::uint32_t kQuantVersion = 1;
constexpr std::uint8_t kKindF32 = 0;
constexpr std::uint8_t kKindInt8 = 1;

std::int8_t quantize_value(float w, float scale) {
  const float r = std::round(w / scale);  // half away from zero
  return static_cast<std::int8_t>(std::clamp(r, -127.0f, 127.0f));
}

// Weights are quantized offline, so the division is done in double to keep
// |w - q * scale| <= scale / 2 free of float rounding at the .5 boundaries.
std::int8_t quantize_weight(float w, float scale) {
  const double r = std::round(static_cast<double>(w) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
}

// Per-row symmetric quantization of an activation row into `out`.
float quantize_row(const float* x, int n, std::int8_t* out) {
  float m = 0.0f;
  for (int i = 0; i < n; ++i) m = std::max(m, std::abs(x[i]));
  const float scale = m > 0.0f ? m / 127.0f : 1.0f;
  for (int i = 0; i < n; ++i) out[i] = quantize_value(x[i], scale);
  return scale;
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw DataError("truncated quantized checkpoint");
  return v;
}

QuantTensor quantize_linear(const Mat<float>& w) { return quantize_tensor(w.transpose()); }

template <typename Fn>
void visit_quant(const QuantModel& m, Fn&& fn) {
  // fn(f32 tensor) or fn(QuantTensor), in Params declaration order.
  fn(m.token_embedding);
  fn(m.position_embedding);
  for (const auto& L : m.layers) {
    fn(L.wq);
    fn(L.wk);
    fn(L.wv);
    fn(L.wo);
    fn(L.ln1_gamma);
    fn(L.ln1_beta);
    fn(L.ln2_gamma);
    fn(L.ln2_beta);
    fn(L.w1);
    fn(L.b1);
    fn(L.w2);
    fn(L.b2);
  }
  fn(m.classifier);
  fn(m.classifier_bias);
}

template <typename Fn>
void visit_quant(QuantModel& m, Fn&& fn) {
  visit_quant(static_cast<const QuantModel&>(m), [&fn](const auto& t) { fn(const_cast<std::remove_cvref_t<decltype(t)>&>(t)); });
}

}  // namespace

QuantTensor quantize_tensor(const Mat<float>& w) {
  if (!w.allFinite()) throw DataError("cannot quantize a tensor with non-finite values");
  QuantTensor qt;
  qt.rows = static_cast<int>(w.rows());
  qt.cols = static_cast<int>(w.cols());
  qt.q.resize(static_cast<std::size_t>(w.size()));
  qt.scales.resize(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const float m = w.row(r).cwiseAbs().maxCoeff();
    const float scale = m > 0.0f ? m / 127.0f : 1.0f;
    qt.scales[static_cast<std::size_t>(r)] = scale;
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      qt.q[static_cast<std::size_t>(r * w.cols() + c)] = quantize_weight(w(r, c), scale);
  }
  return qt;
}

Mat<float> dequantize(const QuantTensor& qt) {
  Mat<float> w(qt.rows, qt.cols);
  for (int r = 0; r < qt.rows; ++r)
    for (int c = 0; c < qt.cols; ++c)
      w(r, c) = static_cast<float>(qt.q[static_cast<std::size_t>(r * qt.cols + c)]) * qt.scales[static_cast<std::size_t>(r)];
  return w;
}

QuantModel quantize_model(const Params& p) {
  QuantModel m;
  m.config = p.config;
  m.token_embedding = p.token_embedding;
  m.position_embedding = p.position_embedding;
  for (const auto& L : p.layers) {
    QuantLayer q;
    q.wq = quantize_linear(L.wq);
    q.wk = quantize_linear(L.wk);
    q.wv = quantize_linear(L.wv);
    q.wo = quantize_linear(L.wo);
    q.ln1_gamma = L.ln1_gamma;
    q.ln1_beta = L.ln1_beta;
    q.ln2_gamma = L.ln2_gamma;
    q.ln2_beta = L.ln2_beta;
    q.w1 = quantize_linear(L.w1);
    q.b1 = L.b1;
    q.w2 = quantize_linear(L.w2);
    q.b2 = L.b2;
    m.layers.push_back(std::move(q));
  }
  m.classifier = quantize_linear(p.classifier);
  m.classifier_bias = p.classifier_bias;
  return m;
}

double SizeReport::covered_ratio() const {
  return covered_quant_bytes ? static_cast<double>(covered_f32_bytes) / static_cast<double>(covered_quant_bytes) : 0.0;
}

double SizeReport::file_ratio() const {
  return quant_file_bytes ? static_cast<double>(float_file_bytes) / static_cast<double>(quant_file_bytes) : 0.0;
}

std::string SizeReport::to_json() const {
  nlohmann::ordered_json j;
  j["covered_f32_bytes"] = covered_f32_bytes;
  j["covered_quant_bytes"] = covered_quant_bytes;
  j["covered_ratio"] = covered_ratio();
  j["float_file_bytes"] = float_file_bytes;
  j["quant_file_bytes"] = quant_file_bytes;
  j["file_ratio"] = file_ratio();
  return j.dump(2);
}

SizeReport size_report(const Params& params, const QuantModel& qmodel) {
  SizeReport r;
  visit_quant(qmodel, [&r](const auto& t) {
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(t)>, QuantTensor>) {
      r.covered_f32_bytes += t.q.size() * sizeof(float);
      r.covered_quant_bytes += t.payload_bytes();
    }
  });
  std::ostringstream f, q;
  write_checkpoint(f, params);
  write_quantized(q, qmodel);
  r.float_file_bytes = f.str().size();
  r.quant_file_bytes = q.str().size();
  return r;
}

Mat<float> quantized_linear(const Mat<float>& x, const QuantTensor& w) {
  if (x.cols() != w.cols) throw ShapeError("quantized linear: input width does not match weight");
  Mat<float> y(x.rows(), w.rows);
  std::vector<std::int8_t> qx(static_cast<std::size_t>(x.cols()));
  const int in = w.cols;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float sa = quantize_row(x.row(r).data(), in, qx.data());
    for (int o = 0; o < w.rows; ++o) {
      const std::int8_t* wr = w.q.data() + static_cast<std::size_t>(o) * in;
      std::int32_t acc = 0;
      for (int i = 0; i < in; ++i) acc += static_cast<std::int32_t>(qx[static_cast<std::size_t>(i)]) * wr[i];
      y(r, o) = static_cast<float>(acc) * (sa * w.scales[static_cast<std::size_t>(o)]);
    }
  }
  return y;
}

Mat<float> qforward(const QuantModel& m, std::span<const TokenSeq> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const auto& c = m.config;
  Mat<float> logits(static_cast<Eigen::Index>(batch.size()), c.n_classes);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    if (seq.ids.size() != seq.mask.size() || static_cast<int>(seq.ids.size()) > c.max_len)
      throw ShapeError("sequence shape does not match the quantized model");
    std::vector<int> pos;
    for (std::size_t i = 0; i < seq.mask.size(); ++i)
      if (seq.mask[i]) pos.push_back(static_cast<int>(i));
    if (pos.empty() || pos.front() != 0) throw ShapeError("sequence must start with an unmasked [CLS] token");
    Mat<float> x(static_cast<Eigen::Index>(pos.size()), c.d_model);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto id = seq.ids[static_cast<std::size_t>(pos[i])];
      if (id < 0 || id >= c.vocab_size) throw ShapeError("token id out of range");
      x.row(static_cast<Eigen::Index>(i)) = m.token_embedding.row(id) + m.position_embedding.row(pos[i]);
    }
    for (const auto& L : m.layers) {
      const Mat<float> q = quantized_linear(x, L.wq);
      const Mat<float> k = quantized_linear(x, L.wk);
      const Mat<float> v = quantized_linear(x, L.wv);
      const Mat<float> ctx = ops::attention<float>(q, k, v, c.n_heads, nullptr);
      Mat<float> xhat;
      RowVec<float> is;
      const Mat<float> h1 = ops::layer_norm<float>(x + quantized_linear(ctx, L.wo), L.ln1_gamma, L.ln1_beta, xhat, is);
      Mat<float> z1 = quantized_linear(h1, L.w1);
      z1.rowwise() += L.b1;
      Mat<float> g = quantized_linear(ops::gelu_matrix(z1), L.w2);
      g.rowwise() += L.b2;
      x = ops::layer_norm<float>(h1 + g, L.ln2_gamma, L.ln2_beta, xhat, is);
    }
    const Mat<float> pooled = x.topRows(1);
    logits.row(static_cast<Eigen::Index>(b)) = quantized_linear(pooled, m.classifier).row(0) + m.classifier_bias;
  }
  return logits;
}

std::vector<double> predict(const QuantModel& m, std::span<const TokenSeq> seqs) {
  std::vector<double> out;
  out.reserve(seqs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
    const auto logits = qforward(m, seqs.subspan(i, std::min(kChunk, seqs.size() - i)));
    const auto p = predict_proba(logits);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void write_quantized(std::ostream& out, const QuantModel& m) {
  const auto& c = m.config;
  out.write(kQuantMagic, 4);
  put<std::uint32_t>(out, kQuantVersion);
  for (int v : {c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_len, c.n_classes})
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  put<float>(out, c.dropout);
  std::uint32_t count = 0;
  visit_quant(m, [&count](const auto&) { ++count; });
  put<std::uint32_t>(out, count);
  visit_quant(m, [&out](const auto& t) {
    using TT = std::remove_cvref_t<decltype(t)>;
    if constexpr (std::is_same_v<TT, QuantTensor>) {
      put<std::uint8_t>(out, kKindInt8);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols));
      out.write(reinterpret_cast<const char*>(t.scales.data()), static_cast<std::streamsize>(t.scales.size() * sizeof(float)));
      out.write(reinterpret_cast<const char*>(t.q.data()), static_cast<std::streamsize>(t.q.size()));
    } else {
      put<std::uint8_t>(out, kKindF32);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
  });
  if (!out) throw IoError("quantized checkpoint write failed");
}

void save_quantized(const std::filesystem::path& path, const QuantModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_quantized(out, m);
}

QuantModel read_quantized(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kQuantMagic, 4) != 0) throw DataError("not a quantized checkpoint");
  if (get<std::uint32_t>(in) != kQuantVersion) throw DataError("unsupported quantized checkpoint version");
  ModelConfig c;
  c.n_layers = static_cast<int>(get<std::uint32_t>(in));
  c.d_model = static_cast<int>(get<std::uint32_t>(in));
  c.n_heads = static_cast<int>(get<std::uint32_t>(in));
  c.d_ff = static_cast<int>(get<std::uint32_t>(in));
  c.vocab_size = static_cast<int>(get<std::uint32_t>(in));
  c.max_len = static_cast<int>(get<std::uint32_t>(in));
  c.n_classes = static_cast<int>(get<std::uint32_t>(in));
  c.dropout = get<float>(in);
  // Shapes come from a float template of the same config.
  QuantModel m = quantize_model(Params::zeros(c));
  std::uint32_t expected = 0;
  visit_quant(m, [&expected](const auto&) { ++expected; });
  if (get<std::uint32_t>(in) != expected) throw DataError("quantized checkpoint tensor count mismatch");
  visit_quant(m, [&in](auto& t) {
    using TT = std::remove_cvref_t<decltype(t)>;
    const auto kind = get<std::uint8_t>(in);
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if constexpr (std::is_same_v<TT, QuantTensor>) {
      if (kind != kKindInt8 || rows != static_cast<std::uint32_t>(t.rows) || cols != static_cast<std::uint32_t>(t.cols))
        throw DataError("quantized checkpoint tensor header mismatch");
      if (!in.read(reinterpret_cast<char*>(t.scales.data()), static_cast<std::streamsize>(t.scales.size() * sizeof(float))) ||
          !in.read(reinterpret_cast<char*>(t.q.data()), static_cast<std::streamsize>(t.q.size())))
        throw DataError("truncated quantized tensor");
    } else {
      if (kind != kKindF32 || rows != static_cast<std::uint32_t>(t.rows()) || cols != static_cast<std::uint32_t>(t.cols()))
        throw DataError("quantized checkpoint tensor header mismatch");
      if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
        throw DataError("truncated f32 tensor");
    }
  });
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after quantized tensors");
  return m;
}

QuantModel load_quantized(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_quantized(in);
}

}  // namespace mguard
