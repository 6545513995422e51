#include "mguard/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "encoder_ops.hpp"
#include "mguard/error.hpp"

namespace mguard {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_len, "max_len");
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (n_classes != 2) throw ConfigError("model.n_classes must be 2");
  if (max_len < 2) throw ConfigError("model.max_len must be at least 2");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("model.dropout must be in [0, 1)");
}

template <typename T>
BasicParams<T> BasicParams<T>::zeros(const ModelConfig& c) {
  c.validate();
  BasicParams p;
  p.config = c;
  p.token_embedding = Mat<T>::Zero(c.vocab_size, c.d_model);
  p.position_embedding = Mat<T>::Zero(c.max_len, c.d_model);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& L : p.layers) {
    L.wq = L.wk = L.wv = L.wo = Mat<T>::Zero(c.d_model, c.d_model);
    L.ln1_gamma = L.ln1_beta = L.ln2_gamma = L.ln2_beta = RowVec<T>::Zero(c.d_model);
    L.w1 = Mat<T>::Zero(c.d_model, c.d_ff);
    L.b1 = RowVec<T>::Zero(c.d_ff);
    L.w2 = Mat<T>::Zero(c.d_ff, c.d_model);
    L.b2 = RowVec<T>::Zero(c.d_model);
  }
  p.classifier = Mat<T>::Zero(c.d_model, c.n_classes);
  p.classifier_bias = RowVec<T>::Zero(c.n_classes);
  return p;
}

template <typename T>
BasicParams<T> BasicParams<T>::initialized(const ModelConfig& c, Rng& rng) {
  BasicParams p = zeros(c);
  auto fill = [&rng](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.truncated_normal(0.02));
  };
  fill(p.token_embedding);
  fill(p.position_embedding);
  for (auto& L : p.layers) {
    fill(L.wq);
    fill(L.wk);
    fill(L.wv);
    fill(L.wo);
    fill(L.w1);
    fill(L.w2);
    L.ln1_gamma.setOnes();
    L.ln2_gamma.setOnes();
  }
  fill(p.classifier);
  return p;
}

template <typename T>
std::size_t BasicParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <typename T>
bool BasicParams<T>::all_finite() const {
  bool ok = true;
  for_each([&ok](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

template <typename T>
void BasicParams<T>::set_zero() {
  for_each([](const std::string&, auto& t) { t.setZero(); });
}

template <typename T>
template <typename U>
BasicParams<U> BasicParams<T>::cast() const {
  BasicParams<U> out = BasicParams<U>::zeros(config);
  std::vector<const T*> src;
  for_each([&src](const std::string&, const auto& t) { src.push_back(t.data()); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, auto& t) {
    const T* s = src[i++];
    for (Eigen::Index j = 0; j < t.size(); ++j) t.data()[j] = static_cast<U>(s[j]);
  });
  return out;
}

template struct BasicParams<float>;
template struct BasicParams<double>;
template BasicParams<double> BasicParams<float>::cast<double>() const;
template BasicParams<float> BasicParams<double>::cast<float>() const;
template BasicParams<float> BasicParams<float>::cast<float>() const;

namespace {

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<T> m(rows, cols);
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? T(0) : keep_scale;
  return m;
}

// d(layernorm input) from d(output); accumulates gamma/beta gradients.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const RowVec<T>& inv_std, const RowVec<T>& gamma,
                           RowVec<T>& dgamma, RowVec<T>& dbeta) {
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat<T> dxhat = (dy.array().rowwise() * gamma.array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  const T d = T(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_dxhat = dxhat.row(r).sum() / d;
    const T mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat).matrix() * inv_std(r);
  }
  return dx;
}

template <typename T>
RowVec<T> encode_one(const BasicParams<T>& params, Mat<T> x, const ForwardOptions& opts, ExampleCache<T>* cache) {
  const auto& c = params.config;
  const bool dropout = opts.train_mode && c.dropout > 0.0f;
  if (dropout && !opts.rng) throw StateError("train-mode forward with dropout needs an RNG");
  if (dropout) {
    Mat<T> m = dropout_mask<T>(x.rows(), x.cols(), c.dropout, *opts.rng);
    x.array() *= m.array();
    if (cache) cache->embedding_drop = std::move(m);
  }
  if (cache) cache->layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;
    Mat<T> q = x * L.wq;
    Mat<T> k = x * L.wk;
    Mat<T> v = x * L.wv;
    Mat<T> ctx = ops::attention(q, k, v, c.n_heads, lc ? &lc->attention : nullptr);
    Mat<T> a = ctx * L.wo;
    if (dropout) {
      Mat<T> m = dropout_mask<T>(a.rows(), a.cols(), c.dropout, *opts.rng);
      a.array() *= m.array();
      if (lc) lc->attn_drop = std::move(m);
    }
    Mat<T> xhat1;
    RowVec<T> is1;
    Mat<T> h1 = ops::layer_norm<T>(x + a, L.ln1_gamma, L.ln1_beta, xhat1, is1);
    Mat<T> z1 = h1 * L.w1;
    z1.rowwise() += L.b1;
    Mat<T> f = ops::gelu_matrix(z1);
    Mat<T> g = f * L.w2;
    g.rowwise() += L.b2;
    if (dropout) {
      Mat<T> m = dropout_mask<T>(g.rows(), g.cols(), c.dropout, *opts.rng);
      g.array() *= m.array();
      if (lc) lc->ff_drop = std::move(m);
    }
    Mat<T> xhat2;
    RowVec<T> is2;
    Mat<T> y = ops::layer_norm<T>(h1 + g, L.ln2_gamma, L.ln2_beta, xhat2, is2);
    if (lc) {
      lc->input = std::move(x);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->context = std::move(ctx);
      lc->xhat1 = std::move(xhat1);
      lc->inv_std1 = std::move(is1);
      lc->h1 = h1;
      lc->pre_gelu = std::move(z1);
      lc->ff_hidden = std::move(f);
      lc->xhat2 = std::move(xhat2);
      lc->inv_std2 = std::move(is2);
    }
    x = std::move(y);
  }
  RowVec<T> pooled = x.row(0);
  if (cache) cache->pooled = pooled;
  return pooled;
}

std::vector<int> valid_positions(const TokenSeq& seq, int max_len) {
  if (seq.ids.size() != seq.mask.size()) throw ShapeError("token ids and attention mask differ in length");
  if (static_cast<int>(seq.ids.size()) > max_len)
    throw ShapeError("sequence length " + std::to_string(seq.ids.size()) + " exceeds model max_len " +
                     std::to_string(max_len));
  std::vector<int> pos;
  for (std::size_t i = 0; i < seq.mask.size(); ++i)
    if (seq.mask[i]) pos.push_back(static_cast<int>(i));
  if (pos.empty() || pos.front() != 0) throw ShapeError("sequence must start with an unmasked [CLS] token");
  return pos;
}

}  // namespace

template <typename T>
Mat<T> embed(const BasicParams<T>& params, const TokenSeq& seq) {
  const auto pos = valid_positions(seq, params.config.max_len);
  Mat<T> e(static_cast<Eigen::Index>(pos.size()), params.config.d_model);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const auto id = seq.ids[static_cast<std::size_t>(pos[i])];
    if (id < 0 || id >= params.config.vocab_size) throw ShapeError("token id " + std::to_string(id) + " out of range");
    e.row(static_cast<Eigen::Index>(i)) = params.token_embedding.row(id) + params.position_embedding.row(pos[i]);
  }
  return e;
}

template <typename T>
ForwardPass<T> forward_from_embeddings(const BasicParams<T>& params, std::span<const TokenSeq> batch,
                                       std::span<const Mat<T>> embeddings, const ForwardOptions& opts) {
  if (batch.empty()) throw ShapeError("empty batch");
  if (embeddings.size() != batch.size()) throw ShapeError("embedding count does not match batch size");
  ForwardPass<T> pass;
  pass.logits.resize(static_cast<Eigen::Index>(batch.size()), params.config.n_classes);
  if (opts.keep_cache) pass.caches.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& e = embeddings[b];
    if (e.cols() != params.config.d_model || e.rows() < 1) throw ShapeError("embedding matrix has the wrong shape");
    ExampleCache<T>* cache = opts.keep_cache ? &pass.caches[b] : nullptr;
    if (cache) {
      cache->positions = valid_positions(batch[b], params.config.max_len);
      if (static_cast<Eigen::Index>(cache->positions.size()) != e.rows())
        throw ShapeError("embedding rows do not match unmasked positions");
      for (int p : cache->positions) cache->ids.push_back(batch[b].ids[static_cast<std::size_t>(p)]);
    }
    const RowVec<T> pooled = encode_one(params, e, opts, cache);
    pass.logits.row(static_cast<Eigen::Index>(b)) = pooled * params.classifier + params.classifier_bias;
  }
  return pass;
}

template <typename T>
ForwardPass<T> forward(const BasicParams<T>& params, std::span<const TokenSeq> batch, const ForwardOptions& opts) {
  std::vector<Mat<T>> emb;
  emb.reserve(batch.size());
  for (const auto& seq : batch) emb.push_back(embed(params, seq));
  return forward_from_embeddings<T>(params, batch, emb, opts);
}

template <typename T>
void backward(const BasicParams<T>& params, const ForwardPass<T>& pass, const Mat<T>& logit_grads,
              BasicParams<T>& grads, std::vector<Mat<T>>* embedding_grads) {
  if (pass.caches.empty()) throw StateError("backward called without a cached forward pass");
  if (logit_grads.rows() != static_cast<Eigen::Index>(pass.caches.size()) ||
      logit_grads.cols() != params.config.n_classes)
    throw ShapeError("logit gradient shape does not match the forward batch");
  const auto& c = params.config;
  const int dh = c.head_dim();
  const T scale = T(1) / std::sqrt(T(dh));
  if (embedding_grads) embedding_grads->assign(pass.caches.size(), Mat<T>());

  for (std::size_t b = 0; b < pass.caches.size(); ++b) {
    const auto& cache = pass.caches[b];
    const RowVec<T> dlogit = logit_grads.row(static_cast<Eigen::Index>(b));
    grads.classifier.noalias() += cache.pooled.transpose() * dlogit;
    grads.classifier_bias += dlogit;

    const Eigen::Index n = static_cast<Eigen::Index>(cache.positions.size());
    Mat<T> dx = Mat<T>::Zero(n, c.d_model);
    dx.row(0) = dlogit * params.classifier.transpose();

    for (std::size_t l = params.layers.size(); l-- > 0;) {
      const auto& L = params.layers[l];
      auto& G = grads.layers[l];
      const auto& lc = cache.layers[l];

      // y = LN2(h1 + g)
      Mat<T> dr2 = layer_norm_backward(dx, lc.xhat2, lc.inv_std2, L.ln2_gamma, G.ln2_gamma, G.ln2_beta);
      Mat<T> dg = dr2;
      if (lc.ff_drop.size()) dg.array() *= lc.ff_drop.array();
      G.w2.noalias() += lc.ff_hidden.transpose() * dg;
      G.b2 += dg.colwise().sum();
      Mat<T> dz1 = dg * L.w2.transpose();
      dz1.array() *= lc.pre_gelu.unaryExpr([](T v) { return ops::gelu_grad(v); }).array();
      G.w1.noalias() += lc.h1.transpose() * dz1;
      G.b1 += dz1.colwise().sum();
      Mat<T> dh1 = dr2;
      dh1.noalias() += dz1 * L.w1.transpose();

      // h1 = LN1(x + a)
      Mat<T> dr1 = layer_norm_backward(dh1, lc.xhat1, lc.inv_std1, L.ln1_gamma, G.ln1_gamma, G.ln1_beta);
      Mat<T> da = dr1;
      if (lc.attn_drop.size()) da.array() *= lc.attn_drop.array();
      G.wo.noalias() += lc.context.transpose() * da;
      const Mat<T> dctx = da * L.wo.transpose();

      Mat<T> dq(n, c.d_model), dk(n, c.d_model), dv(n, c.d_model);
      for (int h = 0; h < c.n_heads; ++h) {
        const auto& p = lc.attention[static_cast<std::size_t>(h)];
        const Mat<T> dctx_h = dctx.middleCols(h * dh, dh);
        const Mat<T> dp = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx_h;
        Mat<T> ds = p.cwiseProduct(dp);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
        ds -= (p.array().colwise() * rowdot.array()).matrix();
        ds *= scale;
        dq.middleCols(h * dh, dh).noalias() = ds * lc.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() = ds.transpose() * lc.q.middleCols(h * dh, dh);
      }
      G.wq.noalias() += lc.input.transpose() * dq;
      G.wk.noalias() += lc.input.transpose() * dk;
      G.wv.noalias() += lc.input.transpose() * dv;
      dx = dr1;
      dx.noalias() += dq * L.wq.transpose();
      dx.noalias() += dk * L.wk.transpose();
      dx.noalias() += dv * L.wv.transpose();
    }

    if (cache.embedding_drop.size()) dx.array() *= cache.embedding_drop.array();
    for (Eigen::Index i = 0; i < n; ++i) {
      grads.token_embedding.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
      grads.position_embedding.row(cache.positions[static_cast<std::size_t>(i)]) += dx.row(i);
    }
    if (embedding_grads) (*embedding_grads)[b] = std::move(dx);
  }
}

template Mat<float> embed(const BasicParams<float>&, const TokenSeq&);
template Mat<double> embed(const BasicParams<double>&, const TokenSeq&);
template ForwardPass<float> forward(const BasicParams<float>&, std::span<const TokenSeq>, const ForwardOptions&);
template ForwardPass<double> forward(const BasicParams<double>&, std::span<const TokenSeq>, const ForwardOptions&);
template ForwardPass<float> forward_from_embeddings(const BasicParams<float>&, std::span<const TokenSeq>,
                                                    std::span<const Mat<float>>, const ForwardOptions&);
template ForwardPass<double> forward_from_embeddings(const BasicParams<double>&, std::span<const TokenSeq>,
                                                     std::span<const Mat<double>>, const ForwardOptions&);
template void backward(const BasicParams<float>&, const ForwardPass<float>&, const Mat<float>&, BasicParams<float>&,
                       std::vector<Mat<float>>*);
template void backward(const BasicParams<double>&, const ForwardPass<double>&, const Mat<double>&,
                       BasicParams<double>&, std::vector<Mat<double>>*);

double predict_proba(double logit0, double logit1) {
  const double m = std::max(logit0, logit1);
  const double e0 = std::exp(logit0 - m);
  const double e1 = std::exp(logit1 - m);
  return e1 / (e0 + e1);
}

std::vector<double> predict_proba(const Mat<float>& logits) {
  std::vector<double> p(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) p[static_cast<std::size_t>(r)] = predict_proba(logits(r, 0), logits(r, 1));
  return p;
}

std::vector<double> predict(const Params& params, std::span<const TokenSeq> seqs) {
  std::vector<double> out;
  out.reserve(seqs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
    const auto chunk = seqs.subspan(i, std::min(kChunk, seqs.size() - i));
    const auto pass = forward<float>(params, chunk, {});
    const auto p = predict_proba(pass.logits);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw DataError("truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Params& params) {
  const auto& c = params.config;
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_len, c.n_classes})
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  put<float>(out, c.dropout);
  params.for_each([&out](const std::string&, const auto& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!out) throw IoError("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(out, params);
}

Params read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("not a float checkpoint");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  ModelConfig c;
  c.n_layers = static_cast<int>(get<std::uint32_t>(in));
  c.d_model = static_cast<int>(get<std::uint32_t>(in));
  c.n_heads = static_cast<int>(get<std::uint32_t>(in));
  c.d_ff = static_cast<int>(get<std::uint32_t>(in));
  c.vocab_size = static_cast<int>(get<std::uint32_t>(in));
  c.max_len = static_cast<int>(get<std::uint32_t>(in));
  c.n_classes = static_cast<int>(get<std::uint32_t>(in));
  c.dropout = get<float>(in);
  Params p = Params::zeros(c);
  p.for_each([&in](const std::string& name, auto& t) {
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw DataError("truncated checkpoint at tensor " + name);
  });
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint tensors");
  return p;
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace mguard
