#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mguard/rng.hpp"
#include "mguard/tokenizer.hpp"

namespace mguard {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 2;
  int d_ff = 256;
  int vocab_size = 2000;
  int max_len = 64;
  int n_classes = 2;
  float dropout = 0.1f;

  // Throws ConfigError naming the offending field.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Linear weights are stored (in x out) and applied as x * W.
template <typename T>
struct LayerParams {
  Mat<T> wq, wk, wv, wo;
  RowVec<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Mat<T> w1;
  RowVec<T> b1;
  Mat<T> w2;
  RowVec<T> b2;
};

template <typename T>
struct BasicParams {
  ModelConfig config;
  Mat<T> token_embedding;     // vocab_size x d_model
  Mat<T> position_embedding;  // max_len x d_model
  std::vector<LayerParams<T>> layers;
  Mat<T> classifier;  // d_model x n_classes
  RowVec<T> classifier_bias;

  // Shapes from config, all zeros (layernorm gains included).
  static BasicParams zeros(const ModelConfig& config);
  // Truncated-normal(0.02) matrices, zero biases, unit layernorm gains.
  static BasicParams initialized(const ModelConfig& config, Rng& rng);

  // Visits every tensor in declaration order as fn(name, Eigen matrix-or-vector&).
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("position_embedding"), self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      fn(p + "wq", L.wq);
      fn(p + "wk", L.wk);
      fn(p + "wv", L.wv);
      fn(p + "wo", L.wo);
      fn(p + "ln1_gamma", L.ln1_gamma);
      fn(p + "ln1_beta", L.ln1_beta);
      fn(p + "ln2_gamma", L.ln2_gamma);
      fn(p + "ln2_beta", L.ln2_beta);
      fn(p + "w1", L.w1);
      fn(p + "b1", L.b1);
      fn(p + "w2", L.w2);
      fn(p + "b2", L.b2);
    }
    fn(std::string("classifier"), self.classifier);
    fn(std::string("classifier_bias"), self.classifier_bias);
  }
  template <typename Fn>
  void for_each(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }
  template <typename Fn>
  void for_each(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }

  std::size_t parameter_count() const;
  bool all_finite() const;
  void set_zero();

  template <typename U>
  BasicParams<U> cast() const;
};

using Params = BasicParams<float>;

// Per-example activations kept for the backward pass.
template <typename T>
struct LayerCache {
  Mat<T> input, q, k, v;
  std::vector<Mat<T>> attention;  // per head, rows sum to 1
  Mat<T> context;
  Mat<T> attn_drop;  // dropout scale mask (empty when dropout is off)
  Mat<T> xhat1;
  RowVec<T> inv_std1;
  Mat<T> h1, pre_gelu, ff_hidden;
  Mat<T> ff_drop;
  Mat<T> xhat2;
  RowVec<T> inv_std2;
};

template <typename T>
struct ExampleCache {
  std::vector<std::int32_t> ids;
  std::vector<int> positions;
  Mat<T> embedding_drop;
  std::vector<LayerCache<T>> layers;
  RowVec<T> pooled;
};

template <typename T>
struct ForwardPass {
  Mat<T> logits;  // batch x n_classes
  std::vector<ExampleCache<T>> caches;  // empty unless requested
};

struct ForwardOptions {
  bool train_mode = false;
  bool keep_cache = false;
  Rng* rng = nullptr;  // required when train_mode and dropout > 0
};

// token + position embedding of the unmasked positions (n_valid x d_model).
template <typename T>
Mat<T> embed(const BasicParams<T>& params, const TokenSeq& seq);

// Masked positions are dropped from the sequence before attention, which is
// the same as giving them zero attention weight; the [CLS] output does not
// depend on pad contents.
template <typename T>
ForwardPass<T> forward(const BasicParams<T>& params, std::span<const TokenSeq> batch, const ForwardOptions& opts);

// Forward from precomputed embedding outputs (one matrix per example, as from embed()).
template <typename T>
ForwardPass<T> forward_from_embeddings(const BasicParams<T>& params, std::span<const TokenSeq> batch,
                                       std::span<const Mat<T>> embeddings, const ForwardOptions& opts);

// Accumulates dLoss/dParams into `grads` (+=) given dLoss/dLogits. When
// `embedding_grads` is non-null it receives dLoss/d(embedding outputs) per example.
template <typename T>
void backward(const BasicParams<T>& params, const ForwardPass<T>& pass, const Mat<T>& logit_grads,
              BasicParams<T>& grads, std::vector<Mat<T>>* embedding_grads = nullptr);

// Numerically stable softmax probability of class 1.
double predict_proba(double logit0, double logit1);
std::vector<double> predict_proba(const Mat<float>& logits);

// Eval-mode class-1 probabilities, processed in chunks.
std::vector<double> predict(const Params& params, std::span<const TokenSeq> seqs);

// Checkpoint: "MGCK" | u32 version | u32 n_layers, d_model, n_heads, d_ff,
// vocab_size, max_len, n_classes | f32 dropout | tensors in declaration
// order, row-major little-endian f32.
void write_checkpoint(std::ostream& out, const Params& params);
void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params read_checkpoint(std::istream& in);
Params load_checkpoint(const std::filesystem::path& path);

extern template struct BasicParams<float>;
extern template struct BasicParams<double>;

}  // namespace mguard
