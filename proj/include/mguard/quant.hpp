#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mguard/encoder.hpp"

namespace mguard {

// Symmetric per-row int8 tensor; zero point is always 0.
struct QuantTensor {
  int rows = 0;
  int cols = 0;
  std::vector<std::int8_t> q;  // row-major
  std::vector<float> scales;   // one per row

  std::size_t payload_bytes() const { return q.size() + scales.size() * sizeof(float); }
  friend bool operator==(const QuantTensor&, const QuantTensor&) = default;
};

// scale_r = max|w_r| / 127 (1 for an all-zero row); q = round-half-away(w / scale)
// clamped to [-127, 127]. Throws DataError on non-finite input.
QuantTensor quantize_tensor(const Mat<float>& w);
Mat<float> dequantize(const QuantTensor& qt);

// Quantized linear weights are stored transposed (out x in) so that each
// row is one output channel.
struct QuantLayer {
  QuantTensor wq, wk, wv, wo;
  RowVec<float> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  QuantTensor w1;
  RowVec<float> b1;
  QuantTensor w2;
  RowVec<float> b2;
};

struct SizeReport {
  std::size_t covered_f32_bytes = 0;    // linear weights as f32
  std::size_t covered_quant_bytes = 0;  // int8 payload + f32 row scales
  std::size_t float_file_bytes = 0;
  std::size_t quant_file_bytes = 0;

  double covered_ratio() const;
  double file_ratio() const;
  std::string to_json() const;
};

struct QuantModel {
  ModelConfig config;
  Mat<float> token_embedding;
  Mat<float> position_embedding;
  std::vector<QuantLayer> layers;
  QuantTensor classifier;
  RowVec<float> classifier_bias;
};

// Attention projections, feed-forward and classifier weights go to int8;
// embeddings, layernorm parameters and biases stay f32.
QuantModel quantize_model(const Params& params);
SizeReport size_report(const Params& params, const QuantModel& qmodel);

// y = x * W with x quantized per row on the fly and int32 accumulation.
Mat<float> quantized_linear(const Mat<float>& x, const QuantTensor& w);

// Eval-mode forward through the int8 path; same contract as forward().
Mat<float> qforward(const QuantModel& qmodel, std::span<const TokenSeq> batch);
std::vector<double> predict(const QuantModel& qmodel, std::span<const TokenSeq> seqs);

// "MGQ8" | u32 version | model config as in the float checkpoint |
// u32 tensor count | per tensor: u8 kind (0 = f32, 1 = int8 per-row),
// u32 rows, u32 cols, then f32 payload, or f32 scales[rows] + int8 payload.
void write_quantized(std::ostream& out, const QuantModel& qmodel);
void save_quantized(const std::filesystem::path& path, const QuantModel& qmodel);
QuantModel read_quantized(std::istream& in);
QuantModel load_quantized(const std::filesystem::path& path);

}  // namespace mguard
