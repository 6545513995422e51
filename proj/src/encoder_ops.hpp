#pragma once

// Building blocks shared by the float and int8 forward paths.

#include <cmath>
#include <vector>

#include "mguard/encoder.hpp"

namespace mguard::ops {

inline constexpr double kLayerNormEps = 1e-12;
// tanh-approximation GELU constants: sqrt(2/pi) and the cubic coefficient.
inline constexpr double kGeluScale = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
T gelu(T x) {
  const T inner = T(kGeluScale) * (x + T(kGeluCubic) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T inner = T(kGeluScale) * (x + T(kGeluCubic) * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = T(kGeluScale) * (T(1) + T(3 * kGeluCubic) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

// Row-wise layernorm. Writes the normalized (pre-affine) rows and 1/std.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const RowVec<T>& gamma, const RowVec<T>& beta, Mat<T>& xhat,
                  RowVec<T>& inv_std) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(n, d);
  inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / T(d);
    const T is = T(1) / std::sqrt(var + T(kLayerNormEps));
    inv_std(r) = is;
    xhat.row(r) = centered * is;
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.array()).matrix();
  y.rowwise() += beta;
  return y;
}

template <typename T>
void softmax_rows(Mat<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

// Multi-head scaled dot-product attention over one sequence; returns the
// concatenated head outputs. Head probabilities go to `probs` when non-null.
template <typename T>
Mat<T> attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int n_heads, std::vector<Mat<T>>* probs) {
  const Eigen::Index n = q.rows();
  const Eigen::Index dh = q.cols() / n_heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Mat<T> context(n, q.cols());
  if (probs) probs->resize(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    softmax_rows(s);
    context.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (probs) (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return context;
}

template <typename T>
Mat<T> gelu_matrix(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return gelu(v); });
}

}  // namespace mguard::ops
