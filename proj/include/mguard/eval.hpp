#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace mguard {

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Predicts 1 iff p >= tau (a probability equal to tau counts as positive).
ConfusionMatrix confusion(std::span<const double> probs, std::span<const int> labels, double tau);

double accuracy(const ConfusionMatrix& cm);
// 0 when tp + fp == 0.
double precision(const ConfusionMatrix& cm);
// 0 when tp + fn == 0.
double recall(const ConfusionMatrix& cm);
// 0 when precision + recall == 0.
double f1(const ConfusionMatrix& cm);
// Mean of the class-1 F1 and the class-0 F1 (positive class swapped).
double macro_f1(const ConfusionMatrix& cm);
double macro_f1(std::span<const double> probs, std::span<const int> labels, double tau);

// Mann-Whitney AUROC with midranks for ties, O(n log n). Throws DataError
// unless both classes are present.
double auroc(std::span<const double> probs, std::span<const int> labels);

struct MetricsReport {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, macro_f1 = 0, auroc = 0;
  double tau = 0.5;
  ConfusionMatrix cm;

  std::string to_json() const;
};

MetricsReport evaluate(std::span<const double> probs, std::span<const int> labels, double tau);

}  // namespace mguard
