#include "mguard/eval.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "mguard/error.hpp"

namespace mguard {
namespace {

void check_inputs(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size())
    throw DataError("probability/label length mismatch: " + std::to_string(probs.size()) + " vs " +
                    std::to_string(labels.size()));
  if (probs.empty()) throw DataError("no examples to evaluate");
  for (int y : labels)
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_from(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

ConfusionMatrix confusion(std::span<const double> probs, std::span<const int> labels, double tau) {
  check_inputs(probs, labels);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= tau;
    if (labels[i] == 1) {
      pred ? ++cm.tp : ++cm.fn;
    } else {
      pred ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) { return ratio(cm.tp + cm.tn, cm.total()); }
double precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
double recall(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }
double f1(const ConfusionMatrix& cm) { return f1_from(precision(cm), recall(cm)); }

double macro_f1(const ConfusionMatrix& cm) {
  const ConfusionMatrix swapped{cm.tn, cm.fn, cm.tp, cm.fp};
  return 0.5 * (f1(cm) + f1(swapped));
}

double macro_f1(std::span<const double> probs, std::span<const int> labels, double tau) {
  return macro_f1(confusion(probs, labels, tau));
}

double auroc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels);
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  double pos_rank_sum = 0.0;
  std::uint64_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && probs[order[j + 1]] == probs[order[i]]) ++j;
    // 1-based ranks i+1..j+1 share their mean.
    const double midrank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("AUROC needs both classes present");
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport evaluate(std::span<const double> probs, std::span<const int> labels, double tau) {
  MetricsReport r;
  r.tau = tau;
  r.cm = confusion(probs, labels, tau);
  r.accuracy = accuracy(r.cm);
  r.precision = precision(r.cm);
  r.recall = recall(r.cm);
  r.f1 = f1(r.cm);
  r.macro_f1 = macro_f1(r.cm);
  r.auroc = auroc(probs, labels);
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["macro_f1"] = macro_f1;
  j["auroc"] = auroc;
  j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
  return j.dump(2);
}

}  // namespace mguard
