#pragma once

// Central finite-difference check of encoder gradients, shared by the unit
// and acceptance tests. Runs the double instantiation of the encoder.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mguard/encoder.hpp"
#include "mguard/train.hpp"

namespace gradcheck {

struct Result {
  std::size_t coords = 0;
  std::size_t failures = 0;
  double max_rel = 0.0;
  std::map<std::string, std::size_t> per_tensor;  // coordinates checked per tensor
  std::string worst;
};

struct Options {
  std::size_t batch = 4;
  std::size_t coords_per_tensor = 8;
  // 1e-5 lets round-off dominate for gradients near 1e-7 on the d128 model.
  double step = 1e-4;
  double tolerance = 1e-3;
  double floor = 1e-9;  // both below: counted as agreeing
  std::uint64_t seed = 1234;
};

inline Result run(const mguard::ModelConfig& config, const Options& opt = {}) {
  using namespace mguard;
  Rng rng(opt.seed);
  auto params = BasicParams<double>::initialized(config, rng);
  // Move layernorm gains and biases off their 1/0 init so their gradients are generic.
  params.for_each([&rng](const std::string&, auto& t) {
    if (t.rows() == 1)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.1 * rng.normal();
  });

  std::vector<TokenSeq> batch;
  std::vector<int> labels;
  std::vector<std::int32_t> used_ids;
  for (std::size_t b = 0; b < opt.batch; ++b) {
    TokenSeq s;
    const std::size_t len = 3 + rng.below(static_cast<std::uint64_t>(std::min(config.max_len, 12) - 2));
    for (int i = 0; i < config.max_len; ++i) {
      const bool on = static_cast<std::size_t>(i) < len;
      const auto id = on ? static_cast<std::int32_t>(i == 0 ? 2 : 4 + rng.below(static_cast<std::uint64_t>(config.vocab_size - 4))) : 0;
      s.ids.push_back(id);
      s.mask.push_back(on ? 1 : 0);
      if (on) used_ids.push_back(id);
    }
    batch.push_back(std::move(s));
    labels.push_back(static_cast<int>(b % 2));
  }
  std::sort(used_ids.begin(), used_ids.end());
  used_ids.erase(std::unique(used_ids.begin(), used_ids.end()), used_ids.end());

  LossSpec loss;
  loss.kind = LossKind::kFocal;
  auto objective = [&](const BasicParams<double>& p) {
    const auto pass = forward<double>(p, batch, ForwardOptions{});
    return batch_loss<double>(pass.logits, labels, loss).sum;
  };

  ForwardOptions fo;
  fo.keep_cache = true;
  const auto pass = forward<double>(params, batch, fo);
  const auto bl = batch_loss<double>(pass.logits, labels, loss);
  auto grads = BasicParams<double>::zeros(config);
  backward<double>(params, pass, bl.logit_grads, grads);

  std::map<std::string, double*> grad_ptr;
  grads.for_each([&](const std::string& name, auto& t) { grad_ptr[name] = t.data(); });

  Result r;
  params.for_each([&](const std::string& name, auto& t) {
    const Eigen::Index cols = t.cols();
    for (std::size_t k = 0; k < opt.coords_per_tensor; ++k) {
      Eigen::Index idx;
      if (name == "token_embedding") {
        idx = used_ids[rng.below(used_ids.size())] * cols + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(cols)));
      } else if (name == "position_embedding") {
        idx = static_cast<Eigen::Index>(rng.below(3)) * cols + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(cols)));
      } else {
        idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(t.size())));
      }
      double& w = t.data()[idx];
      const double saved = w;
      w = saved + opt.step;
      const double up = objective(params);
      w = saved - opt.step;
      const double down = objective(params);
      w = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = grad_ptr[name][idx];
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = scale < opt.floor ? 0.0 : std::abs(analytic - numeric) / scale;
      ++r.coords;
      ++r.per_tensor[name];
      if (rel > r.max_rel) {
        r.max_rel = rel;
        char buf[96];
        std::snprintf(buf, sizeof buf, "] analytic %.6e numeric %.6e", analytic, numeric);
        r.worst = name + "[" + std::to_string(idx) + buf;
      }
      if (rel > opt.tolerance) ++r.failures;
    }
  });
  return r;
}

}  // namespace gradcheck
