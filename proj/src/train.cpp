#include "mguard/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mguard/error.hpp"
#include "mguard/eval.hpp"

namespace mguard {
namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

double stable_sigmoid(double d) {
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

struct FlatTensor {
  std::string name;
  float* data;
  std::size_t size;
};

std::vector<FlatTensor> flatten(Params& p) {
  std::vector<FlatTensor> out;
  p.for_each([&out](const std::string& name, auto& t) {
    out.push_back({name, t.data(), static_cast<std::size_t>(t.size())});
  });
  return out;
}

std::vector<FlatTensor> flatten(const Params& p) { return flatten(const_cast<Params&>(p)); }

}  // namespace

double focal_loss(double p, int y, double alpha, double gamma) {
  const double pt = clamp_prob(y == 1 ? p : 1.0 - p);
  return -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
}

double weighted_bce(double p, int y, double w0, double w1) {
  const double pt = clamp_prob(y == 1 ? p : 1.0 - p);
  return -(y == 1 ? w1 : w0) * std::log(pt);
}

template <typename T>
BatchLoss<T> batch_loss(const Mat<T>& logits, std::span<const int> labels, const LossSpec& spec) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.cols() != 2)
    throw ShapeError("logits/labels shape mismatch in loss");
  BatchLoss<T> out;
  out.logit_grads.resize(logits.rows(), 2);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double d = static_cast<double>(logits(i, 1)) - static_cast<double>(logits(i, 0));
    const double p = stable_sigmoid(d);
    const double sign = y == 1 ? 1.0 : -1.0;
    const double pt = clamp_prob(y == 1 ? p : 1.0 - p);
    double loss = 0.0;
    double dd = 0.0;  // dLoss / d(z1 - z0)
    if (spec.kind == LossKind::kFocal) {
      const double q = 1.0 - pt;
      const double qg = std::pow(q, spec.gamma);
      loss = -spec.alpha * qg * std::log(pt);
      // d/dp_t of the loss times dp_t/dd = p_t (1 - p_t).
      dd = sign * spec.alpha * (spec.gamma * qg * pt * std::log(pt) - qg * q);
    } else {
      const double w = spec.class_weights[static_cast<std::size_t>(y)];
      loss = -w * std::log(pt);
      dd = -sign * w * (1.0 - pt);
    }
    out.sum += loss;
    out.logit_grads(i, 0) = static_cast<T>(-dd);
    out.logit_grads(i, 1) = static_cast<T>(dd);
  }
  return out;
}

template BatchLoss<float> batch_loss(const Mat<float>&, std::span<const int>, const LossSpec&);
template BatchLoss<double> batch_loss(const Mat<double>&, std::span<const int>, const LossSpec&);

std::array<double, 2> inverse_frequency_weights(std::span<const int> labels) {
  if (labels.empty()) throw DataError("cannot derive class weights from an empty split");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto n = static_cast<double>(labels.size());
  const double f1 = pos / n;
  const double f0 = 1.0 - f1;
  if (f1 == 0.0 || f0 == 0.0) throw DataError("class weights need both classes present");
  return {1.0 / (2.0 * f0), 1.0 / (2.0 * f1)};
}

template <typename T>
std::vector<Mat<T>> fgm_perturbation(std::span<const Mat<T>> embedding_grads, double epsilon) {
  std::vector<Mat<T>> out;
  out.reserve(embedding_grads.size());
  for (const auto& g : embedding_grads) {
    const double norm = static_cast<double>(g.norm());
    out.push_back(g * static_cast<T>(epsilon / (norm + 1e-12)));
  }
  return out;
}

template std::vector<Mat<float>> fgm_perturbation(std::span<const Mat<float>>, double);
template std::vector<Mat<double>> fgm_perturbation(std::span<const Mat<double>>, double);

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  std::int64_t t, double lr, const AdamWConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double theta = param[i];
    param[i] = static_cast<float>(theta - lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * theta));
  }
}

OptState OptState::fresh(const ModelConfig& config) {
  return OptState{Params::zeros(config), Params::zeros(config), 0, 0};
}

bool is_frozen(const std::string& name, int freeze_lowest_layers) {
  if (freeze_lowest_layers <= 0) return false;
  if (name == "token_embedding" || name == "position_embedding") return true;
  if (name.rfind("layer", 0) == 0) {
    const int layer = std::stoi(name.substr(5, name.find('.') - 5));
    return layer < freeze_lowest_layers;
  }
  return false;
}

void zero_frozen_grads(Params& grads, int freeze_lowest_layers) {
  grads.for_each([&](const std::string& name, auto& t) {
    if (is_frozen(name, freeze_lowest_layers)) t.setZero();
  });
}

bool adamw_step(Params& params, const Params& grads, OptState& state, double lr, const AdamWConfig& config,
                int freeze_lowest_layers) {
  auto p = flatten(params);
  const auto g = flatten(grads);
  auto m = flatten(state.m);
  auto v = flatten(state.v);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (is_frozen(p[k].name, freeze_lowest_layers)) continue;
    if (!std::all_of(g[k].data, g[k].data + g[k].size, [](float x) { return std::isfinite(x); })) {
      ++state.skipped_steps;
      return false;
    }
  }
  ++state.t;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (is_frozen(p[k].name, freeze_lowest_layers)) continue;
    adamw_update({p[k].data, p[k].size}, {g[k].data, g[k].size}, {m[k].data, m[k].size}, {v[k].data, v[k].size},
                 state.t, lr, config);
  }
  return true;
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_frac) {
  if (step < 0 || step > total_steps) throw ConfigError("lr_schedule step out of range");
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (warmup <= 0 || step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
}

MicroBatchResult accumulate_gradients(const Params& params, std::span<const TokenSeq> batch,
                                      std::span<const int> labels, const StepOptions& opts, Params& grads) {
  ForwardOptions fo;
  fo.train_mode = opts.train_mode;
  fo.keep_cache = true;
  fo.rng = opts.rng;
  MicroBatchResult result;
  const auto pass = forward<float>(params, batch, fo);
  const auto clean = batch_loss(pass.logits, labels, opts.loss);
  result.clean_loss_sum = clean.sum;
  std::vector<Mat<float>> emb_grads;
  backward<float>(params, pass, clean.logit_grads, grads, opts.fgm ? &emb_grads : nullptr);
  if (!opts.fgm) return result;

  const auto r = fgm_perturbation<float>(emb_grads, opts.fgm_epsilon);
  std::vector<Mat<float>> perturbed;
  perturbed.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) perturbed.push_back(embed(params, batch[i]) + r[i]);
  const auto adv_pass = forward_from_embeddings<float>(params, batch, perturbed, fo);
  const auto adv = batch_loss(adv_pass.logits, labels, opts.loss);
  result.adversarial_loss_sum = adv.sum;
  backward<float>(params, adv_pass, adv.logit_grads, grads);
  return result;
}

CurriculumPlan CurriculumPlan::three_stage(int stage0_epochs, int stage2_epochs) {
  CurriculumPlan plan;
  plan.stages.push_back({"Stage0", Split::kStage0, stage0_epochs, LossKind::kWeightedBce, false, 1, true, std::nullopt});
  plan.stages.push_back({"Stage1", Split::kStage1, 1, LossKind::kWeightedBce, false, 0, false, std::nullopt});
  plan.stages.push_back({"Stage2", Split::kStage2, stage2_epochs, LossKind::kFocal, true, 0, false, std::nullopt});
  return plan;
}

void CurriculumPlan::validate(const ModelConfig& model) const {
  if (stages.empty()) throw ConfigError("train.stages must not be empty");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (warmup_frac < 0.0 || warmup_frac > 1.0) throw ConfigError("train.warmup_frac must be in [0, 1]");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (accumulation_steps < 1) throw ConfigError("train.accumulation_steps must be at least 1");
  if (patience < 1) throw ConfigError("train.patience must be at least 1");
  if (!(fgm_epsilon >= 0.0)) throw ConfigError("train.fgm_epsilon must be non-negative");
  for (const auto& s : stages) {
    if (s.epochs < 1) throw ConfigError("train.stages[" + s.name + "].epochs must be at least 1");
    if (s.freeze_lowest_layers < 0 || s.freeze_lowest_layers > model.n_layers)
      throw ConfigError("train.stages[" + s.name + "].freeze_lowest_layers must be in [0, n_layers]");
    if (s.class_weights && ((*s.class_weights)[0] <= 0 || (*s.class_weights)[1] <= 0))
      throw ConfigError("train.stages[" + s.name + "].class_weights must be positive");
  }
}

std::string TrainHistory::to_jsonl() const {
  std::string out;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["stage"] = e.stage;
    j["stage_epoch"] = e.stage_epoch;
    j["train_loss"] = std::isfinite(e.train_loss) ? nlohmann::ordered_json(e.train_loss) : nlohmann::ordered_json();
    j["dev_macro_f1"] = e.dev_macro_f1;
    j["dev_accuracy"] = e.dev_accuracy;
    j["dev_auroc"] = e.dev_auroc;
    j["steps"] = e.steps;
    j["skipped_steps"] = e.skipped_steps;
    j["best"] = static_cast<int>(i) == best_epoch;
    j["seed"] = seed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

struct DevScores {
  double macro_f1 = 0, accuracy = 0, auroc = 0;
};

DevScores score_dev(const Params& params, const TrainData& dev) {
  const auto probs = predict(params, dev.seqs);
  const auto cm = confusion(probs, dev.labels, 0.5);
  DevScores s;
  s.macro_f1 = macro_f1(cm);
  s.accuracy = accuracy(cm);
  const auto pos = std::count(dev.labels.begin(), dev.labels.end(), 1);
  s.auroc = pos > 0 && pos < static_cast<long>(dev.labels.size()) ? auroc(probs, dev.labels) : 0.5;
  return s;
}

std::vector<std::size_t> balanced_indices(const std::vector<int>& labels, Rng& rng) {
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < labels.size(); ++i) cls[labels[i]].push_back(i);
  if (cls[0].empty() || cls[1].empty()) throw DataError("balanced stage needs both classes");
  auto& major = cls[0].size() > cls[1].size() ? cls[0] : cls[1];
  const auto& minor = cls[0].size() > cls[1].size() ? cls[1] : cls[0];
  rng.shuffle(std::span(major));
  major.resize(minor.size());
  std::vector<std::size_t> out(cls[0]);
  out.insert(out.end(), cls[1].begin(), cls[1].end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TrainResult run_curriculum(const CurriculumPlan& plan, const std::map<Split, TrainData>& stage_data,
                           const TrainData& dev, Params init, const EpochCallback& on_epoch) {
  plan.validate(init.config);
  if (dev.seqs.empty()) throw DataError("Dev split is empty");
  Rng rng(plan.seed);
  TrainResult result{init, {}};
  result.history.seed = plan.seed;
  Params params = std::move(init);
  Params grads = Params::zeros(params.config);
  int global_epoch = 0;

  for (const auto& stage : plan.stages) {
    const auto it = stage_data.find(stage.split);
    if (it == stage_data.end() || it->second.seqs.empty())
      throw DataError("empty training split for stage " + stage.name);
    const auto& data = it->second;
    if (data.seqs.size() != data.labels.size()) throw ShapeError("stage " + stage.name + " has mismatched labels");

    std::vector<std::size_t> pool(data.seqs.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    if (stage.balance_classes) pool = balanced_indices(data.labels, rng);

    StepOptions step;
    step.loss.kind = stage.loss;
    step.loss.alpha = plan.focal_alpha;
    step.loss.gamma = plan.focal_gamma;
    if (stage.loss == LossKind::kWeightedBce) {
      std::vector<int> pool_labels;
      for (auto i : pool) pool_labels.push_back(data.labels[i]);
      step.loss.class_weights = stage.class_weights.value_or(inverse_frequency_weights(pool_labels));
    }
    step.fgm = stage.fgm_enabled;
    step.fgm_epsilon = plan.fgm_epsilon;
    step.rng = &rng;

    const auto batch = static_cast<std::size_t>(plan.batch_size);
    const std::size_t micro_per_epoch = (pool.size() + batch - 1) / batch;
    const std::size_t steps_per_epoch =
        (micro_per_epoch + static_cast<std::size_t>(plan.accumulation_steps) - 1) / static_cast<std::size_t>(plan.accumulation_steps);
    const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * stage.epochs;

    OptState opt = OptState::fresh(params.config);
    Params stage_best = params;
    double stage_best_f1 = -1.0;
    int bad_epochs = 0;

    for (int e = 0; e < stage.epochs; ++e) {
      rng.shuffle(std::span(pool));
      grads.set_zero();
      double loss_sum = 0.0;
      std::size_t loss_count = 0;
      std::size_t finite_micro = 0;
      std::size_t pending_examples = 0;
      std::size_t pending_micro = 0;
      std::size_t steps = 0;
      const std::size_t skipped_before = opt.skipped_steps;

      auto flush = [&] {
        if (pending_examples == 0) return;
        const float scale = 1.0f / static_cast<float>(pending_examples);
        grads.for_each([scale](const std::string&, auto& t) { t *= scale; });
        zero_frozen_grads(grads, stage.freeze_lowest_layers);
        const double lr = lr_schedule(opt.t, total_steps, plan.lr, plan.warmup_frac);
        adamw_step(params, grads, opt, lr, plan.adamw, stage.freeze_lowest_layers);
        ++steps;
        grads.set_zero();
        pending_examples = 0;
        pending_micro = 0;
      };

      for (std::size_t start = 0; start < pool.size(); start += batch) {
        const std::size_t end = std::min(pool.size(), start + batch);
        std::vector<TokenSeq> seqs;
        std::vector<int> labels;
        for (std::size_t k = start; k < end; ++k) {
          seqs.push_back(data.seqs[pool[k]]);
          labels.push_back(data.labels[pool[k]]);
        }
        const auto r = accumulate_gradients(params, seqs, labels, step, grads);
        const double l = r.clean_loss_sum + r.adversarial_loss_sum;
        if (std::isfinite(l)) {
          loss_sum += l;
          loss_count += labels.size();
          ++finite_micro;
        }
        pending_examples += labels.size();
        if (++pending_micro == static_cast<std::size_t>(plan.accumulation_steps)) flush();
      }
      flush();

      EpochRecord rec;
      rec.stage = stage.name;
      rec.epoch = global_epoch++;
      rec.stage_epoch = e;
      rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
      rec.steps = steps;
      rec.skipped_steps = opt.skipped_steps - skipped_before;

      if (finite_micro == 0 || !params.all_finite()) {
        result.history.epochs.push_back(rec);
        result.history.aborted = true;
        result.history.abort_reason = "non-finite loss for a full epoch in " + stage.name;
        if (on_epoch) on_epoch(rec);
        return result;
      }

      const auto scores = score_dev(params, dev);
      rec.dev_macro_f1 = scores.macro_f1;
      rec.dev_accuracy = scores.accuracy;
      rec.dev_auroc = scores.auroc;
      result.history.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);

      if (scores.macro_f1 > result.history.best_dev_macro_f1) {
        result.history.best_dev_macro_f1 = scores.macro_f1;
        result.history.best_epoch = rec.epoch;
        result.best = params;
      }
      if (scores.macro_f1 > stage_best_f1) {
        stage_best_f1 = scores.macro_f1;
        stage_best = params;
        bad_epochs = 0;
      } else if (++bad_epochs >= plan.patience) {
        break;
      }
    }
    params = std::move(stage_best);
  }
  return result;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(k / 20.0);
  return g;
}

ThresholdCalibration calibrate_threshold(std::span<const double> probs, std::span<const int> labels,
                                         std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("threshold grid is empty");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size()))
    throw DataError("threshold calibration needs both classes in the Dev labels");
  ThresholdCalibration best{grid[0], -1.0};
  for (double tau : grid) {
    const double f = macro_f1(probs, labels, tau);
    // Distances rounded so 0.45 and 0.55 tie despite binary representation.
    const double d_new = std::round(std::abs(tau - 0.5) * 1e9);
    const double d_old = std::round(std::abs(best.tau - 0.5) * 1e9);
    // Scores within 1e-12 are ties: equal F1 fractions can round differently.
    const bool tie = std::abs(f - best.macro_f1) <= 1e-12;
    if ((f > best.macro_f1 && !tie) || (tie && (d_new < d_old || (d_new == d_old && tau > best.tau)))) {
      best = {tau, f};
    }
  }
  return best;
}

ThresholdCalibration calibrate_threshold(std::span<const double> probs, std::span<const int> labels) {
  const auto grid = default_threshold_grid();
  return calibrate_threshold(probs, labels, grid);
}

}  // namespace mguard
