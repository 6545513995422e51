#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mguard/corpus.hpp"
#include "mguard/encoder.hpp"

namespace mguard {

inline constexpr double kProbEpsilon = 1e-7;

// ---- losses -------------------------------------------------------------

// -alpha * (1 - p_t)^gamma * log(p_t), p_t = p for y = 1 else 1 - p,
// with p clamped to [1e-7, 1 - 1e-7].
double focal_loss(double p, int y, double alpha = 0.25, double gamma = 2.0);

// -w_y * log(p_t) with the same clamping.
double weighted_bce(double p, int y, double w0, double w1);

enum class LossKind { kWeightedBce, kFocal };

struct LossSpec {
  LossKind kind = LossKind::kFocal;
  double alpha = 0.25;
  double gamma = 2.0;
  std::array<double, 2> class_weights{1.0, 1.0};
};

// Summed loss over a batch of logits and its gradient w.r.t. the logits.
template <typename T>
struct BatchLoss {
  double sum = 0.0;
  Mat<T> logit_grads;
};

template <typename T>
BatchLoss<T> batch_loss(const Mat<T>& logits, std::span<const int> labels, const LossSpec& spec);

// w_c = 1 / (2 * frequency_c), so the expected weight over the data is 1.
std::array<double, 2> inverse_frequency_weights(std::span<const int> labels);

// ---- FGM -----------------------------------------------------------------

// r = eps * g / (||g||_2 + 1e-12) per example.
template <typename T>
std::vector<Mat<T>> fgm_perturbation(std::span<const Mat<T>> embedding_grads, double epsilon);

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// One AdamW update of a flat tensor at (1-based) step t.
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  std::int64_t t, double lr, const AdamWConfig& config);

struct OptState {
  Params m;
  Params v;
  std::int64_t t = 0;
  std::size_t skipped_steps = 0;

  static OptState fresh(const ModelConfig& config);
};

// True for tensors frozen when the lowest `k` layers are frozen: k > 0
// freezes the embeddings and encoder layers 0..k-1.
bool is_frozen(const std::string& tensor_name, int freeze_lowest_layers);
void zero_frozen_grads(Params& grads, int freeze_lowest_layers);

// Applies AdamW to every non-frozen tensor. Non-finite gradients skip the
// step (returns false and bumps skipped_steps).
bool adamw_step(Params& params, const Params& grads, OptState& state, double lr, const AdamWConfig& config,
                int freeze_lowest_layers = 0);

// Linear ramp 0 -> base_lr over ceil(warmup_frac * total_steps) steps, then constant.
double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr = 2e-5, double warmup_frac = 0.06);

// ---- gradient accumulation -----------------------------------------------

struct StepOptions {
  LossSpec loss;
  bool fgm = false;
  double fgm_epsilon = 1.0;
  bool train_mode = true;
  Rng* rng = nullptr;
};

struct MicroBatchResult {
  double clean_loss_sum = 0.0;
  double adversarial_loss_sum = 0.0;
};

// Forward/backward over one micro-batch, adding summed-loss gradients into
// `grads`. With FGM a second pass on perturbed embeddings adds its loss and
// gradients too.
MicroBatchResult accumulate_gradients(const Params& params, std::span<const TokenSeq> batch,
                                      std::span<const int> labels, const StepOptions& opts, Params& grads);

// ---- curriculum ------------------------------------------------------------

struct StageSpec {
  std::string name;
  Split split = Split::kStage0;
  int epochs = 1;
  LossKind loss = LossKind::kFocal;
  bool fgm_enabled = false;
  int freeze_lowest_layers = 0;
  bool balance_classes = false;  // down-sample the majority class to 50/50
  std::optional<std::array<double, 2>> class_weights;
};

struct CurriculumPlan {
  std::vector<StageSpec> stages;
  double lr = 2e-5;
  double warmup_frac = 0.06;
  int batch_size = 32;
  int accumulation_steps = 2;
  int patience = 2;
  std::uint64_t seed = 42;
  double fgm_epsilon = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  AdamWConfig adamw;

  // ISOT warm-up with layer freezing, one LIAR epoch with weighted BCE,
  // then focal loss + FGM on the Stage-2 mix.
  static CurriculumPlan three_stage(int stage0_epochs = 3, int stage2_epochs = 5);
  void validate(const ModelConfig& model) const;
};

struct TrainData {
  std::vector<TokenSeq> seqs;
  std::vector<int> labels;
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;        // global, 0-based
  int stage_epoch = 0;  // within the stage, 0-based
  double train_loss = 0.0;
  double dev_macro_f1 = 0.0;
  double dev_accuracy = 0.0;
  double dev_auroc = 0.0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
};

struct TrainHistory {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_dev_macro_f1 = -1.0;
  bool aborted = false;
  std::string abort_reason;

  std::string to_jsonl() const;
};

struct TrainResult {
  Params best;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs every stage in order. Each stage starts with a fresh optimizer and
// schedule; patience counts non-improving epochs within a stage, and the
// next stage continues from the stage's best epoch. The returned parameters
// are the best Dev macro-F1 (tau = 0.5) epoch overall. A stage whose loss is
// non-finite for a whole epoch aborts the run with `history.aborted` set.
TrainResult run_curriculum(const CurriculumPlan& plan, const std::map<Split, TrainData>& stage_data,
                           const TrainData& dev, Params init, const EpochCallback& on_epoch = {});

// ---- threshold calibration --------------------------------------------------

struct ThresholdCalibration {
  double tau = 0.5;
  double macro_f1 = 0.0;
};

// 0.05, 0.10, ..., 0.95.
std::vector<double> default_threshold_grid();

// argmax of macro-F1 over the grid; ties go to the value closest to 0.5,
// then to the larger value. Throws DataError for single-class labels.
ThresholdCalibration calibrate_threshold(std::span<const double> probs, std::span<const int> labels,
                                         std::span<const double> grid);
ThresholdCalibration calibrate_threshold(std::span<const double> probs, std::span<const int> labels);

}  // namespace mguard
