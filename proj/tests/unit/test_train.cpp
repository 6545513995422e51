#include <doctest.h>

#include <cmath>
#include <random>

#include "mguard/error.hpp"
#include "mguard/eval.hpp"
#include "mguard/train.hpp"

using namespace mguard;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 40;
  c.max_len = 10;
  c.dropout = 0.0f;
  return c;
}

// Label is 1 iff token 5 appears; the rest is noise from ids 7..39.
TrainData toy_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TrainData d;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    TokenSeq s;
    s.ids = {2};
    const std::size_t len = 3 + rng.below(5);
    for (std::size_t k = 0; k < len; ++k) s.ids.push_back(static_cast<std::int32_t>(7 + rng.below(33)));
    s.ids[1 + rng.below(len)] = y ? 5 : 6;
    s.ids.push_back(3);
    s.mask.assign(s.ids.size(), 1);
    s.ids.resize(10, 0);
    s.mask.resize(10, 0);
    d.seqs.push_back(s);
    d.labels.push_back(y);
  }
  return d;
}

double max_abs_diff(const Params& a, const Params& b) {
  std::vector<const float*> pa, pb;
  std::vector<std::size_t> n;
  a.for_each([&](const std::string&, const auto& t) {
    pa.push_back(t.data());
    n.push_back(static_cast<std::size_t>(t.size()));
  });
  b.for_each([&](const std::string&, const auto& t) { pb.push_back(t.data()); });
  double m = 0;
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < n[k]; ++i) m = std::max(m, std::abs(double(pa[k][i]) - double(pb[k][i])));
  return m;
}

// Independent sweep: first maximum, ties to |tau - 0.5| then larger tau.
ThresholdCalibration oracle_calibration(const std::vector<double>& p, const std::vector<int>& y) {
  ThresholdCalibration best{0, -1};
  for (int k = 1; k <= 19; ++k) {
    const double tau = k / 20.0;
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool pred = p[i] >= tau;
      if (pred && y[i]) ++tp;
      else if (pred) ++fp;
      else if (y[i]) ++fn;
      else ++tn;
    }
    const double f1p = tp == 0 ? 0 : 2 * tp / (2 * tp + fp + fn);
    const double f1n = tn == 0 ? 0 : 2 * tn / (2 * tn + fn + fp);
    const double m = (f1p + f1n) / 2;
    const int dist = std::abs(k - 10);
    const int best_dist = static_cast<int>(std::lround(std::abs(best.tau * 20 - 10)));
    if (m > best.macro_f1 + 1e-12 || (std::abs(m - best.macro_f1) <= 1e-12 && (dist < best_dist || (dist == best_dist && tau > best.tau))))
      best = {tau, m};
  }
  return best;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("focal loss") {
  CHECK(focal_loss(0.5, 1) == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(focal_loss(0.5, 1) - 0.043322) <= 1e-6);
  CHECK(focal_loss(1.0 - 1e-7, 1) < 1e-15);
  for (int i = 1; i <= 100; ++i) {
    const double pt = i / 101.0;
    CHECK(std::abs(focal_loss(pt, 1, 1.0, 0.0) + std::log(pt)) <= 1e-9);
    CHECK(std::abs(focal_loss(1.0 - pt, 0, 1.0, 0.0) + std::log(pt)) <= 1e-9);
  }
  double prev = focal_loss(1e-6, 1);
  for (int i = 1; i < 1000; ++i) {
    const double l = focal_loss(i / 1000.0, 1);
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(std::isfinite(focal_loss(0.0, 1)));
}

TEST_CASE("weighted BCE") {
  CHECK(weighted_bce(0.5, 1, 1.0, 2.0) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(weighted_bce(0.5, 1, 1.0, 2.0) - 1.386294) <= 1e-6);
  CHECK(weighted_bce(0.3, 0, 1.0, 1.0) == doctest::Approx(-std::log(0.7)));
  std::vector<int> liar(1000, 0);
  for (int i = 0; i < 359; ++i) liar[i] = 1;
  const auto w = inverse_frequency_weights(liar);
  CHECK(w[0] == doctest::Approx(1.0 / (2 * 0.641)));
  CHECK(w[1] == doctest::Approx(1.0 / (2 * 0.359)));
  CHECK(w[1] / w[0] == doctest::Approx(0.641 / 0.359));
}

TEST_CASE("batch loss gradients match finite differences on the logits") {
  Mat<double> z(3, 2);
  z << 0.3, -0.2, -1.0, 0.7, 2.0, 1.5;
  const std::vector<int> y = {1, 0, 1};
  for (auto kind : {LossKind::kFocal, LossKind::kWeightedBce}) {
    LossSpec spec;
    spec.kind = kind;
    spec.class_weights = {0.7, 1.6};
    const auto bl = batch_loss<double>(z, y, spec);
    for (Eigen::Index r = 0; r < 3; ++r)
      for (Eigen::Index c = 0; c < 2; ++c) {
        Mat<double> up = z, dn = z;
        up(r, c) += 1e-6;
        dn(r, c) -= 1e-6;
        const double num = (batch_loss<double>(up, y, spec).sum - batch_loss<double>(dn, y, spec).sum) / 2e-6;
        CHECK(bl.logit_grads(r, c) == doctest::Approx(num).epsilon(1e-6));
      }
  }
}

TEST_CASE("FGM perturbation") {
  std::vector<Mat<double>> g = {Mat<double>::Zero(2, 3), Mat<double>::Random(4, 3)};
  const auto r = fgm_perturbation<double>(g, 0.7);
  CHECK(r[0].isZero(0.0));
  CHECK(r[1].norm() == doctest::Approx(0.7));

  const auto c = tiny();
  Rng rng(3);
  const Params p = Params::initialized(c, rng);
  const auto data = toy_data(8, 4);
  StepOptions opts;
  opts.train_mode = false;
  opts.fgm = true;
  opts.fgm_epsilon = 0.5;
  Params grads = Params::zeros(c);
  const auto res = accumulate_gradients(p, data.seqs, data.labels, opts, grads);
  CHECK(res.adversarial_loss_sum >= res.clean_loss_sum - 1e-6);
}

TEST_CASE("AdamW") {
  std::vector<float> theta{1.0f}, g{1.0f}, m{0.0f}, v{0.0f};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_update(theta, g, m, v, 1, 0.1, cfg);
  CHECK(theta[0] == doctest::Approx(0.9).epsilon(1e-6));

  std::vector<float> t2{2.0f}, g2{0.0f}, m2{0.0f}, v2{0.0f};
  AdamWConfig wd;
  wd.weight_decay = 0.01;
  adamw_update(t2, g2, m2, v2, 1, 0.1, wd);
  CHECK(t2[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-7));

  std::vector<float> a{0.5f}, ga{0.3f}, ma{0.1f}, va{0.2f};
  std::vector<float> b = a, gb = ga, mb = ma, vb = va;
  adamw_update(a, ga, ma, va, 3, 0.01, wd);
  adamw_update(b, gb, mb, vb, 3, 0.01, wd);
  CHECK(a == b);
  CHECK(ma == mb);
}

TEST_CASE("non-finite gradients skip the step") {
  const auto c = tiny();
  Rng rng(1);
  Params p = Params::initialized(c, rng);
  const Params before = p;
  Params g = Params::zeros(c);
  g.classifier(0, 0) = std::nanf("");
  OptState st = OptState::fresh(c);
  CHECK_FALSE(adamw_step(p, g, st, 0.1, {}));
  CHECK(st.skipped_steps == 1);
  CHECK(st.t == 0);
  CHECK(max_abs_diff(p, before) == 0.0);
}

TEST_CASE("lr schedule") {
  CHECK(lr_schedule(0, 100) == 0.0);
  CHECK(lr_schedule(6, 100) == 2e-5);
  CHECK(lr_schedule(100, 100) == 2e-5);
  CHECK(lr_schedule(3, 100) == doctest::Approx(1e-5));
  // Continuous at the warm-up boundary: the ramp reaches base_lr there.
  CHECK(lr_schedule(5, 100) == doctest::Approx(2e-5 * 5 / 6));
  CHECK(lr_schedule(6, 100) - lr_schedule(5, 100) <= 2e-5 / 6 + 1e-18);
  CHECK_THROWS(lr_schedule(101, 100));
}

TEST_CASE("accumulated micro-batches equal one mean-reduced step") {
  const auto c = tiny();
  Rng rng(2);
  const Params init = Params::initialized(c, rng);
  const auto data = toy_data(12, 9);
  StepOptions opts;
  opts.train_mode = false;

  Params pa = init, ga = Params::zeros(c);
  const std::span<const TokenSeq> seqs(data.seqs);
  const std::span<const int> labels(data.labels);
  accumulate_gradients(pa, seqs.subspan(0, 5), labels.subspan(0, 5), opts, ga);
  accumulate_gradients(pa, seqs.subspan(5), labels.subspan(5), opts, ga);
  Params pb = init, gb = Params::zeros(c);
  accumulate_gradients(pb, seqs, labels, opts, gb);

  ga.for_each([](const std::string&, auto& t) { t /= 12.0f; });
  gb.for_each([](const std::string&, auto& t) { t /= 12.0f; });
  CHECK(max_abs_diff(ga, gb) <= 1e-6);
  OptState sa = OptState::fresh(c), sb = OptState::fresh(c);
  adamw_step(pa, ga, sa, 1e-3, {});
  adamw_step(pb, gb, sb, 1e-3, {});
  CHECK(max_abs_diff(pa, pb) <= 1e-6);
}

TEST_CASE("freezing") {
  CHECK(is_frozen("token_embedding", 1));
  CHECK(is_frozen("position_embedding", 1));
  CHECK(is_frozen("layer0.wq", 1));
  CHECK_FALSE(is_frozen("layer1.wq", 1));
  CHECK_FALSE(is_frozen("classifier", 1));
  CHECK_FALSE(is_frozen("token_embedding", 0));

  const auto c = tiny();
  Rng rng(4);
  const Params init = Params::initialized(c, rng);
  CurriculumPlan plan;
  plan.stages = {{"Stage0", Split::kStage0, 2, LossKind::kWeightedBce, false, 1, true, std::nullopt}};
  plan.lr = 1e-2;
  plan.batch_size = 8;
  std::map<Split, TrainData> data{{Split::kStage0, toy_data(32, 1)}};
  const auto result = run_curriculum(plan, data, toy_data(16, 2), init);
  CHECK(result.best.token_embedding == init.token_embedding);
  CHECK(result.best.position_embedding == init.position_embedding);
  CHECK(result.best.layers[0].wq == init.layers[0].wq);
  CHECK(result.best.layers[0].b2 == init.layers[0].b2);
  CHECK(result.best.layers[1].wq != init.layers[1].wq);
}

TEST_CASE("overfit sanity: 64 examples, 30 epochs") {
  const auto c = tiny();
  Rng rng(5);
  CurriculumPlan plan;
  plan.stages = {{"fit", Split::kStage2, 30, LossKind::kWeightedBce, false, 0, false, std::nullopt}};
  plan.lr = 3e-3;
  plan.batch_size = 16;
  plan.accumulation_steps = 1;
  plan.patience = 1000;
  const auto train = toy_data(64, 11);
  const auto result = run_curriculum(plan, {{Split::kStage2, train}}, train, Params::initialized(c, rng));
  CHECK(result.history.epochs.size() == 30);
  const auto probs = predict(result.best, train.seqs);
  CHECK(accuracy(confusion(probs, train.labels, 0.5)) >= 0.99);
}

TEST_CASE("early stopping returns the max-Dev-F1 epoch") {
  const auto c = tiny();
  Rng rng(6);
  auto plan = CurriculumPlan::three_stage(2, 3);
  plan.lr = 5e-3;
  plan.batch_size = 8;
  std::map<Split, TrainData> data{{Split::kStage0, toy_data(32, 1)}, {Split::kStage1, toy_data(24, 2)},
                                  {Split::kStage2, toy_data(32, 3)}};
  const auto dev = toy_data(20, 4);
  std::vector<EpochRecord> seen;
  const auto result = run_curriculum(plan, data, dev, Params::initialized(c, rng),
                                     [&seen](const EpochRecord& e) { seen.push_back(e); });
  CHECK(seen.size() == result.history.epochs.size());
  double best = -1;
  for (const auto& e : result.history.epochs) best = std::max(best, e.dev_macro_f1);
  CHECK(result.history.best_dev_macro_f1 == best);
  CHECK(result.history.epochs[static_cast<std::size_t>(result.history.best_epoch)].dev_macro_f1 == best);
  CHECK(macro_f1(predict(result.best, dev.seqs), dev.labels, 0.5) == best);
  const auto jsonl = result.history.to_jsonl();
  CHECK(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')) == result.history.epochs.size());
  // Stage 1 runs exactly one epoch.
  CHECK(std::count_if(seen.begin(), seen.end(), [](const EpochRecord& e) { return e.stage == "Stage1"; }) == 1);
}

TEST_CASE("divergence aborts with history") {
  const auto c = tiny();
  Rng rng(7);
  Params init = Params::initialized(c, rng);
  init.classifier_bias(0) = std::nanf("");
  CurriculumPlan plan;
  plan.stages = {{"s", Split::kStage2, 3, LossKind::kFocal, false, 0, false, std::nullopt}};
  const auto r = run_curriculum(plan, {{Split::kStage2, toy_data(16, 1)}}, toy_data(8, 2), init);
  CHECK(r.history.aborted);
  CHECK(r.history.epochs.size() == 1);
}

TEST_CASE("empty stage split is an error") {
  CurriculumPlan plan = CurriculumPlan::three_stage();
  Rng rng(1);
  CHECK_THROWS_AS(run_curriculum(plan, {}, toy_data(8, 1), Params::initialized(tiny(), rng)), Error);
}

TEST_CASE("threshold calibration") {
  // Separated: positives above 0.8, negatives below 0.3; every tau in the gap scores 1.
  const std::vector<double> p = {0.85, 0.9, 0.2, 0.1};
  const std::vector<int> y = {1, 1, 0, 0};
  const auto cal = calibrate_threshold(p, y);
  CHECK(cal.macro_f1 == 1.0);
  CHECK(cal.tau == 0.5);
  const std::vector<double> q = {0.95, 0.9, 0.7, 0.65};
  const auto cal2 = calibrate_threshold(q, y);
  CHECK(cal2.tau == 0.75);

  const std::vector<double> ex = {0.9, 0.7, 0.65, 0.2};
  const auto a = calibrate_threshold(ex, y);
  const auto o = oracle_calibration(ex, y);
  CHECK(a.tau == o.tau);
  CHECK(a.macro_f1 == doctest::Approx(o.macro_f1));

  std::mt19937_64 gen(8);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + gen() % 60;
    std::vector<double> pr(n);
    std::vector<int> lb(n);
    for (std::size_t i = 0; i < n; ++i) {
      pr[i] = static_cast<double>(gen() % 1001) / 1000.0;
      lb[i] = static_cast<int>(gen() % 2);
    }
    lb[0] = 1;
    lb[1] = 0;
    const auto got = calibrate_threshold(pr, lb);
    const auto want = oracle_calibration(pr, lb);
    REQUIRE(got.tau == want.tau);
  }
  CHECK_THROWS(calibrate_threshold(std::vector<double>{0.4, 0.6}, std::vector<int>{1, 1}));
}

}
