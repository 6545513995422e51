#include <doctest.h>

#include <cmath>
#include <sstream>

#include "../common/gradcheck.hpp"
#include "mguard/encoder.hpp"
#include "mguard/error.hpp"

using namespace mguard;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 50;
  c.max_len = 12;
  return c;
}

TokenSeq seq(std::vector<std::int32_t> body, int max_len) {
  TokenSeq s;
  s.ids.push_back(2);
  for (auto id : body) s.ids.push_back(id);
  s.ids.push_back(3);
  s.mask.assign(s.ids.size(), 1);
  s.ids.resize(static_cast<std::size_t>(max_len), 0);
  s.mask.resize(static_cast<std::size_t>(max_len), 0);
  return s;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.n_classes = 3;
  CHECK_THROWS(c.validate());
}

TEST_CASE("predict_proba") {
  CHECK(predict_proba(1.5, 1.5) == doctest::Approx(0.5));
  CHECK(predict_proba(0.0, std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-12));
  const double p = predict_proba(1000.0, 0.0);
  CHECK(std::isfinite(p));
  CHECK(p < 1e-300);
  CHECK(predict_proba(0.0, 1000.0) == 1.0);
}

TEST_CASE("shapes, batch independence and pad invariance") {
  const auto c = small_config();
  Rng rng(5);
  const Params p = Params::initialized(c, rng);
  std::vector<TokenSeq> batch = {seq({5, 6, 7}, c.max_len), seq({8}, c.max_len), seq({9, 10, 11, 12, 13}, c.max_len)};
  const auto out = forward<float>(p, batch, {});
  CHECK(out.logits.rows() == 3);
  CHECK(out.logits.cols() == 2);

  std::vector<TokenSeq> permuted = {batch[2], batch[0], batch[1]};
  const auto out2 = forward<float>(p, permuted, {});
  CHECK(out2.logits.row(0) == out.logits.row(2));
  CHECK(out2.logits.row(1) == out.logits.row(0));

  // Pad ids never influence the output.
  TokenSeq noisy = batch[1];
  for (std::size_t i = 0; i < noisy.ids.size(); ++i)
    if (!noisy.mask[i]) noisy.ids[i] = 17;
  const auto out3 = forward<float>(p, std::vector<TokenSeq>{noisy}, {});
  CHECK(out3.logits.row(0) == out.logits.row(1));

  CHECK_THROWS(forward<float>(p, std::vector<TokenSeq>{}, {}));
  TokenSeq bad = batch[0];
  bad.ids[1] = c.vocab_size;
  CHECK_THROWS(forward<float>(p, std::vector<TokenSeq>{bad}, {}));
}

TEST_CASE("attention excludes padding and softmax rows sum to one") {
  const auto c = small_config();
  Rng rng(6);
  const Params p = Params::initialized(c, rng);
  std::vector<TokenSeq> batch = {seq({}, c.max_len), seq({4, 5, 6, 7}, c.max_len)};
  ForwardOptions fo;
  fo.keep_cache = true;
  const auto out = forward<float>(p, batch, fo);
  REQUIRE(out.caches.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto valid = static_cast<Eigen::Index>(batch[b].length());
    for (const auto& layer : out.caches[b].layers)
      for (const auto& a : layer.attention) {
        // Pad positions are never attended: only the valid columns exist.
        CHECK(a.cols() == valid);
        for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0f) <= 1e-6f);
      }
  }
}

TEST_CASE("layernorm output is normalized before the affine step") {
  const auto c = small_config();
  Rng rng(8);
  const Params p = Params::initialized(c, rng);
  ForwardOptions fo;
  fo.keep_cache = true;
  const auto out = forward<float>(p, std::vector<TokenSeq>{seq({4, 9, 22, 31}, c.max_len)}, fo);
  for (const auto& layer : out.caches[0].layers)
    for (const auto* xh : {&layer.xhat1, &layer.xhat2})
      for (Eigen::Index r = 0; r < xh->rows(); ++r) {
        const double mean = xh->row(r).mean();
        const double var = (xh->row(r).array() - mean).square().mean();
        CHECK(std::abs(mean) <= 1e-5);
        CHECK(std::abs(var - 1.0) <= 1e-4);
      }
}

TEST_CASE("eval-mode forward is bit-deterministic; train mode uses dropout") {
  const auto c = small_config();
  Rng rng(9);
  const Params p = Params::initialized(c, rng);
  const std::vector<TokenSeq> batch = {seq({4, 5, 6}, c.max_len)};
  CHECK(forward<float>(p, batch, {}).logits == forward<float>(p, batch, {}).logits);
  Rng d1(1), d2(1);
  ForwardOptions t1{true, false, &d1}, t2{true, false, &d2};
  CHECK(forward<float>(p, batch, t1).logits == forward<float>(p, batch, t2).logits);
  ForwardOptions no_rng{true, false, nullptr};
  CHECK_THROWS(forward<float>(p, batch, no_rng));
}

TEST_CASE("backward contracts") {
  const auto c = small_config();
  Rng rng(10);
  const Params p = Params::initialized(c, rng);
  const std::vector<TokenSeq> batch = {seq({4, 5}, c.max_len), seq({6}, c.max_len)};
  ForwardOptions fo;
  fo.keep_cache = true;
  const auto pass = forward<float>(p, batch, fo);
  Params g = Params::zeros(c);
  backward<float>(p, pass, Mat<float>::Zero(2, 2), g);
  bool all_zero = true;
  g.for_each([&](const std::string&, const auto& t) { all_zero = all_zero && t.isZero(0.0f); });
  CHECK(all_zero);
  const auto no_cache = forward<float>(p, batch, {});
  CHECK_THROWS_AS(backward<float>(p, no_cache, Mat<float>::Ones(2, 2), g), Error);
}

TEST_CASE("finite-difference gradient check on a 2-layer d_model=16 model") {
  gradcheck::Options opt;
  opt.coords_per_tensor = 10;
  const auto r = gradcheck::run(small_config(), opt);
  CHECK(r.coords >= 200);
  CHECK_MESSAGE(r.failures == 0, r.worst);
  CHECK(r.per_tensor.size() == 2 + 2 * 12 + 2);
}

TEST_CASE("checkpoint round-trip is byte exact") {
  const auto c = small_config();
  Rng rng(11);
  const Params p = Params::initialized(c, rng);
  std::stringstream a;
  write_checkpoint(a, p);
  const std::string bytes = a.str();
  CHECK(bytes.substr(0, 4) == "MGCK");
  std::stringstream in(bytes);
  const Params q = read_checkpoint(in);
  std::stringstream b;
  write_checkpoint(b, q);
  CHECK(b.str() == bytes);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_checkpoint(truncated));
  std::stringstream trailing(bytes + "x");
  CHECK_THROWS(read_checkpoint(trailing));
}

TEST_CASE("parameter count") {
  const auto c = small_config();
  const std::size_t per_layer = 4 * 16 * 16 + 4 * 16 + 16 * 32 + 32 + 32 * 16 + 16;
  CHECK(Params::zeros(c).parameter_count() == 50 * 16 + 12 * 16 + 2 * per_layer + 16 * 2 + 2);
}

}
