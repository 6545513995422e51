#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fixtures.hpp"
#include "mguard/error.hpp"
#include "mguard/runtime.hpp"

using namespace mguard;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string>& english_posts() {
  static const std::vector<std::string> posts = {
      "The city council voted on the new budget for the schools and the parks this week",
      "Scientists say the vaccine trial results were published in a peer reviewed journal today",
      "BREAKING they do not want you to know the truth about what is in the water!!!",
      "Officials confirmed that the bridge will be closed for repairs until the end of the month",
      "Share this before it is deleted, the mainstream media is hiding the real numbers from us",
      "A local bakery has won the regional award for the best bread in the state this year",
      "Doctors hate this one weird trick that cures everything and the government banned it",
      "The weather service expects heavy rain over the weekend with flooding in low areas",
      "Check out @newsdesk for the full report on the election results at https://example.org/x",
      "I can't believe they are lying to us again about the moon landing #wakeup #truth",
      "The museum will reopen next month after a long renovation of the main exhibition hall",
      "Experts warn that the new rule could raise prices for families across the whole country",
  };
  return posts;
}

struct Fixture {
  Vocab vocab;
  Params params;
  QuantModel qmodel;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    std::vector<CleanText> clean;
    for (const auto& p : english_posts()) clean.push_back(TextNormalizer::builtin().normalize(p));
    Vocab vocab = build_vocab(clean, 200);
    ModelConfig c;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = static_cast<int>(vocab.size());
    c.max_len = 64;
    Rng rng(99);
    Params p = Params::initialized(c, rng);
    // Enough spread in the logits that some posts land on each side of 0.5.
    p.classifier *= 40.0f;
    QuantModel q = quantize_model(p);
    // Centre the int8 logits between the two middle posts so both verdicts occur.
    std::vector<TokenSeq> seqs;
    for (const auto& t : clean) seqs.push_back(encode(vocab, t, 64));
    const auto logits = qforward(q, seqs);
    std::vector<float> diff;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) diff.push_back(logits(r, 1) - logits(r, 0));
    std::sort(diff.begin(), diff.end());
    const float mid = (diff[diff.size() / 2 - 1] + diff[diff.size() / 2]) / 2;
    p.classifier_bias(1) -= mid;
    q.classifier_bias(1) -= mid;
    return Fixture{std::move(vocab), std::move(p), std::move(q)};
  }();
  return f;
}

std::vector<FeedPost> feed() {
  std::vector<FeedPost> posts;
  int i = 0;
  for (const auto& t : english_posts()) posts.push_back({"p" + std::to_string(i++), Platform::kX, t});
  posts.push_back({"short", Platform::kOther, "too short to score"});
  posts.push_back({"ru", Platform::kFacebook, "Это сообщение написано на русском языке и не должно проходить проверку языка вообще"});
  posts.push_back({"dup", Platform::kX, "  THE CITY COUNCIL voted on the new budget for the schools and the parks this week "});
  return posts;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mguard_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("nearest-rank percentiles") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  CHECK(nearest_rank(v, 0.5) == 50);
  CHECK(nearest_rank(v, 0.9) == 90);
  CHECK(nearest_rank(v, 0.99) == 99);
  CHECK(nearest_rank(v, 1.0) == 100);
  const std::vector<double> one{7.5};
  const auto s1 = latency_stats(one);
  CHECK(s1.median == 7.5);
  CHECK(s1.p90 == 7.5);
  CHECK(s1.p99 == 7.5);
  CHECK(s1.count == 1);

  std::vector<double> shuffled = v;
  std::mt19937 gen(3);
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  const auto a = latency_stats(v);
  const auto b = latency_stats(shuffled);
  CHECK(a.median == b.median);
  CHECK(a.p90 == b.p90);
  CHECK(a.p99 == b.p99);
  CHECK(a.mean == doctest::Approx(50.5));
  CHECK_KIND(latency_stats(std::vector<double>{}), kData);
}

TEST_CASE("nearest-rank matches a counting oracle") {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + gen() % 250;
    std::vector<double> s(n);
    for (auto& x : s) x = static_cast<double>(gen() % 1000) / 10.0;
    std::sort(s.begin(), s.end());
    for (double q : {0.5, 0.9, 0.99}) {
      // Smallest sample with at least q*n samples <= it.
      double want = s.back();
      for (double x : s) {
        const auto le = static_cast<double>(std::upper_bound(s.begin(), s.end(), x) - s.begin());
        if (le >= q * static_cast<double>(n) - 1e-9) {
          want = x;
          break;
        }
      }
      REQUIRE(nearest_rank(s, q) == want);
    }
  }
}

TEST_CASE("classification gates and duplicates") {
  const auto& f = fixture();
  InferenceModel model(f.qmodel, f.vocab);
  Session session(0.5);
  std::vector<Verdict> out;
  for (const auto& p : feed()) out.push_back(classify_post(session, &model, p));
  for (std::size_t i = 0; i < english_posts().size(); ++i) {
    REQUIRE(out[i].p1.has_value());
    CHECK(out[i].status == (*out[i].p1 >= 0.5 ? VerdictStatus::kFlagged : VerdictStatus::kClean));
  }
  const auto n = english_posts().size();
  CHECK(out[n].status == VerdictStatus::kSkippedShort);
  CHECK_FALSE(out[n].p1.has_value());
  CHECK(out[n + 1].status == VerdictStatus::kSkippedLanguage);
  CHECK(out[n + 2].status == VerdictStatus::kSuppressedDuplicate);
  CHECK_FALSE(out[n + 2].p1.has_value());
  CHECK(session.seen_count() == n);
  CHECK(session.latencies().size() == out.size());

  // Gated posts are not remembered, so they gate the same way again.
  CHECK(classify_post(session, &model, feed()[n]).status == VerdictStatus::kSkippedShort);
  // A fresh session forgets everything.
  Session fresh(0.5);
  CHECK(classify_post(fresh, &model, feed()[n + 2]).p1.has_value());

  Session all(0.0);
  CHECK(classify_post(all, &model, feed()[3]).status == VerdictStatus::kFlagged);
  Session none(1.0);
  const auto v = classify_post(none, &model, feed()[3]);
  CHECK(v.status == (*v.p1 >= 1.0 ? VerdictStatus::kFlagged : VerdictStatus::kClean));

  CHECK_KIND(classify_post(session, nullptr, feed()[0]), kState);
  CHECK_KIND(Session(1.5), kConfig);
}

TEST_CASE("float and int8 inference agree on the fixture posts") {
  const auto& f = fixture();
  InferenceModel fm(f.params, f.vocab), qm(f.qmodel, f.vocab);
  CHECK_FALSE(fm.quantized());
  CHECK(qm.quantized());
  CHECK(qm.max_tokens() == 64);
  for (const auto& t : english_posts()) {
    const auto seq = qm.encode(TextNormalizer::builtin().normalize(t));
    CHECK(std::abs(fm.predict(seq) - qm.predict(seq)) < 0.05);
  }
}

TEST_CASE("verdict json") {
  Verdict v{"a\"b", VerdictStatus::kSkippedShort, std::nullopt, 0.25};
  const auto j = v.to_json();
  CHECK(j == R"({"post_id":"a\"b","status":"skipped_short","p1":null,"latency_ms":0.25})");
  CHECK(j.find('\n') == std::string::npos);
  CHECK(to_string(VerdictStatus::kSuppressedDuplicate) == "suppressed_duplicate");
  CHECK(to_string(VerdictStatus::kSkippedLanguage) == "skipped_language");
  CHECK(to_string(VerdictStatus::kFlagged) == "flagged");
  CHECK(to_string(VerdictStatus::kClean) == "clean");
}

TEST_CASE("bench drops warm-up samples") {
  const auto& f = fixture();
  InferenceModel model(f.qmodel, f.vocab);
  const auto posts = feed();
  const auto r = bench(model, posts, 0.5, 4);
  CHECK(r.verdicts.size() == posts.size());
  REQUIRE(r.samples.size() == posts.size() - 4);
  for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(r.samples[i] == r.verdicts[i + 4].latency_ms);
  auto sorted = r.samples;
  std::sort(sorted.begin(), sorted.end());
  CHECK(r.stats.median == nearest_rank(sorted, 0.5));
  CHECK(r.stats.count == r.samples.size());
  CHECK(r.max_rss_kb > 0);
  CHECK_KIND(bench(model, std::span(posts).first(4), 0.5, 4), kData);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.contains("median_ms"));
}

TEST_CASE("bundle round trip and tamper detection") {
  const auto& f = fixture();
  const auto dir = temp_dir("bundle");
  export_bundle(dir, f.qmodel, f.vocab, 0.35);
  for (const char* name : {"model.q8", "vocab.txt", "config.json", "bundle.json"}) CHECK(fs::exists(dir / name));
  const auto b = load_bundle(dir);
  CHECK(b.tau == 0.35);
  CHECK(b.model->quantized());
  InferenceModel direct(f.qmodel, f.vocab);
  for (const auto& t : english_posts()) {
    const auto seq = direct.encode(TextNormalizer::builtin().normalize(t));
    CHECK(b.model->predict(seq) == direct.predict(seq));
  }
  CHECK(file_hash(dir / "model.q8") == nlohmann::json::parse(slurp(dir / "bundle.json"))["files"]["model.q8"]);

  // Flip one byte in the model.
  {
    std::fstream io(dir / "model.q8", std::ios::in | std::ios::out | std::ios::binary);
    io.seekg(100);
    char c = 0;
    io.read(&c, 1);
    c = static_cast<char>(c ^ 0x01);
    io.seekp(100);
    io.write(&c, 1);
  }
  CHECK_KIND(load_bundle(dir), kData);
  export_bundle(dir, f.qmodel, f.vocab, 0.35);
  CHECK_NOTHROW(load_bundle(dir));
  fs::remove(dir / "vocab.txt");
  CHECK_KIND(load_bundle(dir), kIo);
  CHECK_KIND(load_bundle(dir / "nope"), kIo);
  fs::remove_all(dir);
}

TEST_CASE("golden verdicts") {
  const auto& f = fixture();
  InferenceModel model(f.qmodel, f.vocab);
  Session session(0.5);
  std::string got;
  for (const auto& p : feed()) {
    const auto v = classify_post(session, &model, p);
    char buf[64];
    if (v.p1) std::snprintf(buf, sizeof buf, "%.6f", *v.p1);
    else std::snprintf(buf, sizeof buf, "-");
    got += p.post_id + "\t" + std::string(to_string(v.status)) + "\t" + buf + "\n";
  }
  const auto path = source_path("tests/fixtures/runtime_golden.tsv");
  if (updating_fixtures()) {
    std::ofstream(path, std::ios::binary) << got;
  }
  REQUIRE(fs::exists(path));
  const auto want = slurp(path);
  // p1 values are compared to 1e-5 so libm differences do not break the snapshot.
  std::istringstream a(got), b(want);
  std::string la, lb;
  while (std::getline(b, lb)) {
    REQUIRE(std::getline(a, la));
    const auto ta = la.substr(0, la.rfind('\t')), tb = lb.substr(0, lb.rfind('\t'));
    CHECK(ta == tb);
    const auto pa = la.substr(la.rfind('\t') + 1), pb = lb.substr(lb.rfind('\t') + 1);
    if (pa == "-" || pb == "-") CHECK(pa == pb);
    else CHECK(std::abs(std::stod(pa) - std::stod(pb)) <= 1e-5);
  }
  CHECK_FALSE(std::getline(a, la));
}

}
