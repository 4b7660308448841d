#include "facadefixer/curation.hpp"

#include <doctest.h>

#include <set>

#include "facadefixer/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace facadefixer;

namespace {

Eigen::VectorXf vec2(float a, float b) {
  Eigen::VectorXf v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("dedup hand cases") {
  SUBCASE("three identical embeddings keep the lowest id") {
    const std::vector<std::pair<std::string, Eigen::VectorXf>> items = {
        {"c", vec2(1, 0)}, {"a", vec2(1, 0)}, {"b", vec2(1, 0)}};
    CHECK(dedup(items, 0.95) == std::vector<std::string>{"a"});
  }
  SUBCASE("orthogonal embeddings both survive") {
    const std::vector<std::pair<std::string, Eigen::VectorXf>> items = {
        {"a", vec2(1, 0)}, {"b", vec2(0, 1)}};
    CHECK(dedup(items, 0.95) == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("transitive chain collapses to one survivor") {
    // cos(a,b) and cos(b,c) above threshold, cos(a,c) below: one component.
    const Eigen::VectorXf a = vec2(1.0f, 0.0f);
    const Eigen::VectorXf b = vec2(std::cos(0.25f), std::sin(0.25f));
    const Eigen::VectorXf c = vec2(std::cos(0.5f), std::sin(0.5f));
    const double threshold = 0.97;
    REQUIRE(cosine_similarity(a, b) >= threshold);
    REQUIRE(cosine_similarity(b, c) >= threshold);
    REQUIRE(cosine_similarity(a, c) < threshold);
    const std::vector<std::pair<std::string, Eigen::VectorXf>> items = {
        {"a", a}, {"b", b}, {"c", c}};
    CHECK(dedup(items, threshold) == std::vector<std::string>{"a"});
  }
  SUBCASE("zero-norm embedding is rejected by id") {
    const std::vector<std::pair<std::string, Eigen::VectorXf>> items = {
        {"ok", vec2(1, 0)}, {"broken", vec2(0, 0)}};
    CHECK_THROWS_WITH_AS(dedup(items, 0.9), doctest::Contains("broken"),
                         ValidationError);
  }
}

TEST_CASE("dedup equals the connected-components oracle and is permutation-invariant") {
  SplitMix64 rng(83);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::pair<std::string, Eigen::VectorXf>> items;
    const int n = static_cast<int>(rng.uniform_int(2, 14));
    for (int i = 0; i < n; ++i) {
      items.emplace_back("item" + std::to_string(i),
                         support::random_unit_vector(rng, 8));
    }
    const double threshold = rng.uniform(0.5, 0.99);
    const std::vector<std::string> keep = dedup(items, threshold);
    const std::set<std::string> expected = oracle::brute_dedup(items, threshold);
    CHECK(std::set<std::string>(keep.begin(), keep.end()) == expected);

    std::vector<std::pair<std::string, Eigen::VectorXf>> shuffled(items.rbegin(),
                                                                  items.rend());
    CHECK(dedup(shuffled, threshold) == keep);
  }
}

TEST_CASE("raising the dedup threshold never shrinks the keep set") {
  SplitMix64 rng(89);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::pair<std::string, Eigen::VectorXf>> items;
    for (int i = 0; i < 10; ++i) {
      items.emplace_back("i" + std::to_string(i), support::random_unit_vector(rng, 4));
    }
    std::size_t prev = 0;
    for (double t : {0.5, 0.7, 0.9, 0.99}) {
      const std::size_t kept = dedup(items, t).size();
      CHECK(kept >= prev);
      prev = kept;
    }
  }
}

TEST_CASE("negative_filter") {
  const std::vector<ConceptEmbedding> negatives = {{"pipes", vec2(1, 0)},
                                                   {"windows", vec2(0, 1)}};
  const std::vector<ConceptEmbedding> positives = {{"crack", vec2(-1, 0)}};
  SUBCASE("embedding equal to a negative concept is dropped by name") {
    const NegativeFilterResult r = negative_filter(vec2(1, 0), negatives, positives, 0.0);
    CHECK_FALSE(r.keep);
    CHECK(r.offending_concept == "pipes");
  }
  SUBCASE("embedding aligned with a positive concept is kept") {
    const NegativeFilterResult r = negative_filter(vec2(-1, 0.01f), negatives,
                                                   positives, 0.0);
    CHECK(r.keep);
  }
  SUBCASE("borderline at exactly the margin is kept (strict inequality drops)") {
    // Image equidistant from the positive and the negative: best_neg ==
    // best_pos, margin 0 -> keep.
    const std::vector<ConceptEmbedding> neg = {{"pipes", vec2(1, 0)}};
    const std::vector<ConceptEmbedding> pos = {{"crack", vec2(0, 1)}};
    const Eigen::VectorXf mid = vec2(1, 1).normalized();
    const NegativeFilterResult r = negative_filter(mid, neg, pos, 0.0);
    CHECK(r.best_negative == doctest::Approx(r.best_positive));
    CHECK(r.keep);
  }
  SUBCASE("empty negative list keeps trivially") {
    const NegativeFilterResult r =
        negative_filter(vec2(1, 0), std::vector<ConceptEmbedding>{}, positives, 0.0);
    CHECK(r.keep);
  }
  SUBCASE("margin shifts the boundary") {
    const std::vector<ConceptEmbedding> neg = {{"pipes", vec2(1, 0)}};
    const std::vector<ConceptEmbedding> pos = {{"crack", vec2(0, 1)}};
    const Eigen::VectorXf lean_neg = vec2(1.0f, 0.9f).normalized();
    CHECK_FALSE(negative_filter(lean_neg, neg, pos, 0.0).keep);
    CHECK(negative_filter(lean_neg, neg, pos, 0.2).keep);
  }
}

TEST_CASE("quality_gate") {
  CurationConfig cfg;
  cfg.min_side = 512;
  SUBCASE("constant gray image fails the blur check") {
    const RasterImage flat = RasterImage::filled(1024, 1024, 128, 128, 128);
    const QualityReport r = quality_gate(flat, cfg, "flat");
    CHECK_FALSE(r.passed);
    CHECK(r.reason == "blur");
    REQUIRE(r.checks.size() == 3);
    CHECK(r.checks[0].passed);  // min_side
    CHECK(r.checks[1].passed);  // aspect
    CHECK_FALSE(r.checks[2].passed);
    CHECK(r.checks[2].value == 0.0);
  }
  SUBCASE("100x3000 image fails the aspect check") {
    const RasterImage thin = support::wall_image(1, 100, 3000);
    CurationConfig small = cfg;
    small.min_side = 64;
    const QualityReport r = quality_gate(thin, small, "thin");
    CHECK_FALSE(r.passed);
    CHECK(r.reason == "aspect");
    CHECK(r.checks[1].value == doctest::Approx(100.0 / 3000.0));
  }
  SUBCASE("2px-period checkerboard passes the blur check") {
    RasterImage checker = RasterImage::filled(1024, 1024, 0, 0, 0);
    for (int y = 0; y < 1024; ++y) {
      for (int x = 0; x < 1024; ++x) {
        if ((x / 2 + y / 2) % 2 == 0) {
          std::uint8_t* p = checker.at(x, y);
          p[0] = p[1] = p[2] = 255;
        }
      }
    }
    const QualityReport r = quality_gate(checker, cfg, "checker");
    CHECK(r.passed);
    CHECK(r.reason.empty());
    CHECK(r.checks[2].value ==
          doctest::Approx(oracle::brute_laplacian_variance(checker)).epsilon(1e-9));
  }
  SUBCASE("small image fails min_side first") {
    const RasterImage small_img = support::wall_image(2, 64, 64);
    const QualityReport r = quality_gate(small_img, cfg, "small");
    CHECK_FALSE(r.passed);
    CHECK(r.reason == "min_side");
  }
  SUBCASE("report.passed iff every check passed") {
    SplitMix64 rng(97);
    for (int trial = 0; trial < 10; ++trial) {
      CurationConfig c;
      c.min_side = static_cast<int>(rng.uniform_int(16, 128));
      c.blur_min_variance = rng.uniform(0.0, 50.0);
      const RasterImage img = support::wall_image(
          rng.next(), static_cast<int>(rng.uniform_int(16, 200)),
          static_cast<int>(rng.uniform_int(16, 200)));
      const QualityReport r = quality_gate(img, c, "x");
      bool all = true;
      for (const QualityCheck& check : r.checks) all = all && check.passed;
      CHECK(r.passed == all);
    }
  }
}
