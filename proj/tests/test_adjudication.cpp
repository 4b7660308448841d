#include "facadefixer/adjudication.hpp"

#include <doctest.h>

#include <atomic>

#include "facadefixer/rng.hpp"
#include "support.hpp"

using namespace facadefixer;

namespace {

class FakeTransport : public HttpTransport {
 public:
  struct Step {
    bool fail = false;
    std::string body;
  };
  std::vector<Step> steps;
  std::atomic<int> calls{0};

  std::string post_json(const std::string&, const std::string&, int,
                        const std::string&) override {
    const int i = calls++;
    if (i >= static_cast<int>(steps.size()))
      throw TransportError("no scripted reply left");
    if (steps[static_cast<std::size_t>(i)].fail)
      throw TransportError("scripted transport failure");
    return steps[static_cast<std::size_t>(i)].body;
  }
};

Detection det(double x, double y, double w, double h, DefectCategory c, double conf) {
  Detection d;
  d.box = {x, y, w, h};
  d.category = c;
  d.confidence = conf;
  d.source = "e";
  return d;
}

const ImageRef kImage{"img1", "file://img1.ppm", 64, 64, {}};

ExpertDescriptor live_adjudicator() {
  ExpertDescriptor d;
  d.id = "adj";
  d.kind = ExpertKind::Adjudicator;
  d.endpoint = "http://example.invalid/adjudicate";
  return d;
}

}  // namespace

TEST_CASE("build_request") {
  SUBCASE("single valid candidate") {
    std::vector<CandidateSet> candidates;
    candidates.push_back({"union", std::vector<Detection>{det(0, 0, 4, 4,
                                                              DefectCategory::Crack,
                                                              0.5)}});
    const AdjudicationRequest req = build_request(kImage, candidates, "choose");
    CHECK(req.candidates.size() == 1);
    CHECK(req.task == AdjudicationTask::Detection);
    CHECK(req.context.find("choose") != std::string::npos);
    // Category glossary is embedded.
    CHECK(req.context.find("Spalling") != std::string::npos);
    CHECK(req.context.find("rubbish") != std::string::npos);
  }
  SUBCASE("three labeled detection candidates serialize to the wire schema") {
    std::vector<CandidateSet> candidates;
    for (const char* label : {"a", "b", "c"}) {
      candidates.push_back(
          {label, std::vector<Detection>{det(0, 0, 4, 4, DefectCategory::Crack, 0.5)}});
    }
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    const nlohmann::json wire = req.to_wire();
    CHECK(wire.at("task") == "detection");
    CHECK(wire.at("image").at("id") == "img1");
    CHECK(wire.at("image").at("width") == 64);
    REQUIRE(wire.at("candidates").size() == 3);
    CHECK(wire.at("candidates")[0].at("label") == "a");
    CHECK(wire.at("candidates")[0].at("detections")[0].at("x") == 0.0);
    CHECK(wire.at("candidates")[0].at("stats").at("count") == 1);
    CHECK(wire.at("candidates")[0].at("stats").at("mean_confidence") == 0.5);
  }
  SUBCASE("mask candidates carry mask_rle") {
    std::vector<CandidateSet> candidates;
    BinaryMask m = BinaryMask::zeros(4, 4);
    m.set(1, 1, true);
    candidates.push_back({"bbox-prompt", m});
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    CHECK(req.task == AdjudicationTask::Segmentation);
    CHECK(req.to_wire().at("candidates")[0].at("mask_rle") == m.to_rle());
  }
  SUBCASE("mixed payload kinds are rejected") {
    std::vector<CandidateSet> candidates;
    candidates.push_back({"a", std::vector<Detection>{}});
    candidates.push_back({"b", BinaryMask::zeros(4, 4)});
    CHECK_THROWS_AS(build_request(kImage, candidates, "ctx"), ValidationError);
  }
  SUBCASE("empty candidates and duplicate labels are rejected") {
    CHECK_THROWS_AS(build_request(kImage, {}, "ctx"), ValidationError);
    std::vector<CandidateSet> dup;
    dup.push_back({"a", std::vector<Detection>{}});
    dup.push_back({"a", std::vector<Detection>{}});
    CHECK_THROWS_AS(build_request(kImage, dup, "ctx"), ValidationError);
  }
}

TEST_CASE("parse_verdict") {
  std::vector<CandidateSet> candidates;
  candidates.push_back({"union", std::vector<Detection>{}});
  candidates.push_back({"intersection", std::vector<Detection>{}});
  const AdjudicationRequest req = build_request(kImage, candidates, "ctx");

  SUBCASE("plain verdict object") {
    const Verdict v =
        parse_verdict(req, R"({"chosen":"intersection","rationale":"tighter"})");
    CHECK(v.chosen == "intersection");
    CHECK(v.rationale == "tighter");
    CHECK(v.source == VerdictSource::Endpoint);
  }
  SUBCASE("verdict wrapped in prose and code fences") {
    const Verdict v = parse_verdict(
        req, "Sure! Here is my answer:\n```json\n{\"chosen\": \"union\"}\n```\n");
    CHECK(v.chosen == "union");
  }
  SUBCASE("unknown label is a parse error") {
    CHECK_THROWS_AS(parse_verdict(req, R"({"chosen":"nonsense"})"), ParseError);
  }
  SUBCASE("empty and garbage replies are parse errors") {
    CHECK_THROWS_AS(parse_verdict(req, ""), ParseError);
    CHECK_THROWS_AS(parse_verdict(req, "no json here"), ParseError);
    CHECK_THROWS_AS(parse_verdict(req, "{\"other\":1}"), ParseError);
  }
  SUBCASE("first well-formed record wins") {
    const Verdict v = parse_verdict(
        req, R"({"broken": }  {"chosen":"union"} {"chosen":"intersection"})");
    CHECK(v.chosen == "union");
  }
}

TEST_CASE("adjudicate") {
  std::vector<CandidateSet> two;
  two.push_back({"union", std::vector<Detection>{det(0, 0, 8, 8, DefectCategory::Crack, 0.9)}});
  two.push_back({"intersection",
                 std::vector<Detection>{det(0, 0, 8, 8, DefectCategory::Crack, 0.8)}});
  const AdjudicationRequest req = build_request(kImage, two, "ctx");

  SUBCASE("single candidate bypasses the endpoint") {
    std::vector<CandidateSet> one;
    one.push_back({"only", std::vector<Detection>{}});
    const AdjudicationRequest single = build_request(kImage, one, "ctx");
    auto fake = std::make_shared<FakeTransport>();
    const ExpertGateway gateway(fake);
    const Verdict v = adjudicate(single, live_adjudicator(), "only", gateway);
    CHECK(v.chosen == "only");
    CHECK(v.source == VerdictSource::Bypass);
    CHECK(fake->calls == 0);
  }
  SUBCASE("valid endpoint reply wins") {
    auto fake = std::make_shared<FakeTransport>();
    fake->steps.push_back({false, R"({"chosen":"union","rationale":"bigger"})"});
    const ExpertGateway gateway(fake);
    const Verdict v = adjudicate(req, live_adjudicator(), "intersection", gateway);
    CHECK(v.chosen == "union");
    CHECK(v.source == VerdictSource::Endpoint);
    CHECK(fake->calls == 1);
  }
  SUBCASE("two malformed replies fall back") {
    auto fake = std::make_shared<FakeTransport>();
    fake->steps.push_back({false, "garbage"});
    fake->steps.push_back({false, "more garbage"});
    const ExpertGateway gateway(fake);
    const Verdict v = adjudicate(req, live_adjudicator(), "intersection", gateway);
    CHECK(v.chosen == "intersection");
    CHECK(v.source == VerdictSource::Fallback);
    CHECK(fake->calls == 2);
  }
  SUBCASE("transport failure then success") {
    auto fake = std::make_shared<FakeTransport>();
    fake->steps.push_back({true, ""});
    fake->steps.push_back({false, R"({"chosen":"union"})"});
    const ExpertGateway gateway(fake);
    const Verdict v = adjudicate(req, live_adjudicator(), "intersection", gateway);
    CHECK(v.chosen == "union");
    CHECK(v.source == VerdictSource::Endpoint);
  }
  SUBCASE("disabled endpoint goes straight to the fallback") {
    auto fake = std::make_shared<FakeTransport>();
    const ExpertGateway gateway(fake);
    ExpertDescriptor disabled = live_adjudicator();
    disabled.endpoint = "disabled";
    const Verdict v = adjudicate(req, disabled, "intersection", gateway);
    CHECK(v.chosen == "intersection");
    CHECK(v.source == VerdictSource::Fallback);
    CHECK(fake->calls == 0);
  }
  SUBCASE("mock endpoint resolves in-process") {
    const ExpertGateway gateway;
    ExpertDescriptor mock_adj = live_adjudicator();
    mock_adj.endpoint = "mock:8";
    const Verdict v = adjudicate(req, mock_adj, "intersection", gateway);
    CHECK(v.source == VerdictSource::Mock);
    CHECK((v.chosen == "union" || v.chosen == "intersection"));
  }
  SUBCASE("absent fallback label is rejected at call time") {
    const ExpertGateway gateway(std::make_shared<FakeTransport>());
    CHECK_THROWS_AS(adjudicate(req, live_adjudicator(), "nonsense", gateway),
                    ValidationError);
  }
}

TEST_CASE("mock_adjudicate agreement scoring") {
  SUBCASE("two agreeing candidates beat a disjoint one") {
    std::vector<CandidateSet> candidates;
    const Detection shared = det(0, 0, 10, 10, DefectCategory::Crack, 0.9);
    candidates.push_back({"a", std::vector<Detection>{shared}});
    candidates.push_back({"b", std::vector<Detection>{shared}});
    candidates.push_back(
        {"c", std::vector<Detection>{det(40, 40, 10, 10, DefectCategory::Crack, 0.9)}});
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    const Verdict v = mock_adjudicate(req);
    CHECK(v.chosen == "a");  // agreement 0.5 each for a and b, tie -> lexicographic
  }
  SUBCASE("identical candidates tie to the lexicographically smallest label") {
    std::vector<CandidateSet> candidates;
    const Detection d0 = det(0, 0, 10, 10, DefectCategory::Crack, 0.9);
    candidates.push_back({"zeta", std::vector<Detection>{d0}});
    candidates.push_back({"alpha", std::vector<Detection>{d0}});
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    CHECK(mock_adjudicate(req).chosen == "alpha");
  }
  SUBCASE("category mismatch counts as zero agreement") {
    std::vector<CandidateSet> candidates;
    candidates.push_back(
        {"crack", std::vector<Detection>{det(0, 0, 10, 10, DefectCategory::Crack, 0.9)}});
    candidates.push_back(
        {"rust", std::vector<Detection>{det(0, 0, 10, 10, DefectCategory::RustStain, 0.9)}});
    candidates.push_back(
        {"crack2", std::vector<Detection>{det(1, 1, 10, 10, DefectCategory::Crack, 0.9)}});
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    const Verdict v = mock_adjudicate(req);
    CHECK((v.chosen == "crack" || v.chosen == "crack2"));
  }
  SUBCASE("mask candidates score by mask IoU") {
    BinaryMask big = BinaryMask::zeros(8, 8);
    for (int i = 0; i < 4; ++i) big.set(i, 0, true);
    BinaryMask similar = big;
    similar.set(4, 0, true);
    BinaryMask different = BinaryMask::zeros(8, 8);
    different.set(7, 7, true);
    std::vector<CandidateSet> candidates;
    candidates.push_back({"x", big});
    candidates.push_back({"y", similar});
    candidates.push_back({"z", different});
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    const Verdict v = mock_adjudicate(req);
    CHECK((v.chosen == "x" || v.chosen == "y"));
  }
  SUBCASE("permutation invariance modulo the tie rule") {
    SplitMix64 rng(103);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<CandidateSet> candidates;
      const int n = static_cast<int>(rng.uniform_int(2, 5));
      for (int i = 0; i < n; ++i) {
        std::vector<Detection> dets;
        const int k = static_cast<int>(rng.uniform_int(0, 3));
        for (int j = 0; j < k; ++j) {
          dets.push_back(det(static_cast<double>(rng.uniform_int(0, 40)),
                             static_cast<double>(rng.uniform_int(0, 40)),
                             static_cast<double>(rng.uniform_int(4, 12)),
                             static_cast<double>(rng.uniform_int(4, 12)),
                             kAllCategories[rng.next() % 6], rng.uniform(0.1, 0.9)));
        }
        candidates.push_back({"cand" + std::to_string(i), std::move(dets)});
      }
      const AdjudicationRequest fwd = build_request(kImage, candidates, "ctx");
      std::vector<CandidateSet> reversed(candidates.rbegin(), candidates.rend());
      const AdjudicationRequest rev = build_request(kImage, reversed, "ctx");
      CHECK(mock_adjudicate(fwd).chosen == mock_adjudicate(rev).chosen);
    }
  }
}

TEST_CASE("adjudicate never names an absent label (fuzz)") {
  SplitMix64 rng(107);
  const ExpertGateway gateway(std::make_shared<FakeTransport>());
  ExpertDescriptor disabled;
  disabled.id = "adj";
  disabled.kind = ExpertKind::Adjudicator;
  disabled.endpoint = "disabled";
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<CandidateSet> candidates;
    const int n = static_cast<int>(rng.uniform_int(1, 5));
    for (int i = 0; i < n; ++i) {
      std::vector<Detection> dets;
      const int k = static_cast<int>(rng.uniform_int(0, 4));
      for (int j = 0; j < k; ++j) {
        dets.push_back(det(static_cast<double>(rng.uniform_int(0, 50)),
                           static_cast<double>(rng.uniform_int(0, 50)),
                           static_cast<double>(rng.uniform_int(2, 14)),
                           static_cast<double>(rng.uniform_int(2, 14)),
                           kAllCategories[rng.next() % 6], rng.uniform(0.01, 0.99)));
      }
      candidates.push_back({"c" + std::to_string(i), std::move(dets)});
    }
    const AdjudicationRequest req = build_request(kImage, candidates, "ctx");
    const Verdict v = adjudicate(req, disabled, "c0", gateway);
    bool found = false;
    for (const CandidateSet& c : req.candidates) found = found || c.label == v.chosen;
    CHECK(found);
    CHECK((v.source == VerdictSource::Bypass || v.source == VerdictSource::Fallback));
  }
}
