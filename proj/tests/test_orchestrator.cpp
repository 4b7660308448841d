#include "facadefixer/orchestrator.hpp"

#include <doctest.h>

#include "facadefixer/annotations.hpp"
#include "support.hpp"

using namespace facadefixer;
using nlohmann::json;

namespace {

std::vector<std::string> node_ids(const TaskPlan& p) {
  std::vector<std::string> ids;
  for (const TaskNode& n : p.nodes) ids.push_back(n.id);
  return ids;
}

RunConfig base_config(const support::ScopedTempDir& tmp, const json& profile_doc) {
  RunConfig config;
  config.profile = interpret_profile(profile_doc);
  config.experts = support::mock_roster(8);
  config.images_dir = tmp.path() / "images";
  config.out_dir = tmp.path() / "run";
  config.curation.min_side = 16;  // fixtures are small
  config.curation.blur_min_variance = 1.0;
  config.clock = [] { return std::int64_t{1700000000000}; };
  return config;
}

}  // namespace

TEST_CASE("interpret_profile") {
  SUBCASE("defaults") {
    const InstructionProfile p = interpret_profile(json{{"toggles", {"detect"}}});
    CHECK(p.toggles == std::set<Toggle>{Toggle::Detect});
    CHECK(p.categories.size() == 6);
    CHECK(p.detection_strategy == DetectionStrategy::Adjudicated);
    CHECK(p.segmentation_prompt_policy == SegPromptPolicy::Adjudicated);
    CHECK(p.seed == 0);
  }
  SUBCASE("unknown toggle is rejected by name") {
    CHECK_THROWS_WITH_AS(interpret_profile(json{{"toggles", {"fly_drone"}}}),
                         doctest::Contains("fly_drone"), ValidationError);
  }
  SUBCASE("empty or missing toggles are rejected") {
    CHECK_THROWS_AS(interpret_profile(json::object()), ValidationError);
    CHECK_THROWS_AS(interpret_profile(json{{"toggles", json::array()}}),
                    ValidationError);
  }
  SUBCASE("explicit fields parse") {
    const InstructionProfile p = interpret_profile(
        json{{"toggles", {"detect", "segment"}},
             {"categories", {"crack", "rust_stain"}},
             {"detection_strategy", "union"},
             {"segmentation_prompt_policy", "bbox"},
             {"seed", 7}});
    CHECK(p.toggles.size() == 2);
    CHECK(p.categories ==
          std::vector<DefectCategory>{DefectCategory::Crack, DefectCategory::RustStain});
    CHECK(p.detection_strategy == DetectionStrategy::Union);
    CHECK(p.segmentation_prompt_policy == SegPromptPolicy::Bbox);
    CHECK(p.seed == 7);
  }
}

TEST_CASE("plan expands toggles into the dependency-closed DAG") {
  SUBCASE("detect alone") {
    const TaskPlan p = plan(interpret_profile(json{{"toggles", {"detect"}}}));
    CHECK(node_ids(p) == std::vector<std::string>{"detect"});
    CHECK(p.edges.empty());
  }
  SUBCASE("segment pulls in detect") {
    const TaskPlan p = plan(interpret_profile(json{{"toggles", {"segment"}}}));
    CHECK(node_ids(p) == std::vector<std::string>{"detect", "segment"});
    REQUIRE(p.edges.size() == 1);
    CHECK(p.edges[0] == std::make_pair(std::string("detect"), std::string("segment")));
  }
  SUBCASE("recompose expands to the full chain") {
    const TaskPlan p = plan(interpret_profile(json{{"toggles", {"recompose"}}}));
    CHECK(node_ids(p) == std::vector<std::string>{"detect", "segment", "inpaint",
                                                  "retrieve", "compose", "verify",
                                                  "archive"});
    // Chain edges, verified against a topological sort of the declared table.
    std::string why;
    CHECK(validate_plan(p, interpret_profile(json{{"toggles", {"recompose"}}}), &why));
  }
  SUBCASE("curate is independent; evaluate depends on what is toggled") {
    const TaskPlan p = plan(
        interpret_profile(json{{"toggles", {"curate", "detect", "evaluate"}}}));
    CHECK(node_ids(p) == std::vector<std::string>{"curate", "detect", "evaluate"});
    CHECK(p.dependencies_of("curate").empty());
    CHECK(p.dependencies_of("evaluate") == std::vector<std::string>{"detect"});
  }
  SUBCASE("every generated plan validates") {
    for (const char* toggle : {"detect", "segment", "recompose", "curate", "evaluate"}) {
      const InstructionProfile profile =
          interpret_profile(json{{"toggles", {toggle}}});
      std::string why;
      CHECK_MESSAGE(validate_plan(plan(profile), profile, &why), why);
    }
  }
}

TEST_CASE("validate_plan rejects structural violations") {
  const InstructionProfile profile =
      interpret_profile(json{{"toggles", {"segment"}}});
  std::string why;
  SUBCASE("missing required node") {
    TaskPlan p;
    p.nodes = {{"segment"}};
    CHECK_FALSE(validate_plan(p, profile, &why));
    CHECK(why.find("detect") != std::string::npos);
  }
  SUBCASE("missing required edge") {
    TaskPlan p;
    p.nodes = {{"detect"}, {"segment"}};
    CHECK_FALSE(validate_plan(p, profile, &why));
    CHECK(why.find("edge") != std::string::npos);
  }
  SUBCASE("unknown and unrequested nodes") {
    TaskPlan p = plan(profile);
    p.nodes.push_back({"paint_the_wall"});
    CHECK_FALSE(validate_plan(p, profile, &why));
    TaskPlan q = plan(profile);
    q.nodes.push_back({"curate"});
    CHECK_FALSE(validate_plan(q, profile, &why));
  }
  SUBCASE("cycles are rejected") {
    TaskPlan p = plan(profile);
    p.edges.emplace_back("segment", "detect");
    CHECK_FALSE(validate_plan(p, profile, &why));
    CHECK(why.find("cycle") != std::string::npos);
  }
}

TEST_CASE("plan_via_endpoint") {
  const InstructionProfile profile =
      interpret_profile(json{{"toggles", {"segment"}}});
  const ExpertGateway gateway;
  SUBCASE("mock planner returns the rule-based plan") {
    ExpertDescriptor d;
    d.id = "planner";
    d.kind = ExpertKind::Adjudicator;
    d.endpoint = "mock:1";
    const TaskPlan p = plan_via_endpoint(profile, d, gateway);
    CHECK(node_ids(p) == node_ids(plan(profile)));
  }
  SUBCASE("unreachable endpoint falls back") {
    ExpertDescriptor d;
    d.id = "planner";
    d.kind = ExpertKind::Adjudicator;
    d.endpoint = "http://127.0.0.1:9/plan";
    d.timeout_ms = 50;
    const TaskPlan p = plan_via_endpoint(profile, d, gateway);
    CHECK(node_ids(p) == node_ids(plan(profile)));
  }
}

TEST_CASE("execute: determinism, failure propagation, resume") {
  support::ScopedTempDir tmp("exec");
  support::write_fixture_images(tmp.path() / "images", 4, 900, 64, 64);

  const json profile_doc{{"toggles", {"detect", "segment", "recompose", "curate"}},
                         {"seed", 5}};

  SUBCASE("two identical runs produce identical comparable digests") {
    RunConfig a = base_config(tmp, profile_doc);
    a.out_dir = tmp.path() / "run-a";
    a.bank_dir = tmp.path() / "bank-a";
    MemoryBank bank_a = support::seeded_bank(3, 8);
    const ExpertGateway gateway;
    const RunReport ra = execute(plan(a.profile), a, gateway, &bank_a);

    RunConfig b = base_config(tmp, profile_doc);
    b.out_dir = tmp.path() / "run-b";
    b.bank_dir = tmp.path() / "bank-b";
    MemoryBank bank_b = support::seeded_bank(3, 8);
    const RunReport rb = execute(plan(b.profile), b, gateway, &bank_b);

    for (const NodeReport& n : ra.nodes) {
      CHECK(n.status == NodeStatus::Done);
    }
    CHECK(ra.comparable_digest() == rb.comparable_digest());
    CHECK(bank_a.size() == bank_b.size());
    CHECK(std::filesystem::exists(a.out_dir / "plan.json"));
    CHECK(std::filesystem::exists(a.out_dir / "state.json"));
    CHECK(std::filesystem::exists(a.out_dir / "report.json"));
  }

  SUBCASE("failed detect skips the chain but curate completes") {
    RunConfig config = base_config(tmp, profile_doc);
    config.out_dir = tmp.path() / "run-fail";
    // Roster without detectors: detect must fail, curate must not care.
    std::vector<ExpertDescriptor> no_detectors;
    for (const ExpertDescriptor& d : config.experts) {
      if (d.kind != ExpertKind::Detector) no_detectors.push_back(d);
    }
    config.experts = no_detectors;
    MemoryBank bank = support::seeded_bank(3, 8);
    const ExpertGateway gateway;
    const RunReport report = execute(plan(config.profile), config, gateway, &bank);
    std::map<std::string, NodeStatus> status;
    for (const NodeReport& n : report.nodes) status[n.id] = n.status;
    CHECK(status["detect"] == NodeStatus::Failed);
    CHECK(status["segment"] == NodeStatus::Skipped);
    CHECK(status["archive"] == NodeStatus::Skipped);
    CHECK(status["curate"] == NodeStatus::Done);
  }

  SUBCASE("kill-and-resume equals the uninterrupted run") {
    const ExpertGateway gateway;

    RunConfig full = base_config(tmp, profile_doc);
    full.out_dir = tmp.path() / "run-full";
    full.bank_dir = tmp.path() / "bank-full";
    MemoryBank bank_full = support::seeded_bank(3, 8);
    const RunReport uninterrupted =
        execute(plan(full.profile), full, gateway, &bank_full);

    RunConfig cut = base_config(tmp, profile_doc);
    cut.out_dir = tmp.path() / "run-cut";
    cut.bank_dir = tmp.path() / "bank-cut";
    MemoryBank bank_cut = support::seeded_bank(3, 8);
    int completed = 0;
    cut.interrupt_after = [&](std::string_view) { return ++completed == 3; };
    const RunReport partial = execute(plan(cut.profile), cut, gateway, &bank_cut);
    CHECK(partial.comparable_digest() != uninterrupted.comparable_digest());

    RunConfig resume = base_config(tmp, profile_doc);
    resume.out_dir = tmp.path() / "run-cut";  // same run directory
    resume.bank_dir = tmp.path() / "bank-cut";
    const RunReport resumed = execute(plan(resume.profile), resume, gateway, &bank_cut);
    CHECK(resumed.resumed);
    CHECK(resumed.comparable_digest() == uninterrupted.comparable_digest());
    CHECK(bank_cut.size() == bank_full.size());
  }

  SUBCASE("resume under a different configuration is refused") {
    RunConfig config = base_config(tmp, profile_doc);
    config.out_dir = tmp.path() / "run-mismatch";
    MemoryBank bank = support::seeded_bank(3, 8);
    const ExpertGateway gateway;
    execute(plan(config.profile), config, gateway, &bank);

    RunConfig other = base_config(tmp, profile_doc);
    other.out_dir = tmp.path() / "run-mismatch";
    other.profile.seed = 999;  // different config digest
    CHECK_THROWS_AS(execute(plan(other.profile), other, gateway, &bank), IoError);
  }
}

TEST_CASE("execute: evaluate node consumes ground truth") {
  support::ScopedTempDir tmp("eval");
  support::write_fixture_images(tmp.path() / "images", 3, 700, 64, 64,
                                &(tmp.path() / "gt"));
  const std::filesystem::path gt_dir = tmp.path() / "gt";

  RunConfig config = base_config(
      tmp, json{{"toggles", {"detect", "evaluate"}}, {"seed", 3}});
  config.ground_truth_dir = gt_dir;
  config.out_dir = tmp.path() / "run";
  const ExpertGateway gateway;
  const RunReport report = execute(plan(config.profile), config, gateway, nullptr);

  std::map<std::string, NodeStatus> status;
  for (const NodeReport& n : report.nodes) status[n.id] = n.status;
  REQUIRE(status["evaluate"] == NodeStatus::Done);

  // Metrics artifact exists and carries the exact table columns.
  const auto it = report.artifact_index.find("evaluate/metrics");
  REQUIRE(it != report.artifact_index.end());
  const json metrics = read_json_file(config.out_dir / it->second.path);
  REQUIRE(metrics.contains("detection"));
  for (const char* column : {"Precision", "Recall", "mAP50", "mAP50:95", "F1-score"}) {
    CHECK(metrics.at("detection").contains(column));
  }
  // Mock experts jitter the scene the ground truth was derived from, so the
  // pipeline should find most of it.
  CHECK(metrics.at("detection").at("Recall").get<double>() > 0.5);
}

TEST_CASE("annotation sidecar round trip") {
  support::ScopedTempDir tmp("ann");
  AnnotatedImage ann;
  ann.image = ImageRef{"img7", "", 32, 24, {}};
  AnnotatedImage::Instance inst;
  inst.bbox = {4, 5, 10, 8};
  inst.category = DefectCategory::RustStain;
  inst.confidence = 0.625;
  BinaryMask m = BinaryMask::zeros(32, 24);
  m.set(6, 6, true);
  inst.mask = m;
  ann.instances.push_back(inst);

  write_annotation(ann, tmp.path() / "img7.json");
  const AnnotatedImage back = read_annotation(tmp.path() / "img7.json");
  CHECK(back.image.id == "img7");
  REQUIRE(back.instances.size() == 1);
  CHECK(back.instances[0].bbox == ann.instances[0].bbox);
  CHECK(back.instances[0].category == DefectCategory::RustStain);
  CHECK(back.instances[0].confidence == 0.625);
  CHECK(*back.instances[0].mask == m);

  const auto loaded = load_annotation_dir(tmp.path());
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].image.id == "img7");
}
