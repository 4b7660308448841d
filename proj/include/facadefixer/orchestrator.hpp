#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "facadefixer/adjudication.hpp"
#include "facadefixer/curation.hpp"
#include "facadefixer/evaluation.hpp"
#include "facadefixer/memory_bank.hpp"
#include "facadefixer/recomposition.hpp"

namespace facadefixer {

enum class Toggle { Detect, Segment, Recompose, Curate, Evaluate };
std::string_view toggle_name(Toggle t);

enum class DetectionStrategy { Union, Intersection, Adjudicated };
std::string_view detection_strategy_name(DetectionStrategy s);

enum class SegPromptPolicy { Bbox, Points, Text, Adjudicated };
std::string_view seg_prompt_policy_name(SegPromptPolicy p);

struct InstructionProfile {
  std::set<Toggle> toggles;
  std::vector<DefectCategory> categories;  // never empty after interpretation
  DetectionStrategy detection_strategy = DetectionStrategy::Adjudicated;
  SegPromptPolicy segmentation_prompt_policy = SegPromptPolicy::Adjudicated;
  std::uint64_t seed = 0;
};

/// Normalizes a raw profile document, filling defaults (all six categories,
/// adjudicated strategies, seed 0). Unknown toggles are rejected by name.
InstructionProfile interpret_profile(const nlohmann::json& raw);
nlohmann::json profile_to_json(const InstructionProfile& profile);

struct TaskNode {
  std::string id;  // one of the task kinds below; ids double as kinds
};

/// Task kinds in canonical execution order.
inline constexpr std::array<std::string_view, 9> kTaskKinds = {
    "curate", "detect",  "segment", "inpaint", "retrieve",
    "compose", "verify", "archive", "evaluate"};

struct TaskPlan {
  std::vector<TaskNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;

  bool has_node(const std::string& id) const;
  std::vector<std::string> dependencies_of(const std::string& id) const;
  nlohmann::json to_json() const;
  static TaskPlan from_json(const nlohmann::json& j);
};

/// Rule-based planner: expands toggles into the dependency-closed task DAG.
TaskPlan plan(const InstructionProfile& profile);

/// Structural validation against the dependency table: known nodes only, all
/// required nodes and edges present, acyclic.
bool validate_plan(const TaskPlan& candidate, const InstructionProfile& profile,
                   std::string* rejection = nullptr);

/// Asks an MLLM endpoint for a plan and validates it; any failure or
/// violation falls back to the rule-based plan.
TaskPlan plan_via_endpoint(const InstructionProfile& profile,
                           const ExpertDescriptor& planner,
                           const ExpertGateway& gateway);

enum class NodeStatus { Pending, Running, Done, Failed, Skipped };
std::string_view node_status_name(NodeStatus s);
NodeStatus node_status_from_name(std::string_view name);

struct ArtifactRecord {
  std::string path;  // relative to the run directory
  std::string content_hash;
};

struct NodeReport {
  std::string id;
  NodeStatus status = NodeStatus::Pending;
  std::vector<std::string> artifacts;  // artifact ids
  std::string error;
  double elapsed_ms = 0.0;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<NodeReport> nodes;
  std::map<std::string, ArtifactRecord> artifact_index;
  bool resumed = false;

  nlohmann::json to_json(bool include_timings) const;
  /// Digest over the timing-free canonical report; identical for
  /// byte-identical runs regardless of wall clock or run directory.
  std::string comparable_digest() const;
};

struct RunConfig {
  InstructionProfile profile;
  std::vector<ExpertDescriptor> experts;
  std::filesystem::path images_dir;
  std::optional<std::filesystem::path> ground_truth_dir;
  std::filesystem::path out_dir;  // run directory
  std::optional<std::filesystem::path> bank_dir;
  FusionConfig fusion;
  CurationConfig curation;
  std::vector<std::string> negative_concept_names = {"pipes", "windows",
                                                     "air conditioners"};
  RecomposeOptions recompose;
  std::function<std::int64_t()> clock = now_ms;
  /// Test hook: when set and returning true after a node completes, execution
  /// stops as if the process had been killed; a later execute() resumes from
  /// the checkpoints.
  std::function<bool(std::string_view completed_node)> interrupt_after;

  std::string digest() const;
};

/// Executes the plan with per-node checkpointing under out_dir: plan.json,
/// state.json, artifacts/, report.json. Dependency-respecting; a failed node
/// marks its transitive dependents skipped and never aborts siblings. If a
/// state.json from an earlier interrupted run exists, completed nodes are
/// restored from their checkpoints instead of re-executing.
RunReport execute(const TaskPlan& plan, const RunConfig& config,
                  const ExpertGateway& gateway, MemoryBank* bank);

}  // namespace facadefixer
