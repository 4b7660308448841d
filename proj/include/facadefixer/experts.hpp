#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facadefixer/geometry.hpp"

namespace facadefixer {

enum class ExpertKind {
  Detector,
  CrackSegmenter,
  PromptableSegmenter,
  Generator,
  Adjudicator,
  Embedder,
};

std::string_view expert_kind_name(ExpertKind k);
ExpertKind expert_kind_from_name(std::string_view name);

/// Where and how to reach one expert. Endpoints take three forms:
///   "http://host:port/path"  — a live wire endpoint
///   "mock:<seed>"            — the built-in deterministic mock
///   "disabled"               — never called; callers take their fallback path
struct ExpertDescriptor {
  std::string id;
  ExpertKind kind = ExpertKind::Detector;
  std::string endpoint = "mock:0";
  int timeout_ms = 5000;
  nlohmann::json params;  // opaque knobs, e.g. generator parameters

  bool is_mock() const { return endpoint.rfind("mock:", 0) == 0; }
  bool is_disabled() const { return endpoint.empty() || endpoint == "disabled"; }
  std::uint64_t mock_seed() const;
};

nlohmann::json descriptor_to_json(const ExpertDescriptor& d);
ExpertDescriptor descriptor_from_json(const nlohmann::json& j);

/// Parses the experts configuration file: {"experts": [descriptor...]}.
std::vector<ExpertDescriptor> parse_roster(const nlohmann::json& j);

const ExpertDescriptor* find_expert(std::span<const ExpertDescriptor> roster,
                                    ExpertKind kind);
std::vector<ExpertDescriptor> find_all(std::span<const ExpertDescriptor> roster,
                                       ExpertKind kind);

struct SegmentPrompt {
  enum class Mode { Bbox, Points, Text };
  Mode mode = Mode::Bbox;
  std::vector<BoundingBox> boxes;
  std::vector<std::pair<double, double>> points;
  std::string concept_text;

  static SegmentPrompt from_boxes(std::vector<BoundingBox> boxes);
  static SegmentPrompt from_points(std::vector<std::pair<double, double>> points);
  static SegmentPrompt from_text(std::string concept_text);
};

std::string_view prompt_mode_name(SegmentPrompt::Mode m);

/// Maps a defect category onto the visual concept words used to prompt
/// promptable segmenters. Cracks route to dedicated crack experts, so their
/// mapping is the literal class word.
std::vector<std::string> prompt_map(DefectCategory category);

}  // namespace facadefixer
