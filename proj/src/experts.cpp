#include "facadefixer/experts.hpp"

#include <array>
#include <charconv>

namespace facadefixer {

namespace {

constexpr std::array<std::string_view, 6> kKindNames = {
    "detector",      "crack_segmenter", "promptable_segmenter",
    "generator",     "adjudicator",     "embedder"};

}  // namespace

std::string_view expert_kind_name(ExpertKind k) {
  return kKindNames[static_cast<std::size_t>(k)];
}

ExpertKind expert_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<ExpertKind>(i);
  }
  throw ValidationError("unknown expert kind: " + std::string(name));
}

std::uint64_t ExpertDescriptor::mock_seed() const {
  if (!is_mock()) throw ValidationError("expert " + id + " is not a mock");
  const std::string_view digits = std::string_view(endpoint).substr(5);
  std::uint64_t seed = 0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size())
    throw ValidationError("bad mock seed in endpoint \"" + endpoint + "\"");
  return seed;
}

nlohmann::json descriptor_to_json(const ExpertDescriptor& d) {
  nlohmann::json j{{"id", d.id},
                   {"kind", expert_kind_name(d.kind)},
                   {"endpoint", d.endpoint},
                   {"timeout_ms", d.timeout_ms}};
  if (!d.params.is_null()) j["params"] = d.params;
  return j;
}

ExpertDescriptor descriptor_from_json(const nlohmann::json& j) {
  ExpertDescriptor d;
  d.id = j.at("id").get<std::string>();
  d.kind = expert_kind_from_name(j.at("kind").get<std::string>());
  d.endpoint = j.value("endpoint", std::string("mock:0"));
  d.timeout_ms = j.value("timeout_ms", 5000);
  if (d.timeout_ms <= 0) throw ValidationError("timeout must be positive");
  if (j.contains("params")) d.params = j.at("params");
  return d;
}

std::vector<ExpertDescriptor> parse_roster(const nlohmann::json& j) {
  std::vector<ExpertDescriptor> roster;
  for (const nlohmann::json& item : j.at("experts")) {
    roster.push_back(descriptor_from_json(item));
  }
  for (std::size_t i = 0; i < roster.size(); ++i) {
    for (std::size_t k = i + 1; k < roster.size(); ++k) {
      if (roster[i].id == roster[k].id)
        throw ValidationError("duplicate expert id: " + roster[i].id);
    }
  }
  return roster;
}

const ExpertDescriptor* find_expert(std::span<const ExpertDescriptor> roster,
                                    ExpertKind kind) {
  for (const ExpertDescriptor& d : roster) {
    if (d.kind == kind) return &d;
  }
  return nullptr;
}

std::vector<ExpertDescriptor> find_all(std::span<const ExpertDescriptor> roster,
                                       ExpertKind kind) {
  std::vector<ExpertDescriptor> out;
  for (const ExpertDescriptor& d : roster) {
    if (d.kind == kind) out.push_back(d);
  }
  return out;
}

SegmentPrompt SegmentPrompt::from_boxes(std::vector<BoundingBox> boxes) {
  SegmentPrompt p;
  p.mode = Mode::Bbox;
  p.boxes = std::move(boxes);
  return p;
}

SegmentPrompt SegmentPrompt::from_points(
    std::vector<std::pair<double, double>> points) {
  SegmentPrompt p;
  p.mode = Mode::Points;
  p.points = std::move(points);
  return p;
}

SegmentPrompt SegmentPrompt::from_text(std::string concept_text) {
  SegmentPrompt p;
  p.mode = Mode::Text;
  p.concept_text = std::move(concept_text);
  return p;
}

std::string_view prompt_mode_name(SegmentPrompt::Mode m) {
  switch (m) {
    case SegmentPrompt::Mode::Bbox:
      return "bbox";
    case SegmentPrompt::Mode::Points:
      return "points";
    case SegmentPrompt::Mode::Text:
      return "text";
  }
  return "";
}

std::vector<std::string> prompt_map(DefectCategory category) {
  switch (category) {
    case DefectCategory::Crack:
      return {"crack"};
    case DefectCategory::Spalling:
      return {"hole", "peeling", "stain"};
    case DefectCategory::RustStain:
      return {"stain"};
    case DefectCategory::DegradedPlaster:
      return {"peeling"};
    case DefectCategory::Vegetation:
      return {"plant"};
    case DefectCategory::Contaminant:
      return {"rubbish"};
  }
  throw ValidationError("unknown category");
}

}  // namespace facadefixer
