#include "facadefixer/orchestrator.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>

#include "facadefixer/annotations.hpp"
#include "facadefixer/fusion.hpp"
#include "facadefixer/rng.hpp"

namespace facadefixer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kToggleNames = {
    "detect", "segment", "recompose", "curate", "evaluate"};
constexpr std::array<std::string_view, 3> kStrategyNames = {"union", "intersection",
                                                            "adjudicated"};
constexpr std::array<std::string_view, 4> kPolicyNames = {"bbox", "points", "text",
                                                          "adjudicated"};
constexpr std::array<std::string_view, 5> kStatusNames = {"pending", "running",
                                                          "done", "failed", "skipped"};

}  // namespace

std::string_view toggle_name(Toggle t) {
  return kToggleNames[static_cast<std::size_t>(t)];
}

std::string_view detection_strategy_name(DetectionStrategy s) {
  return kStrategyNames[static_cast<std::size_t>(s)];
}

std::string_view seg_prompt_policy_name(SegPromptPolicy p) {
  return kPolicyNames[static_cast<std::size_t>(p)];
}

std::string_view node_status_name(NodeStatus s) {
  return kStatusNames[static_cast<std::size_t>(s)];
}

NodeStatus node_status_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kStatusNames.size(); ++i) {
    if (kStatusNames[i] == name) return static_cast<NodeStatus>(i);
  }
  throw ValidationError("unknown node status: " + std::string(name));
}

InstructionProfile interpret_profile(const json& raw) {
  if (!raw.is_object()) throw ValidationError("profile must be a JSON object");
  InstructionProfile profile;
  if (!raw.contains("toggles") || !raw.at("toggles").is_array() ||
      raw.at("toggles").empty())
    throw ValidationError("profile has no toggles");
  for (const json& jt : raw.at("toggles")) {
    const std::string name = jt.get<std::string>();
    bool known = false;
    for (std::size_t i = 0; i < kToggleNames.size(); ++i) {
      if (kToggleNames[i] == name) {
        profile.toggles.insert(static_cast<Toggle>(i));
        known = true;
        break;
      }
    }
    if (!known) throw ValidationError("unknown toggle: " + name);
  }
  if (raw.contains("categories")) {
    for (const json& jc : raw.at("categories"))
      profile.categories.push_back(category_from_name(jc.get<std::string>()));
    if (profile.categories.empty())
      throw ValidationError("profile names an empty category list");
  } else {
    profile.categories.assign(kAllCategories.begin(), kAllCategories.end());
  }
  if (raw.contains("detection_strategy")) {
    const std::string s = raw.at("detection_strategy").get<std::string>();
    bool known = false;
    for (std::size_t i = 0; i < kStrategyNames.size(); ++i) {
      if (kStrategyNames[i] == s) {
        profile.detection_strategy = static_cast<DetectionStrategy>(i);
        known = true;
      }
    }
    if (!known) throw ValidationError("unknown detection strategy: " + s);
  }
  if (raw.contains("segmentation_prompt_policy")) {
    const std::string s = raw.at("segmentation_prompt_policy").get<std::string>();
    bool known = false;
    for (std::size_t i = 0; i < kPolicyNames.size(); ++i) {
      if (kPolicyNames[i] == s) {
        profile.segmentation_prompt_policy = static_cast<SegPromptPolicy>(i);
        known = true;
      }
    }
    if (!known) throw ValidationError("unknown segmentation prompt policy: " + s);
  }
  profile.seed = raw.value("seed", std::uint64_t{0});
  return profile;
}

json profile_to_json(const InstructionProfile& profile) {
  json toggles = json::array();
  for (Toggle t : profile.toggles) toggles.push_back(toggle_name(t));
  json categories = json::array();
  for (DefectCategory c : profile.categories) categories.push_back(category_name(c));
  return json{{"toggles", toggles},
              {"categories", categories},
              {"detection_strategy",
               detection_strategy_name(profile.detection_strategy)},
              {"segmentation_prompt_policy",
               seg_prompt_policy_name(profile.segmentation_prompt_policy)},
              {"seed", profile.seed}};
}

bool TaskPlan::has_node(const std::string& id) const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [&](const TaskNode& n) { return n.id == id; });
}

std::vector<std::string> TaskPlan::dependencies_of(const std::string& id) const {
  std::vector<std::string> deps;
  for (const auto& [from, to] : edges) {
    if (to == id) deps.push_back(from);
  }
  std::sort(deps.begin(), deps.end());
  return deps;
}

json TaskPlan::to_json() const {
  json jn = json::array();
  for (const TaskNode& n : nodes) jn.push_back(n.id);
  json je = json::array();
  for (const auto& [from, to] : edges) je.push_back(json::array({from, to}));
  return json{{"nodes", jn}, {"edges", je}};
}

TaskPlan TaskPlan::from_json(const json& j) {
  TaskPlan p;
  for (const json& jn : j.at("nodes")) {
    if (jn.is_string()) {
      p.nodes.push_back({jn.get<std::string>()});
    } else {
      p.nodes.push_back({jn.at("id").get<std::string>()});
    }
  }
  for (const json& je : j.at("edges")) {
    if (!je.is_array() || je.size() != 2)
      throw ValidationError("plan edge must be a [from, to] pair");
    p.edges.emplace_back(je[0].get<std::string>(), je[1].get<std::string>());
  }
  return p;
}

TaskPlan plan(const InstructionProfile& profile) {
  if (profile.toggles.empty()) throw ValidationError("profile has no toggles");
  const bool detect = profile.toggles.count(Toggle::Detect) ||
                      profile.toggles.count(Toggle::Segment) ||
                      profile.toggles.count(Toggle::Recompose) ||
                      profile.toggles.count(Toggle::Evaluate);
  const bool segment = profile.toggles.count(Toggle::Segment) ||
                       profile.toggles.count(Toggle::Recompose);
  const bool recompose = profile.toggles.count(Toggle::Recompose) > 0;
  const bool curate = profile.toggles.count(Toggle::Curate) > 0;
  const bool evaluate = profile.toggles.count(Toggle::Evaluate) > 0;

  std::set<std::string> wanted;
  if (curate) wanted.insert("curate");
  if (detect) wanted.insert("detect");
  if (segment) wanted.insert("segment");
  if (recompose)
    wanted.insert({"inpaint", "retrieve", "compose", "verify", "archive"});
  if (evaluate) wanted.insert("evaluate");

  TaskPlan p;
  for (std::string_view kind : kTaskKinds) {
    if (wanted.count(std::string(kind))) p.nodes.push_back({std::string(kind)});
  }
  if (segment) p.edges.emplace_back("detect", "segment");
  if (recompose) {
    p.edges.emplace_back("segment", "inpaint");
    p.edges.emplace_back("inpaint", "retrieve");
    p.edges.emplace_back("retrieve", "compose");
    p.edges.emplace_back("compose", "verify");
    p.edges.emplace_back("verify", "archive");
  }
  if (evaluate) {
    p.edges.emplace_back("detect", "evaluate");
    if (segment) p.edges.emplace_back("segment", "evaluate");
  }
  return p;
}

bool validate_plan(const TaskPlan& candidate, const InstructionProfile& profile,
                   std::string* rejection) {
  const auto reject = [&](const std::string& why) {
    if (rejection) *rejection = why;
    return false;
  };

  std::set<std::string> ids;
  for (const TaskNode& n : candidate.nodes) {
    if (std::find(kTaskKinds.begin(), kTaskKinds.end(), n.id) == kTaskKinds.end())
      return reject("unknown task kind: " + n.id);
    if (!ids.insert(n.id).second) return reject("duplicate node: " + n.id);
  }

  const TaskPlan required = plan(profile);
  for (const TaskNode& n : required.nodes) {
    if (!ids.count(n.id)) return reject("missing required node: " + n.id);
  }
  for (const TaskNode& n : candidate.nodes) {
    if (!required.has_node(n.id))
      return reject("node not implied by the profile: " + n.id);
  }
  for (const auto& [from, to] : required.edges) {
    if (std::find(candidate.edges.begin(), candidate.edges.end(),
                  std::make_pair(from, to)) == candidate.edges.end())
      return reject("missing required edge: " + from + " -> " + to);
  }
  for (const auto& [from, to] : candidate.edges) {
    if (!ids.count(from) || !ids.count(to))
      return reject("edge references a missing node: " + from + " -> " + to);
  }

  // Kahn's algorithm for the cycle check.
  std::map<std::string, int> indegree;
  for (const std::string& id : ids) indegree[id] = 0;
  for (const auto& [from, to] : candidate.edges) ++indegree[to];
  std::vector<std::string> queue;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) queue.push_back(id);
  }
  std::size_t visited = 0;
  while (!queue.empty()) {
    const std::string id = queue.back();
    queue.pop_back();
    ++visited;
    for (const auto& [from, to] : candidate.edges) {
      if (from == id && --indegree[to] == 0) queue.push_back(to);
    }
  }
  if (visited != ids.size()) return reject("plan contains a cycle");
  return true;
}

TaskPlan plan_via_endpoint(const InstructionProfile& profile,
                           const ExpertDescriptor& planner,
                           const ExpertGateway& gateway) {
  if (planner.is_disabled()) return plan(profile);
  if (planner.is_mock()) return plan(profile);  // the mock planner is the rule base
  try {
    const json body{{"task", "plan"}, {"profile", profile_to_json(profile)}};
    const std::string raw = gateway.call_adjudicator(body, planner);
    TaskPlan candidate = TaskPlan::from_json(json::parse(raw));
    std::string why;
    if (!validate_plan(candidate, profile, &why)) return plan(profile);
    return candidate;
  } catch (const std::exception&) {
    return plan(profile);
  }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

struct LoadedImage {
  ImageRef ref;
  RasterImage pixels;
};

struct RunContext {
  std::vector<LoadedImage> images;
  std::map<std::string, std::vector<Detection>> union_detections;
  std::map<std::string, std::vector<Detection>> intersection_detections;
  std::map<std::string, std::vector<Detection>> selected_detections;
  std::map<std::string, std::map<DefectCategory, BinaryMask>> masks;
  std::map<std::string, BackgroundTemplate> backgrounds;
  std::map<std::string, std::map<DefectCategory, std::string>> retrievals;
  // Samples keyed by image id, each with its category tag.
  std::map<std::string, std::vector<std::pair<DefectCategory, AugmentedSample>>>
      samples;
  std::map<std::string, std::vector<bool>> consistent;
};

struct PendingArtifact {
  std::string id;
  std::string bytes;
  std::string ext;
};

struct NodeOutput {
  std::vector<PendingArtifact> artifacts;
};

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

json detections_to_annotation(const ImageRef& ref,
                              const std::vector<Detection>& dets) {
  AnnotatedImage ann;
  ann.image = ref;
  for (const Detection& d : dets) {
    AnnotatedImage::Instance inst;
    inst.bbox = d.box;
    inst.category = d.category;
    inst.confidence = d.confidence;
    ann.instances.push_back(inst);
  }
  return annotation_to_json(ann);
}

std::vector<Detection> detections_from_annotation(const json& j) {
  const AnnotatedImage ann = annotation_from_json(j);
  std::vector<Detection> dets;
  for (const auto& inst : ann.instances) {
    Detection d;
    d.box = inst.bbox;
    d.category = inst.category;
    d.confidence = inst.confidence.value_or(1.0);
    d.source = "restored";
    dets.push_back(d);
  }
  return dets;
}

std::string embedding_to_b64(const Eigen::VectorXf& e) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(e.size()) * 4);
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(e[i]);
    bytes += static_cast<char>(bits & 0xff);
    bytes += static_cast<char>((bits >> 8) & 0xff);
    bytes += static_cast<char>((bits >> 16) & 0xff);
    bytes += static_cast<char>((bits >> 24) & 0xff);
  }
  return encode_base64(bytes);
}

Eigen::VectorXf embedding_from_b64(const std::string& b64) {
  const std::string bytes = decode_base64(b64);
  if (bytes.size() % 4 != 0) throw IoError("embedding blob not float-aligned");
  Eigen::VectorXf e(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * 4;
    const std::uint32_t bits =
        static_cast<std::uint8_t>(bytes[o]) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 1])) << 8) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 2])) << 16) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 3])) << 24);
    e[i] = std::bit_cast<float>(bits);
  }
  return e;
}

BoundingBox margin_region(int width, int height) {
  const double mx = std::ceil(0.05 * width);
  const double my = std::ceil(0.05 * height);
  return {mx, my, width - 2 * mx, height - 2 * my};
}

class Executor {
 public:
  Executor(const TaskPlan& plan, const RunConfig& config,
           const ExpertGateway& gateway, MemoryBank* bank)
      : plan_(plan), config_(config), gateway_(gateway), bank_(bank) {}

  RunReport run();

 private:
  // Node bodies.
  NodeOutput run_node(const std::string& id);
  NodeOutput node_detect();
  NodeOutput node_segment();
  NodeOutput node_inpaint();
  NodeOutput node_retrieve();
  NodeOutput node_compose();
  NodeOutput node_verify();
  NodeOutput node_archive();
  NodeOutput node_evaluate();
  NodeOutput node_curate();

  // Checkpoint restore for completed nodes.
  void restore_node(const std::string& id);

  void load_images();
  const ExpertDescriptor& require_expert(ExpertKind kind, const char* why);
  ExpertDescriptor adjudicator_or_disabled() const;
  std::vector<Detection> selected_of(const std::string& image_id) const;

  void commit_artifact(NodeReport& report, const PendingArtifact& artifact);
  std::string artifact_bytes(const std::string& artifact_id) const;
  void write_state();

  const TaskPlan& plan_;
  const RunConfig& config_;
  const ExpertGateway& gateway_;
  MemoryBank* bank_;

  RunContext ctx_;
  std::map<std::string, NodeReport> reports_;
  std::map<std::string, ArtifactRecord> index_;
  bool images_loaded_ = false;
  bool resumed_ = false;
};

void Executor::load_images() {
  if (images_loaded_) return;
  images_loaded_ = true;
  if (!fs::is_directory(config_.images_dir))
    throw IoError("images directory not found: " + config_.images_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(config_.images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    LoadedImage img;
    img.pixels = read_ppm(f);
    img.ref = make_ref(img.pixels, f.stem().string(), f.filename().string());
    ctx_.images.push_back(std::move(img));
  }
  if (ctx_.images.empty())
    throw IoError("no .ppm images under " + config_.images_dir.string());
}

const ExpertDescriptor& Executor::require_expert(ExpertKind kind, const char* why) {
  const ExpertDescriptor* d = find_expert(config_.experts, kind);
  if (!d)
    throw ValidationError(std::string("no ") +
                          std::string(expert_kind_name(kind)) +
                          " in the roster (" + why + ")");
  return *d;
}

ExpertDescriptor Executor::adjudicator_or_disabled() const {
  const ExpertDescriptor* d = find_expert(config_.experts, ExpertKind::Adjudicator);
  if (d) return *d;
  ExpertDescriptor disabled;
  disabled.id = "adjudicator";
  disabled.kind = ExpertKind::Adjudicator;
  disabled.endpoint = "disabled";
  return disabled;
}

std::vector<Detection> Executor::selected_of(const std::string& image_id) const {
  const auto it = ctx_.selected_detections.find(image_id);
  return it == ctx_.selected_detections.end() ? std::vector<Detection>{}
                                              : it->second;
}

NodeOutput Executor::node_detect() {
  load_images();
  const std::vector<ExpertDescriptor> detectors =
      find_all(config_.experts, ExpertKind::Detector);
  if (detectors.empty())
    throw ValidationError("no detector in the roster (detect node)");

  NodeOutput out;
  for (const LoadedImage& img : ctx_.images) {
    std::vector<ExpertOutput> outputs;
    for (const ExpertDescriptor& d : detectors)
      outputs.push_back(gateway_.call_detector(img.ref, d));

    const std::vector<Detection> u = fuse_union(outputs, config_.fusion);
    const std::vector<Detection> inter = fuse_intersection(outputs, config_.fusion);

    std::vector<Detection> selected;
    switch (config_.profile.detection_strategy) {
      case DetectionStrategy::Union:
        selected = u;
        break;
      case DetectionStrategy::Intersection:
        selected = inter;
        break;
      case DetectionStrategy::Adjudicated: {
        std::vector<CandidateSet> candidates;
        candidates.push_back({"union", u});
        candidates.push_back({"intersection", inter});
        const AdjudicationRequest request = build_request(
            img.ref, std::move(candidates),
            "Select the candidate set that best localizes facade defects.");
        const Verdict verdict = adjudicate(request, adjudicator_or_disabled(),
                                           "intersection", gateway_);
        selected = verdict.chosen == "union" ? u : inter;
        break;
      }
    }

    ctx_.union_detections[img.ref.id] = u;
    ctx_.intersection_detections[img.ref.id] = inter;
    ctx_.selected_detections[img.ref.id] = selected;

    out.artifacts.push_back({"detect/" + img.ref.id + "/union",
                             detections_to_annotation(img.ref, u).dump(2), "json"});
    out.artifacts.push_back({"detect/" + img.ref.id + "/intersection",
                             detections_to_annotation(img.ref, inter).dump(2),
                             "json"});
    out.artifacts.push_back({"detect/" + img.ref.id + "/selected",
                             detections_to_annotation(img.ref, selected).dump(2),
                             "json"});
  }
  return out;
}

NodeOutput Executor::node_segment() {
  load_images();
  NodeOutput out;
  const bool want_crack =
      std::find(config_.profile.categories.begin(), config_.profile.categories.end(),
                DefectCategory::Crack) != config_.profile.categories.end();
  const bool want_noncrack =
      std::any_of(config_.profile.categories.begin(), config_.profile.categories.end(),
                  [](DefectCategory c) { return c != DefectCategory::Crack; });

  std::vector<ExpertDescriptor> crack_experts =
      find_all(config_.experts, ExpertKind::CrackSegmenter);
  if (want_crack && crack_experts.empty())
    throw ValidationError("no crack_segmenter in the roster (segment node)");
  const ExpertDescriptor* promptable =
      find_expert(config_.experts, ExpertKind::PromptableSegmenter);
  if (want_noncrack && promptable == nullptr)
    throw ValidationError("no promptable_segmenter in the roster (segment node)");

  for (const LoadedImage& img : ctx_.images) {
    const std::vector<Detection> selected = selected_of(img.ref.id);
    auto& per_class = ctx_.masks[img.ref.id];
    AnnotatedImage ann;
    ann.image = img.ref;

    for (DefectCategory category : config_.profile.categories) {
      std::vector<BoundingBox> anchors;
      for (const Detection& d : selected) {
        if (d.category == category) anchors.push_back(d.box);
      }
      BinaryMask mask = BinaryMask::zeros(img.ref.width, img.ref.height);
      if (!anchors.empty()) {
        if (category == DefectCategory::Crack) {
          std::vector<ExpertOutput> crack_outputs;
          for (const ExpertDescriptor& d : crack_experts) {
            crack_outputs.push_back(ExpertOutput::from_mask(
                d.id, img.ref.id,
                gateway_.call_segmenter(img.ref, SegmentPrompt::from_boxes(anchors),
                                        d)));
          }
          mask = clip_mask_to_boxes(crack_mask_union(crack_outputs), anchors);
        } else {
          const auto masked_prompt = [&](SegPromptPolicy policy) -> BinaryMask {
            switch (policy) {
              case SegPromptPolicy::Bbox:
                return clip_mask_to_boxes(
                    gateway_.call_segmenter(
                        img.ref, SegmentPrompt::from_boxes(anchors), *promptable),
                    anchors);
              case SegPromptPolicy::Points: {
                std::vector<std::pair<double, double>> centers;
                for (const BoundingBox& b : anchors)
                  centers.emplace_back(b.x + b.w / 2, b.y + b.h / 2);
                return clip_mask_to_boxes(
                    gateway_.call_segmenter(
                        img.ref, SegmentPrompt::from_points(centers), *promptable),
                    anchors);
              }
              case SegPromptPolicy::Text: {
                std::vector<BinaryMask> concept_masks;
                for (const std::string& concept_text : prompt_map(category)) {
                  concept_masks.push_back(gateway_.call_segmenter(
                      img.ref, SegmentPrompt::from_text(concept_text), *promptable));
                }
                return clip_mask_to_boxes(mask_union(concept_masks), anchors);
              }
              case SegPromptPolicy::Adjudicated:
                throw ValidationError("nested adjudication");
            }
            throw ValidationError("unknown prompt policy");
          };

          if (config_.profile.segmentation_prompt_policy ==
              SegPromptPolicy::Adjudicated) {
            std::vector<CandidateSet> candidates;
            candidates.push_back({"bbox-prompt", masked_prompt(SegPromptPolicy::Bbox)});
            candidates.push_back(
                {"points-prompt", masked_prompt(SegPromptPolicy::Points)});
            candidates.push_back({"text-prompt", masked_prompt(SegPromptPolicy::Text)});
            const AdjudicationRequest request = build_request(
                img.ref, candidates,
                "Select the mask that best segments " +
                    std::string(category_label(category)) + " instances.");
            const Verdict verdict = adjudicate(request, adjudicator_or_disabled(),
                                               "bbox-prompt", gateway_);
            for (const CandidateSet& c : request.candidates) {
              if (c.label == verdict.chosen) mask = c.mask();
            }
          } else {
            mask = masked_prompt(config_.profile.segmentation_prompt_policy);
          }
        }
      }
      per_class[category] = mask;
      if (!mask.empty()) {
        AnnotatedImage::Instance inst;
        inst.bbox = *mask_tight_bbox(mask);
        inst.category = category;
        inst.mask = mask;
        ann.instances.push_back(std::move(inst));
      }
    }
    out.artifacts.push_back(
        {"segment/" + img.ref.id, annotation_to_json(ann).dump(2), "json"});
  }
  return out;
}

NodeOutput Executor::node_inpaint() {
  load_images();
  const ExpertDescriptor& generator =
      require_expert(ExpertKind::Generator, "inpaint node");
  const ExpertDescriptor& embedder =
      require_expert(ExpertKind::Embedder, "inpaint node");

  NodeOutput out;
  for (const LoadedImage& img : ctx_.images) {
    const auto it = ctx_.masks.find(img.ref.id);
    std::vector<BinaryMask> instance_masks;
    if (it != ctx_.masks.end()) {
      for (const auto& [category, mask] : it->second) {
        if (!mask.empty()) instance_masks.push_back(mask);
      }
    }
    if (instance_masks.empty()) continue;  // nothing to decouple on this frame

    const InpaintJob job =
        build_inpaint_job(img.ref, img.pixels, selected_of(img.ref.id),
                          instance_masks, config_.recompose.dilation_radius);
    BackgroundTemplate bg = decouple(job, generator, gateway_);
    bg.embedding = gateway_.embed_image(bg.image_pixels, embedder);

    out.artifacts.push_back({"inpaint/" + img.ref.id + "/image",
                             serialize_ppm(bg.image_pixels), "ppm"});
    const json meta{{"id", bg.id},
                    {"image_id", img.ref.id},
                    {"provenance", provenance_name(bg.provenance)},
                    {"embedding_b64", embedding_to_b64(bg.embedding)}};
    out.artifacts.push_back({"inpaint/" + img.ref.id + "/meta", meta.dump(2), "json"});
    ctx_.backgrounds[img.ref.id] = std::move(bg);
  }
  return out;
}

NodeOutput Executor::node_retrieve() {
  NodeOutput out;
  for (const auto& [image_id, bg] : ctx_.backgrounds) {
    auto& per_class = ctx_.retrievals[image_id];
    json record = json::object();
    const BoundingBox region =
        margin_region(bg.image_pixels.width, bg.image_pixels.height);
    for (DefectCategory category : config_.profile.categories) {
      std::string entry_id;
      if (bank_ != nullptr) {
        const std::optional<MemoryEntry> entry =
            bank_->retrieve_compatible_mask(region, category, bg.embedding);
        if (entry) entry_id = entry->id;
      }
      per_class[category] = entry_id;
      record[std::string(category_name(category))] =
          entry_id.empty() ? json() : json(entry_id);
    }
    out.artifacts.push_back({"retrieve/" + image_id, record.dump(2), "json"});
  }
  return out;
}

NodeOutput Executor::node_compose() {
  const ExpertDescriptor& generator =
      require_expert(ExpertKind::Generator, "compose node");
  NodeOutput out;
  json notes = json::array();
  for (const auto& [image_id, per_class] : ctx_.retrievals) {
    const auto bg_it = ctx_.backgrounds.find(image_id);
    if (bg_it == ctx_.backgrounds.end()) continue;
    for (const auto& [category, entry_id] : per_class) {
      if (entry_id.empty()) {
        notes.push_back({{"image", image_id},
                         {"category", category_name(category)},
                         {"status", "no_compatible_entry"}});
        continue;
      }
      const std::optional<MemoryEntry> entry =
          bank_ ? bank_->find(entry_id) : std::nullopt;
      if (!entry) {
        notes.push_back({{"image", image_id},
                         {"category", category_name(category)},
                         {"status", "entry_missing"}});
        continue;
      }
      try {
        const std::uint64_t sub_seed = mix_seed(
            config_.profile.seed,
            image_id + "|" + std::string(category_name(category)));
        const BlendSpec spec =
            plan_placement(bg_it->second, *entry, sub_seed,
                           config_.recompose.alpha, config_.recompose.feather);
        AugmentedSample sample = compose(spec, generator, gateway_);

        json meta{{"image_id", image_id},
                  {"category", category_name(category)},
                  {"lineage",
                   {{"background_id", sample.lineage.background_id},
                    {"entry_ids", sample.lineage.entry_ids},
                    {"seed", sample.lineage.seed},
                    {"notes", sample.lineage.notes}}}};
        json instances = json::array();
        for (const auto& [mask, c] : sample.instances) {
          instances.push_back(
              {{"category", category_name(c)}, {"mask_rle", mask.to_rle()}});
        }
        meta["instances"] = instances;
        const std::string stem =
            "compose/" + image_id + "/" + std::string(category_name(category));
        out.artifacts.push_back({stem + "/image", serialize_ppm(sample.image), "ppm"});
        out.artifacts.push_back({stem + "/meta", meta.dump(2), "json"});
        ctx_.samples[image_id].emplace_back(category, std::move(sample));
      } catch (const std::exception& e) {
        notes.push_back({{"image", image_id},
                         {"category", category_name(category)},
                         {"status", "error"},
                         {"detail", e.what()}});
      }
    }
  }
  out.artifacts.push_back({"compose/notes", notes.dump(2), "json"});
  return out;
}

NodeOutput Executor::node_verify() {
  NodeOutput out;
  for (auto& [image_id, samples] : ctx_.samples) {
    const auto bg_it = ctx_.backgrounds.find(image_id);
    auto& flags = ctx_.consistent[image_id];
    for (const auto& [category, sample] : samples) {
      const ConsistencyReport report = verify_label_consistency(
          sample, bg_it->second, config_.recompose.feather);
      flags.push_back(report.consistent);
      const json j{{"image_id", image_id},
                   {"category", category_name(category)},
                   {"consistent", report.consistent},
                   {"leakage_px", report.leakage_px},
                   {"coverage", report.coverage}};
      out.artifacts.push_back({"verify/" + image_id + "/" +
                                   std::string(category_name(category)),
                               j.dump(2), "json"});
    }
  }
  return out;
}

NodeOutput Executor::node_archive() {
  const ExpertDescriptor& embedder =
      require_expert(ExpertKind::Embedder, "archive node");
  NodeOutput out;
  json archived = json::array();
  if (bank_ != nullptr) {
    for (const auto& [image_id, samples] : ctx_.samples) {
      const auto& flags = ctx_.consistent[image_id];
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i >= flags.size() || !flags[i]) continue;
        const AugmentedSample& sample = samples[i].second;
        // Archival is idempotent across resumes: entry ids are derived from
        // lineage, so re-running skips what a killed run already stored.
        bool already = false;
        for (std::size_t k = 0; k < sample.instances.size(); ++k) {
          const std::string id =
              "syn-" + to_hex(fnv1a64(sample.lineage.background_id + "|" +
                                      std::to_string(sample.lineage.seed) + "|" +
                                      std::to_string(k)));
          if (bank_->contains(id)) {
            archived.push_back(id);
            already = true;
          }
        }
        if (already) continue;
        const std::vector<std::string> ids = archive_synthetic(
            sample, *bank_,
            [&](const RasterImage& img) {
              return gateway_.embed_image(img, embedder);
            },
            config_.clock());
        for (const std::string& id : ids) archived.push_back(id);
      }
    }
    if (config_.bank_dir) bank_->persist(*config_.bank_dir);
  }
  out.artifacts.push_back({"archive/ids", archived.dump(2), "json"});
  return out;
}

NodeOutput Executor::node_evaluate() {
  load_images();
  NodeOutput out;
  json metrics = json::object();
  std::string csv =
      "Task,Precision,Recall,mAP50,mAP50:95,F1-score,mIoU,PA\n";

  if (!config_.ground_truth_dir) {
    metrics["note"] = "no ground truth configured";
    out.artifacts.push_back({"evaluate/metrics", metrics.dump(2), "json"});
    out.artifacts.push_back({"evaluate/metrics_csv", csv, "csv"});
    return out;
  }

  const std::vector<AnnotatedImage> gt_anns =
      load_annotation_dir(*config_.ground_truth_dir);
  const std::vector<GroundTruthItem> gts = to_ground_truths(gt_anns);

  std::vector<PredictedItem> preds;
  for (const auto& [image_id, dets] : ctx_.selected_detections) {
    for (const Detection& d : dets)
      preds.push_back({image_id, d.box, d.category, d.confidence});
  }
  const DetectionMetrics dm = detection_metrics(preds, gts);
  metrics["detection"] = {{"Precision", dm.precision},
                          {"Recall", dm.recall},
                          {"mAP50", dm.map50},
                          {"mAP50:95", dm.map50_95},
                          {"F1-score", dm.f1}};
  csv += "detection," + fmt4(dm.precision) + "," + fmt4(dm.recall) + "," +
         fmt4(dm.map50) + "," + fmt4(dm.map50_95) + "," + fmt4(dm.f1) + ",,\n";

  if (plan_.has_node("segment")) {
    const auto gt_masks = to_class_masks(gt_anns);
    double miou = 0, p = 0, r = 0, f1 = 0, pa = 0;
    int n = 0;
    for (const auto& [image_id, gt_per_class] : gt_masks) {
      const auto pr_it = ctx_.masks.find(image_id);
      const std::map<DefectCategory, BinaryMask> empty_masks;
      const auto& pred_per_class =
          pr_it == ctx_.masks.end() ? empty_masks : pr_it->second;
      const SegMetrics sm = seg_metrics(pred_per_class, gt_per_class);
      miou += sm.miou;
      p += sm.precision;
      r += sm.recall;
      f1 += sm.f1;
      pa += sm.pixel_accuracy;
      ++n;
    }
    if (n > 0) {
      miou /= n;
      p /= n;
      r /= n;
      f1 /= n;
      pa /= n;
      metrics["segmentation"] = {{"mIoU", miou},
                                 {"Precision", p},
                                 {"Recall", r},
                                 {"F1-score", f1},
                                 {"PA", pa}};
      csv += "segmentation," + fmt4(p) + "," + fmt4(r) + ",,," + fmt4(f1) + "," +
             fmt4(miou) + "," + fmt4(pa) + "\n";
    }
  }

  out.artifacts.push_back({"evaluate/metrics", metrics.dump(2), "json"});
  out.artifacts.push_back({"evaluate/metrics_csv", csv, "csv"});
  return out;
}

NodeOutput Executor::node_curate() {
  load_images();
  const ExpertDescriptor& embedder =
      require_expert(ExpertKind::Embedder, "curate node");

  CurationConfig cfg = config_.curation;
  cfg.negative_concepts.clear();
  for (const std::string& name : config_.negative_concept_names)
    cfg.negative_concepts.push_back({name, gateway_.embed_text(name, embedder)});
  std::vector<ConceptEmbedding> positives;
  for (DefectCategory c : kAllCategories) {
    positives.push_back({std::string(category_name(c)),
                         gateway_.embed_text(std::string(category_name(c)),
                                             embedder)});
  }

  std::vector<std::pair<std::string, Eigen::VectorXf>> items;
  for (const LoadedImage& img : ctx_.images)
    items.emplace_back(img.ref.id, gateway_.embed_image(img.pixels, embedder));
  const std::vector<std::string> dedup_keep = dedup(items, cfg.dedup_threshold);
  const std::set<std::string> dedup_set(dedup_keep.begin(), dedup_keep.end());

  json kept = json::array();
  json dropped = json::array();
  json reports = json::array();
  std::string csv = "id,kept,reason,min_side,aspect,blur\n";
  for (std::size_t i = 0; i < ctx_.images.size(); ++i) {
    const LoadedImage& img = ctx_.images[i];
    const QualityReport quality = quality_gate(img.pixels, cfg, img.ref.id);
    const NegativeFilterResult negative = negative_filter(
        items[i].second, cfg.negative_concepts, positives, cfg.negative_margin);

    std::string reason;
    if (!dedup_set.count(img.ref.id)) reason = "duplicate";
    else if (!negative.keep) reason = "negative_concept:" + negative.offending_concept;
    else if (!quality.passed) reason = "quality:" + quality.reason;

    json checks = json::array();
    for (const QualityCheck& check : quality.checks) {
      checks.push_back(
          {{"name", check.name}, {"value", check.value}, {"passed", check.passed}});
    }
    reports.push_back({{"id", img.ref.id},
                       {"kept", reason.empty()},
                       {"reason", reason},
                       {"checks", checks}});
    if (reason.empty()) {
      kept.push_back(img.ref.id);
    } else {
      dropped.push_back({{"id", img.ref.id}, {"reason", reason}});
    }
    csv += img.ref.id + "," + (reason.empty() ? "true" : "false") + "," + reason +
           "," + fmt4(quality.checks[0].value) + "," +
           fmt4(quality.checks[1].value) + "," + fmt4(quality.checks[2].value) +
           "\n";
  }

  NodeOutput out;
  const json manifest{{"kept", kept}, {"dropped", dropped}, {"reports", reports}};
  out.artifacts.push_back({"curate/manifest", manifest.dump(2), "json"});
  out.artifacts.push_back({"curate/report_csv", csv, "csv"});
  return out;
}

NodeOutput Executor::run_node(const std::string& id) {
  if (id == "detect") return node_detect();
  if (id == "segment") return node_segment();
  if (id == "inpaint") return node_inpaint();
  if (id == "retrieve") return node_retrieve();
  if (id == "compose") return node_compose();
  if (id == "verify") return node_verify();
  if (id == "archive") return node_archive();
  if (id == "evaluate") return node_evaluate();
  if (id == "curate") return node_curate();
  throw ValidationError("unknown task kind: " + id);
}

std::string Executor::artifact_bytes(const std::string& artifact_id) const {
  const auto it = index_.find(artifact_id);
  if (it == index_.end())
    throw IoError("checkpoint artifact missing from index: " + artifact_id);
  return slurp_file(config_.out_dir / it->second.path);
}

void Executor::restore_node(const std::string& id) {
  load_images();
  const NodeReport& report = reports_.at(id);
  if (id == "detect") {
    for (const LoadedImage& img : ctx_.images) {
      ctx_.union_detections[img.ref.id] = detections_from_annotation(
          json::parse(artifact_bytes("detect/" + img.ref.id + "/union")));
      ctx_.intersection_detections[img.ref.id] = detections_from_annotation(
          json::parse(artifact_bytes("detect/" + img.ref.id + "/intersection")));
      ctx_.selected_detections[img.ref.id] = detections_from_annotation(
          json::parse(artifact_bytes("detect/" + img.ref.id + "/selected")));
    }
  } else if (id == "segment") {
    for (const LoadedImage& img : ctx_.images) {
      const AnnotatedImage ann = annotation_from_json(
          json::parse(artifact_bytes("segment/" + img.ref.id)));
      auto& per_class = ctx_.masks[img.ref.id];
      for (DefectCategory c : config_.profile.categories)
        per_class[c] = BinaryMask::zeros(img.ref.width, img.ref.height);
      for (const auto& inst : ann.instances) {
        if (inst.mask) per_class[inst.category] = *inst.mask;
      }
    }
  } else if (id == "inpaint") {
    for (const std::string& artifact : report.artifacts) {
      if (artifact.size() < 5 || artifact.substr(artifact.size() - 5) != "/meta")
        continue;
      const json meta = json::parse(artifact_bytes(artifact));
      const std::string image_id = meta.at("image_id").get<std::string>();
      BackgroundTemplate bg;
      bg.id = meta.at("id").get<std::string>();
      bg.provenance = provenance_from_name(meta.at("provenance").get<std::string>());
      bg.image_pixels = parse_ppm(artifact_bytes("inpaint/" + image_id + "/image"));
      bg.image = make_ref(bg.image_pixels, bg.id);
      bg.embedding = embedding_from_b64(meta.at("embedding_b64").get<std::string>());
      ctx_.backgrounds[image_id] = std::move(bg);
    }
  } else if (id == "retrieve") {
    for (const std::string& artifact : report.artifacts) {
      const json record = json::parse(artifact_bytes(artifact));
      const std::string image_id = artifact.substr(std::string("retrieve/").size());
      auto& per_class = ctx_.retrievals[image_id];
      for (const auto& [name, value] : record.items()) {
        per_class[category_from_name(name)] =
            value.is_null() ? "" : value.get<std::string>();
      }
    }
  } else if (id == "compose") {
    for (const std::string& artifact : report.artifacts) {
      if (artifact.size() < 5 || artifact.substr(artifact.size() - 5) != "/meta")
        continue;
      const json meta = json::parse(artifact_bytes(artifact));
      const std::string image_id = meta.at("image_id").get<std::string>();
      const DefectCategory category =
          category_from_name(meta.at("category").get<std::string>());
      AugmentedSample sample;
      sample.image = parse_ppm(artifact_bytes(
          "compose/" + image_id + "/" +
          std::string(category_name(category)) + "/image"));
      const json& lineage = meta.at("lineage");
      sample.lineage.background_id = lineage.at("background_id").get<std::string>();
      sample.lineage.entry_ids =
          lineage.at("entry_ids").get<std::vector<std::string>>();
      sample.lineage.seed = lineage.at("seed").get<std::uint64_t>();
      sample.lineage.notes = lineage.at("notes").get<std::vector<std::string>>();
      for (const json& ji : meta.at("instances")) {
        sample.instances.emplace_back(
            BinaryMask::from_rle(ji.at("mask_rle").get<std::string>()),
            category_from_name(ji.at("category").get<std::string>()));
      }
      ctx_.samples[image_id].emplace_back(category, std::move(sample));
    }
  } else if (id == "verify") {
    for (const std::string& artifact : report.artifacts) {
      const json j = json::parse(artifact_bytes(artifact));
      ctx_.consistent[j.at("image_id").get<std::string>()].push_back(
          j.at("consistent").get<bool>());
    }
  }
  // Terminal nodes (archive, evaluate, curate) have no downstream consumers.
}

void Executor::commit_artifact(NodeReport& report, const PendingArtifact& artifact) {
  const std::string hash = to_hex(fnv1a64(artifact.bytes));
  const std::string rel = "artifacts/" + hash + "." + artifact.ext;
  const fs::path path = config_.out_dir / rel;
  if (!fs::exists(path)) spit_file(path, artifact.bytes);
  index_[artifact.id] = {rel, hash};
  report.artifacts.push_back(artifact.id);
}

void Executor::write_state() {
  json nodes = json::object();
  for (const auto& [id, report] : reports_) {
    nodes[id] = {{"status", node_status_name(report.status)},
                 {"artifacts", report.artifacts},
                 {"error", report.error}};
  }
  json artifacts = json::object();
  for (const auto& [id, record] : index_) {
    artifacts[id] = {{"path", record.path}, {"hash", record.content_hash}};
  }
  const json state{{"config_digest", config_.digest()},
                   {"seed", config_.profile.seed},
                   {"nodes", nodes},
                   {"artifacts", artifacts}};
  const fs::path tmp = config_.out_dir / "state.json.tmp";
  write_json_file(tmp, state);
  fs::rename(tmp, config_.out_dir / "state.json");
}

RunReport Executor::run() {
  {
    std::string why;
    if (!validate_plan(plan_, config_.profile, &why))
      throw ValidationError("invalid task plan: " + why);
  }
  fs::create_directories(config_.out_dir / "artifacts");
  write_json_file(config_.out_dir / "plan.json", plan_.to_json());

  for (const TaskNode& n : plan_.nodes) {
    NodeReport r;
    r.id = n.id;
    reports_[n.id] = r;
  }

  // Resume from an interrupted run when a compatible state file exists.
  const fs::path state_path = config_.out_dir / "state.json";
  if (fs::exists(state_path)) {
    const json state = read_json_file(state_path);
    if (state.value("config_digest", std::string()) != config_.digest())
      throw IoError("run directory was produced under a different configuration");
    resumed_ = true;
    for (const auto& [id, record] : state.at("artifacts").items()) {
      index_[id] = {record.at("path").get<std::string>(),
                    record.at("hash").get<std::string>()};
    }
    for (const auto& [id, jnode] : state.at("nodes").items()) {
      if (!reports_.count(id)) continue;
      const NodeStatus status =
          node_status_from_name(jnode.at("status").get<std::string>());
      if (status == NodeStatus::Done) {
        reports_[id].status = NodeStatus::Done;
        reports_[id].artifacts = jnode.at("artifacts").get<std::vector<std::string>>();
      }
    }
    for (const TaskNode& n : plan_.nodes) {
      if (reports_[n.id].status == NodeStatus::Done) restore_node(n.id);
    }
  }

  bool interrupted = false;
  while (!interrupted) {
    // Nodes whose dependencies are all done and which have not run yet.
    std::vector<std::string> ready;
    for (const TaskNode& n : plan_.nodes) {
      if (reports_[n.id].status != NodeStatus::Pending) continue;
      bool ok = true;
      bool doomed = false;
      for (const std::string& dep : plan_.dependencies_of(n.id)) {
        const NodeStatus ds = reports_[dep].status;
        if (ds == NodeStatus::Failed || ds == NodeStatus::Skipped) doomed = true;
        if (ds != NodeStatus::Done) ok = false;
      }
      if (doomed) {
        reports_[n.id].status = NodeStatus::Skipped;
        reports_[n.id].error = "dependency failed";
      } else if (ok) {
        ready.push_back(n.id);
      }
    }
    if (ready.empty()) break;

    struct Outcome {
      NodeOutput output;
      std::string error;
      double elapsed_ms = 0.0;
    };
    std::map<std::string, std::future<Outcome>> futures;
    for (const std::string& id : ready) {
      reports_[id].status = NodeStatus::Running;
      futures.emplace(id, std::async(std::launch::async, [this, id]() {
        Outcome outcome;
        const auto start = std::chrono::steady_clock::now();
        try {
          outcome.output = run_node(id);
        } catch (const std::exception& e) {
          outcome.error = e.what();
        }
        outcome.elapsed_ms =
            std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - start)
                .count();
        return outcome;
      }));
    }
    // Commit results in canonical node order so reports and checkpoints are
    // byte-stable regardless of completion order.
    for (const std::string& id : ready) {
      Outcome outcome = futures.at(id).get();
      NodeReport& report = reports_[id];
      report.elapsed_ms = outcome.elapsed_ms;
      if (outcome.error.empty()) {
        for (const PendingArtifact& artifact : outcome.output.artifacts)
          commit_artifact(report, artifact);
        report.status = NodeStatus::Done;
      } else {
        report.status = NodeStatus::Failed;
        report.error = outcome.error;
      }
      write_state();
      if (config_.interrupt_after && report.status == NodeStatus::Done &&
          config_.interrupt_after(id)) {
        interrupted = true;
        break;
      }
    }
  }

  RunReport report;
  report.seed = config_.profile.seed;
  report.config_digest = config_.digest();
  report.resumed = resumed_;
  for (const TaskNode& n : plan_.nodes) report.nodes.push_back(reports_[n.id]);
  report.artifact_index = index_;
  write_json_file(config_.out_dir / "report.json", report.to_json(true));
  return report;
}

}  // namespace

json RunReport::to_json(bool include_timings) const {
  json jnodes = json::array();
  for (const NodeReport& n : nodes) {
    json jn{{"id", n.id},
            {"status", node_status_name(n.status)},
            {"artifacts", n.artifacts},
            {"error", n.error}};
    if (include_timings) jn["elapsed_ms"] = n.elapsed_ms;
    jnodes.push_back(jn);
  }
  json jart = json::object();
  for (const auto& [id, record] : artifact_index) {
    jart[id] = {{"path", record.path}, {"hash", record.content_hash}};
  }
  json out{{"seed", seed},
           {"config_digest", config_digest},
           {"nodes", jnodes},
           {"artifacts", jart}};
  if (include_timings) {
    out["resumed"] = resumed;
    out["digest"] = comparable_digest();
  }
  return out;
}

std::string RunReport::comparable_digest() const {
  return to_hex(fnv1a64(to_json(false).dump()));
}

std::string RunConfig::digest() const {
  json experts_json = json::array();
  for (const ExpertDescriptor& d : experts) experts_json.push_back(descriptor_to_json(d));
  json categories = json::array();
  for (DefectCategory c : recompose.categories) categories.push_back(category_name(c));
  const json j{
      {"profile", profile_to_json(profile)},
      {"experts", experts_json},
      {"fusion",
       {{"iou_threshold", fusion.iou_threshold},
        {"min_agreement", fusion.min_agreement},
        {"score_rule", static_cast<int>(fusion.score_rule)}}},
      {"recompose",
       {{"dilation_radius", recompose.dilation_radius},
        {"alpha", recompose.alpha},
        {"feather", recompose.feather},
        {"categories", categories}}},
      {"curation",
       {{"dedup_threshold", curation.dedup_threshold},
        {"negative_margin", curation.negative_margin},
        {"min_side", curation.min_side},
        {"aspect_low", curation.aspect_range.first},
        {"aspect_high", curation.aspect_range.second},
        {"blur_min_variance", curation.blur_min_variance},
        {"negative_concepts", negative_concept_names}}},
      {"has_ground_truth", ground_truth_dir.has_value()}};
  return to_hex(fnv1a64(j.dump()));
}

RunReport execute(const TaskPlan& plan, const RunConfig& config,
                  const ExpertGateway& gateway, MemoryBank* bank) {
  Executor executor(plan, config, gateway, bank);
  return executor.run();
}

}  // namespace facadefixer
