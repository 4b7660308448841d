#include "facadefixer/adjudication.hpp"

#include <algorithm>
#include <set>

#include "facadefixer/experts.hpp"

namespace facadefixer {

namespace {

std::string category_glossary() {
  std::string out = "Defect categories:";
  for (DefectCategory c : kAllCategories) {
    out += " ";
    out += category_label(c);
    out += " (";
    const std::vector<std::string> concepts = prompt_map(c);
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      if (i > 0) out += ", ";
      out += concepts[i];
    }
    out += ");";
  }
  return out;
}

}  // namespace

std::string_view verdict_source_name(VerdictSource s) {
  switch (s) {
    case VerdictSource::Endpoint:
      return "endpoint";
    case VerdictSource::Fallback:
      return "fallback";
    case VerdictSource::Bypass:
      return "bypass";
    case VerdictSource::Mock:
      return "mock";
  }
  return "";
}

nlohmann::json AdjudicationRequest::to_wire() const {
  nlohmann::json out{
      {"task", task == AdjudicationTask::Detection ? "detection" : "segmentation"},
      {"image", image_ref_to_wire(image)},
      {"context", context}};
  nlohmann::json cands = nlohmann::json::array();
  for (const CandidateSet& c : candidates) {
    nlohmann::json jc{{"label", c.label}};
    if (c.holds_detections()) {
      nlohmann::json dets = nlohmann::json::array();
      double conf_sum = 0.0;
      for (const Detection& d : c.detections()) {
        dets.push_back(detection_to_wire(d));
        conf_sum += d.confidence;
      }
      jc["detections"] = dets;
      jc["stats"] = {{"count", c.detections().size()},
                     {"mean_confidence",
                      c.detections().empty() ? 0.0 : conf_sum / c.detections().size()}};
    } else {
      jc["mask_rle"] = c.mask().to_rle();
      jc["stats"] = {{"count", c.mask().count()}};
    }
    cands.push_back(jc);
  }
  out["candidates"] = cands;
  return out;
}

AdjudicationRequest build_request(const ImageRef& image,
                                  std::vector<CandidateSet> candidates,
                                  std::string context) {
  if (candidates.empty())
    throw ValidationError("adjudication request needs at least one candidate");
  const bool detections = candidates.front().holds_detections();
  std::set<std::string> labels;
  for (const CandidateSet& c : candidates) {
    if (c.holds_detections() != detections)
      throw ValidationError("mixed candidate payload kinds in one request");
    if (!labels.insert(c.label).second)
      throw ValidationError("duplicate candidate label: " + c.label);
  }
  AdjudicationRequest req;
  req.image = image;
  req.candidates = std::move(candidates);
  req.task = detections ? AdjudicationTask::Detection
                        : AdjudicationTask::Segmentation;
  req.context = std::move(context);
  if (!req.context.empty()) req.context += " ";
  req.context += category_glossary();
  return req;
}

namespace {

bool is_known_label(const AdjudicationRequest& request, const std::string& label) {
  for (const CandidateSet& c : request.candidates) {
    if (c.label == label) return true;
  }
  return false;
}

// Finds the matching close brace for the open brace at `start`, honoring
// string literals, or npos.
std::size_t matching_brace(const std::string& s, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::string::npos;
}

}  // namespace

Verdict parse_verdict(const AdjudicationRequest& request, const std::string& raw) {
  // Endpoints are allowed to wrap the verdict object in prose; scan for the
  // first JSON object carrying a "chosen" field.
  for (std::size_t i = raw.find('{'); i != std::string::npos;
       i = raw.find('{', i + 1)) {
    const std::size_t end = matching_brace(raw, i);
    if (end == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(raw.substr(i, end - i + 1));
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!obj.is_object() || !obj.contains("chosen") || !obj.at("chosen").is_string())
      continue;
    const std::string chosen = obj.at("chosen").get<std::string>();
    if (!is_known_label(request, chosen))
      throw ParseError("verdict names unknown label \"" + chosen + "\"");
    Verdict v;
    v.chosen = chosen;
    v.rationale = obj.value("rationale", std::string());
    v.source = VerdictSource::Endpoint;
    return v;
  }
  throw ParseError("no verdict record found in reply");
}

Verdict adjudicate(const AdjudicationRequest& request, const ExpertDescriptor& d,
                   const std::string& fallback_label, const ExpertGateway& gateway) {
  if (request.candidates.empty())
    throw ValidationError("adjudicate: empty request");
  if (!is_known_label(request, fallback_label))
    throw ValidationError("fallback label \"" + fallback_label +
                          "\" is not among the candidates");

  if (request.candidates.size() == 1) {
    return Verdict{request.candidates.front().label, "single candidate",
                   VerdictSource::Bypass};
  }
  if (d.is_disabled()) {
    return Verdict{fallback_label, "adjudicator disabled", VerdictSource::Fallback};
  }
  if (d.is_mock()) {
    Verdict v = mock_adjudicate(request);
    v.source = VerdictSource::Mock;
    return v;
  }
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return parse_verdict(request, gateway.call_adjudicator(request.to_wire(), d));
    } catch (const TransportError&) {
    } catch (const ParseError&) {
    }
  }
  return Verdict{fallback_label, "endpoint failed twice", VerdictSource::Fallback};
}

namespace {

// Agreement of candidate a toward candidate b. For detections: mean over a's
// boxes of the best same-category IoU in b. For masks: plain mask IoU.
double directed_agreement(const CandidateSet& a, const CandidateSet& b) {
  if (!a.holds_detections()) return mask_iou(a.mask(), b.mask());
  if (a.detections().empty()) return 0.0;
  double sum = 0.0;
  for (const Detection& da : a.detections()) {
    double best = 0.0;
    for (const Detection& db : b.detections()) {
      if (da.category != db.category) continue;
      best = std::max(best, box_iou(da.box, db.box));
    }
    sum += best;
  }
  return sum / static_cast<double>(a.detections().size());
}

}  // namespace

Verdict mock_adjudicate(const AdjudicationRequest& request) {
  if (request.candidates.empty())
    throw ValidationError("mock_adjudicate: empty request");
  const auto& candidates = request.candidates;
  if (candidates.size() == 1)
    return Verdict{candidates.front().label, "single candidate", VerdictSource::Mock};

  double best_score = -1.0;
  const CandidateSet* best = nullptr;
  for (const CandidateSet& c : candidates) {
    double sum = 0.0;
    for (const CandidateSet& other : candidates) {
      if (&other == &c) continue;
      sum += directed_agreement(c, other);
    }
    const double score = sum / static_cast<double>(candidates.size() - 1);
    if (score > best_score ||
        (score == best_score && best != nullptr && c.label < best->label)) {
      best_score = score;
      best = &c;
    }
  }
  return Verdict{best->label,
                 "highest mean cross-candidate agreement (" +
                     std::to_string(best_score) + ")",
                 VerdictSource::Mock};
}

}  // namespace facadefixer
