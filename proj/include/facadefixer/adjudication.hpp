#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <variant>
#include <vector>

#include "facadefixer/gateway.hpp"
#include "facadefixer/geometry.hpp"

namespace facadefixer {

/// One competing hypothesis set, e.g. the output of one fusion strategy or
/// one prompt mode.
struct CandidateSet {
  std::string label;
  std::variant<std::vector<Detection>, BinaryMask> payload;

  bool holds_detections() const {
    return std::holds_alternative<std::vector<Detection>>(payload);
  }
  const std::vector<Detection>& detections() const {
    return std::get<std::vector<Detection>>(payload);
  }
  const BinaryMask& mask() const { return std::get<BinaryMask>(payload); }
};

enum class AdjudicationTask { Detection, Segmentation };

struct AdjudicationRequest {
  ImageRef image;
  std::vector<CandidateSet> candidates;
  std::string context;
  AdjudicationTask task = AdjudicationTask::Detection;

  /// Wire body sent to the adjudicator endpoint.
  nlohmann::json to_wire() const;
};

enum class VerdictSource { Endpoint, Fallback, Bypass, Mock };

std::string_view verdict_source_name(VerdictSource s);

struct Verdict {
  std::string chosen;  // label of the selected candidate set
  std::string rationale;
  VerdictSource source = VerdictSource::Fallback;
};

/// Packages candidates into a request. Labels must be unique and payload
/// kinds consistent; the category glossary is appended to the caller context.
AdjudicationRequest build_request(const ImageRef& image,
                                  std::vector<CandidateSet> candidates,
                                  std::string context);

/// Extracts the first well-formed verdict record ({"chosen": ..., optional
/// "rationale"}) from an endpoint reply. Throws ParseError on malformed
/// replies or labels absent from the request.
Verdict parse_verdict(const AdjudicationRequest& request, const std::string& raw);

/// The adjudication step. Single-candidate requests bypass the endpoint.
/// Otherwise the endpoint is tried twice (transport failures and malformed
/// replies both count as a failed attempt) before the declared fallback
/// candidate wins. Mock endpoints resolve in-process via mock_adjudicate.
Verdict adjudicate(const AdjudicationRequest& request, const ExpertDescriptor& d,
                   const std::string& fallback_label, const ExpertGateway& gateway);

/// Deterministic stand-in for an MLLM adjudicator: picks the candidate with
/// the highest mean pairwise agreement against the other candidates, ties
/// broken by lexicographically smallest label.
Verdict mock_adjudicate(const AdjudicationRequest& request);

}  // namespace facadefixer
