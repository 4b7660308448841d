#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "facadefixer/geometry.hpp"

namespace facadefixer {

/// One expert's output for one image: either a set of detections (detector
/// experts) or a crack mask (crack-segmenter experts).
struct ExpertOutput {
  std::string expert;
  std::string image_id;
  std::variant<std::vector<Detection>, BinaryMask> payload;

  static ExpertOutput from_detections(std::string expert, std::string image_id,
                                      std::vector<Detection> detections);
  static ExpertOutput from_mask(std::string expert, std::string image_id,
                                BinaryMask mask);

  bool holds_detections() const {
    return std::holds_alternative<std::vector<Detection>>(payload);
  }
  const std::vector<Detection>& detections() const {
    return std::get<std::vector<Detection>>(payload);
  }
  const BinaryMask& mask() const { return std::get<BinaryMask>(payload); }
};

enum class ScoreRule { Max, Mean, WeightedAvg };

struct FusionConfig {
  double iou_threshold = 0.6;
  int min_agreement = 2;
  ScoreRule score_rule = ScoreRule::Max;
};

/// Groups detections into class-aware clusters: two detections share a cluster
/// only if they have the same category and are connected by a chain of pairs
/// with IoU >= iou_threshold. Every detection lands in exactly one cluster.
/// Cluster and member ordering are canonical, so the result is invariant under
/// permutation of experts and detections.
std::vector<std::vector<Detection>> cluster_boxes(
    std::span<const ExpertOutput> outputs, const FusionConfig& cfg);

/// Union strategy: one representative detection per cluster, singletons
/// included. The representative follows cfg.score_rule (default: the
/// max-confidence member's box with its confidence).
std::vector<Detection> fuse_union(std::span<const ExpertOutput> outputs,
                                  const FusionConfig& cfg);

/// Intersection strategy: only clusters spanning at least cfg.min_agreement
/// distinct experts survive; the fused box is the confidence-weighted average
/// of member coordinates and the fused confidence the mean of member
/// confidences.
std::vector<Detection> fuse_intersection(std::span<const ExpertOutput> outputs,
                                         const FusionConfig& cfg);

/// Pixel-wise union of all experts' crack masks.
BinaryMask crack_mask_union(std::span<const ExpertOutput> outputs);

}  // namespace facadefixer
