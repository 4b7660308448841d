#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facadefixer/geometry.hpp"

namespace facadefixer {

struct GroundTruthItem {
  std::string image_id;
  BoundingBox box;
  DefectCategory category = DefectCategory::Crack;
  std::optional<BinaryMask> mask;
};

struct PredictedItem {
  std::string image_id;
  BoundingBox box;
  DefectCategory category = DefectCategory::Crack;
  double confidence = 0.0;
};

/// One-to-one greedy matching result; indices refer to the input spans.
struct MatchResult {
  struct Assignment {
    std::size_t prediction;
    std::size_t ground_truth;
    double iou;
  };
  std::vector<Assignment> assignments;
  std::vector<std::size_t> false_positives;  // unmatched predictions
  std::vector<std::size_t> false_negatives;  // unmatched ground truths
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double map50 = 0.0;
  double map50_95 = 0.0;
};

struct SegMetrics {
  double miou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pixel_accuracy = 0.0;
};

/// Greedy per-image, per-category matching: predictions in confidence order
/// (ties by image id, box x, y) claim the unassigned ground truth of the same
/// category with maximal IoU >= iou_t.
MatchResult match(std::span<const PredictedItem> predictions,
                  std::span<const GroundTruthItem> ground_truths, double iou_t);

/// Precision, recall, F1 from raw counts; each term is 0 when its denominator
/// is 0.
std::tuple<double, double, double> prf1(std::int64_t tp, std::int64_t fp,
                                        std::int64_t fn);

/// Class-mean average precision at one IoU threshold, with 101-point recall
/// interpolation. Classes without ground truth are excluded from the mean;
/// a class with ground truth but no predictions contributes 0.
double average_precision(std::span<const PredictedItem> predictions,
                         std::span<const GroundTruthItem> ground_truths,
                         double iou_t);

/// (mAP at IoU 0.50, mean of mAP over IoU 0.50:0.05:0.95).
std::pair<double, double> map_range(std::span<const PredictedItem> predictions,
                                    std::span<const GroundTruthItem> ground_truths);

/// Precision/recall/F1 at IoU 0.5 plus mAP50 and mAP50:95.
DetectionMetrics detection_metrics(std::span<const PredictedItem> predictions,
                                   std::span<const GroundTruthItem> ground_truths);

/// Per-class mask metrics. mIoU averages over classes with a nonempty mask on
/// either side; pixel precision/recall/F1 pool foreground pixels across
/// classes; pixel accuracy counts correctly labeled pixels including
/// background.
SegMetrics seg_metrics(const std::map<DefectCategory, BinaryMask>& predictions,
                       const std::map<DefectCategory, BinaryMask>& ground_truths);

}  // namespace facadefixer
