#include "facadefixer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace facadefixer {

namespace {

// Stable confidence-descending order with deterministic tie-breaks.
std::vector<std::size_t> prediction_order(std::span<const PredictedItem> preds) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const PredictedItem& pa = preds[a];
    const PredictedItem& pb = preds[b];
    if (pa.confidence != pb.confidence) return pa.confidence > pb.confidence;
    return std::tie(pa.image_id, pa.box.x, pa.box.y) <
           std::tie(pb.image_id, pb.box.x, pb.box.y);
  });
  return order;
}

}  // namespace

MatchResult match(std::span<const PredictedItem> predictions,
                  std::span<const GroundTruthItem> ground_truths, double iou_t) {
  if (!(iou_t > 0.0 && iou_t <= 1.0))
    throw ValidationError("match: iou threshold must be in (0, 1]");

  MatchResult result;
  std::vector<bool> gt_taken(ground_truths.size(), false);
  for (std::size_t pi : prediction_order(predictions)) {
    const PredictedItem& p = predictions[pi];
    double best_iou = 0.0;
    std::int64_t best_gt = -1;
    for (std::size_t gi = 0; gi < ground_truths.size(); ++gi) {
      const GroundTruthItem& g = ground_truths[gi];
      if (gt_taken[gi] || g.image_id != p.image_id || g.category != p.category)
        continue;
      const double iou = box_iou(p.box, g.box);
      if (iou < iou_t) continue;
      if (iou > best_iou ||
          (iou == best_iou && best_gt >= 0 &&
           std::tie(g.box.x, g.box.y, g.box.w, g.box.h) <
               std::tie(ground_truths[static_cast<std::size_t>(best_gt)].box.x,
                        ground_truths[static_cast<std::size_t>(best_gt)].box.y,
                        ground_truths[static_cast<std::size_t>(best_gt)].box.w,
                        ground_truths[static_cast<std::size_t>(best_gt)].box.h))) {
        best_iou = iou;
        best_gt = static_cast<std::int64_t>(gi);
      }
    }
    if (best_gt >= 0) {
      gt_taken[static_cast<std::size_t>(best_gt)] = true;
      result.assignments.push_back(
          {pi, static_cast<std::size_t>(best_gt), best_iou});
    } else {
      result.false_positives.push_back(pi);
    }
  }
  for (std::size_t gi = 0; gi < ground_truths.size(); ++gi) {
    if (!gt_taken[gi]) result.false_negatives.push_back(gi);
  }
  return result;
}

std::tuple<double, double, double> prf1(std::int64_t tp, std::int64_t fp,
                                        std::int64_t fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("negative count");
  const double p = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  return {p, r, f1};
}

namespace {

// AP for a single class: predictions pooled over images, 101-point
// interpolated precision over the recall grid 0.00, 0.01, ..., 1.00.
double class_ap(std::span<const PredictedItem> preds,
                std::span<const GroundTruthItem> gts, double iou_t) {
  if (preds.empty()) return 0.0;
  std::vector<bool> gt_taken(gts.size(), false);
  std::vector<bool> is_tp;
  is_tp.reserve(preds.size());
  for (std::size_t pi : prediction_order(preds)) {
    const PredictedItem& p = preds[pi];
    double best_iou = 0.0;
    std::int64_t best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_taken[gi] || gts[gi].image_id != p.image_id) continue;
      const double iou = box_iou(p.box, gts[gi].box);
      if (iou >= iou_t && iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<std::int64_t>(gi);
      }
    }
    if (best_gt >= 0) {
      gt_taken[static_cast<std::size_t>(best_gt)] = true;
      is_tp.push_back(true);
    } else {
      is_tp.push_back(false);
    }
  }

  const double total_gt = static_cast<double>(gts.size());
  std::vector<double> recalls, precisions;
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) ++tp;
    recalls.push_back(static_cast<double>(tp) / total_gt);
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }

  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recalls.size(); ++i) {
      if (recalls[i] >= r) best = std::max(best, precisions[i]);
    }
    ap += best;
  }
  return ap / 101.0;
}

}  // namespace

double average_precision(std::span<const PredictedItem> predictions,
                         std::span<const GroundTruthItem> ground_truths,
                         double iou_t) {
  std::set<DefectCategory> classes_with_gt;
  for (const GroundTruthItem& g : ground_truths) classes_with_gt.insert(g.category);
  if (classes_with_gt.empty()) return 0.0;

  double sum = 0.0;
  for (DefectCategory c : classes_with_gt) {
    std::vector<PredictedItem> preds_c;
    std::vector<GroundTruthItem> gts_c;
    for (const PredictedItem& p : predictions)
      if (p.category == c) preds_c.push_back(p);
    for (const GroundTruthItem& g : ground_truths)
      if (g.category == c) gts_c.push_back(g);
    sum += class_ap(preds_c, gts_c, iou_t);
  }
  return sum / static_cast<double>(classes_with_gt.size());
}

std::pair<double, double> map_range(std::span<const PredictedItem> predictions,
                                    std::span<const GroundTruthItem> ground_truths) {
  double sum = 0.0;
  double map50 = 0.0;
  for (int k = 0; k < 10; ++k) {
    // Integer-derived thresholds keep 0.70 etc. bit-identical to literals.
    const double t = static_cast<double>(50 + 5 * k) / 100.0;
    const double ap = average_precision(predictions, ground_truths, t);
    if (k == 0) map50 = ap;
    sum += ap;
  }
  return {map50, sum / 10.0};
}

DetectionMetrics detection_metrics(std::span<const PredictedItem> predictions,
                                   std::span<const GroundTruthItem> ground_truths) {
  DetectionMetrics m;
  const MatchResult mr = match(predictions, ground_truths, 0.5);
  const auto tp = static_cast<std::int64_t>(mr.assignments.size());
  const auto fp = static_cast<std::int64_t>(mr.false_positives.size());
  const auto fn = static_cast<std::int64_t>(mr.false_negatives.size());
  std::tie(m.precision, m.recall, m.f1) = prf1(tp, fp, fn);
  std::tie(m.map50, m.map50_95) = map_range(predictions, ground_truths);
  return m;
}

SegMetrics seg_metrics(const std::map<DefectCategory, BinaryMask>& predictions,
                       const std::map<DefectCategory, BinaryMask>& ground_truths) {
  // Establish common dimensions.
  int w = -1, h = -1;
  const auto check_dims = [&](const BinaryMask& m) {
    if (w < 0) {
      w = m.width();
      h = m.height();
    } else if (m.width() != w || m.height() != h) {
      throw ValidationError("seg_metrics: mask dimension mismatch");
    }
  };
  for (const auto& [c, m] : predictions) check_dims(m);
  for (const auto& [c, m] : ground_truths) check_dims(m);

  SegMetrics out;
  if (w < 0) {  // no masks at all
    out.miou = 1.0;
    out.pixel_accuracy = 1.0;
    return out;
  }

  const BinaryMask empty = BinaryMask::zeros(w, h);
  const auto mask_of = [&](const std::map<DefectCategory, BinaryMask>& side,
                           DefectCategory c) -> const BinaryMask& {
    const auto it = side.find(c);
    return it == side.end() ? empty : it->second;
  };

  double iou_sum = 0.0;
  int classes_present = 0;
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (DefectCategory c : kAllCategories) {
    const BinaryMask& p = mask_of(predictions, c);
    const BinaryMask& g = mask_of(ground_truths, c);
    const auto inter = static_cast<std::int64_t>((p.grid().min(g.grid()) != 0).count());
    const auto p_count = p.count();
    const auto g_count = g.count();
    if (p_count > 0 || g_count > 0) {
      iou_sum += static_cast<double>(inter) /
                 static_cast<double>(p_count + g_count - inter);
      ++classes_present;
    }
    tp += inter;
    fp += p_count - inter;
    fn += g_count - inter;
  }
  out.miou = classes_present > 0 ? iou_sum / classes_present : 1.0;
  std::tie(out.precision, out.recall, out.f1) = prf1(tp, fp, fn);

  // Pixel accuracy over a single label map (0 = background, classes in enum
  // order overwrite); inputs are expected to be disjoint per side.
  Eigen::Array<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> pl(h, w), gl(h, w);
  pl.setZero();
  gl.setZero();
  for (std::size_t ci = 0; ci < kAllCategories.size(); ++ci) {
    const DefectCategory c = kAllCategories[ci];
    const auto label = static_cast<std::int8_t>(ci + 1);
    const BinaryMask& p = mask_of(predictions, c);
    const BinaryMask& g = mask_of(ground_truths, c);
    pl = (p.grid() != 0).select(label, pl);
    gl = (g.grid() != 0).select(label, gl);
  }
  const auto correct = static_cast<double>((pl == gl).count());
  out.pixel_accuracy = correct / (static_cast<double>(w) * h);
  return out;
}

}  // namespace facadefixer
