#include "facadefixer/curation.hpp"

#include <algorithm>
#include <numeric>

namespace facadefixer {

double cosine_similarity(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  if (a.size() != b.size())
    throw ValidationError("cosine: dimension mismatch");
  const double na = a.cast<double>().norm();
  const double nb = b.cast<double>().norm();
  if (na == 0.0 || nb == 0.0)
    throw ValidationError("cosine undefined for a zero-norm vector");
  return a.cast<double>().dot(b.cast<double>()) / (na * nb);
}

std::vector<std::string> dedup(
    std::span<const std::pair<std::string, Eigen::VectorXf>> items,
    double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ValidationError("dedup threshold must be in (0, 1)");
  for (const auto& [id, e] : items) {
    if (e.size() == 0 || e.cast<double>().norm() == 0.0)
      throw ValidationError("zero-norm embedding for item " + id);
    if (e.size() != items.front().second.size())
      throw ValidationError("embedding dimension mismatch for item " + id);
  }

  std::vector<std::size_t> parent(items.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  const auto find = [&](std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      if (cosine_similarity(items[i].second, items[j].second) >= threshold)
        parent[find(i)] = find(j);
    }
  }

  // Lowest id per component survives.
  std::vector<std::string> best(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t root = find(i);
    if (best[root].empty() || items[i].first < best[root])
      best[root] = items[i].first;
  }
  std::vector<std::string> keep;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (find(i) == i) keep.push_back(best[i]);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

NegativeFilterResult negative_filter(const Eigen::VectorXf& image_embedding,
                                     std::span<const ConceptEmbedding> negatives,
                                     std::span<const ConceptEmbedding> positives,
                                     double margin) {
  NegativeFilterResult res;
  if (negatives.empty()) return res;

  res.best_positive = -1.0;
  for (const ConceptEmbedding& c : positives) {
    res.best_positive =
        std::max(res.best_positive, cosine_similarity(image_embedding, c.embedding));
  }
  double worst = -2.0;
  std::string worst_name;
  for (const ConceptEmbedding& c : negatives) {
    const double cos = cosine_similarity(image_embedding, c.embedding);
    if (cos > worst) {
      worst = cos;
      worst_name = c.name;
    }
  }
  res.best_negative = worst;
  if (worst > res.best_positive + margin) {
    res.keep = false;
    res.offending_concept = worst_name;
  }
  return res;
}

QualityReport quality_gate(const RasterImage& image, const CurationConfig& cfg,
                           const std::string& image_id) {
  if (!image.valid()) throw ValidationError("quality_gate: invalid image");

  QualityReport report;
  report.image_id = image_id;

  const double min_side = std::min(image.width, image.height);
  const double aspect = static_cast<double>(image.width) / image.height;
  const double blur = laplacian_variance(image);

  report.checks.push_back(
      {"min_side", min_side, min_side >= static_cast<double>(cfg.min_side)});
  report.checks.push_back({"aspect", aspect,
                           aspect >= cfg.aspect_range.first &&
                               aspect <= cfg.aspect_range.second});
  report.checks.push_back({"blur", blur, blur >= cfg.blur_min_variance});

  report.passed = true;
  for (const QualityCheck& check : report.checks) {
    if (!check.passed) {
      report.passed = false;
      if (report.reason.empty()) report.reason = check.name;
    }
  }
  return report;
}

}  // namespace facadefixer
