#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "facadefixer/raster.hpp"

namespace facadefixer {

struct ConceptEmbedding {
  std::string name;
  Eigen::VectorXf embedding;
};

struct CurationConfig {
  double dedup_threshold = 0.95;
  std::vector<ConceptEmbedding> negative_concepts;
  double negative_margin = 0.0;
  int min_side = 512;
  std::pair<double, double> aspect_range = {1.0 / 3.0, 3.0};
  double blur_min_variance = 100.0;
};

/// Cosine similarity; throws when either vector has zero norm.
double cosine_similarity(const Eigen::VectorXf& a, const Eigen::VectorXf& b);

/// Semantic deduplication: connects items whose pairwise cosine similarity is
/// >= threshold and keeps the lowest id of each connected component. Returns
/// the kept ids, sorted.
std::vector<std::string> dedup(
    std::span<const std::pair<std::string, Eigen::VectorXf>> items,
    double threshold);

struct NegativeFilterResult {
  bool keep = true;
  std::string offending_concept;  // set when dropped
  double best_negative = 0.0;
  double best_positive = 0.0;
};

/// Drops an image when its best cosine against any negative concept strictly
/// exceeds its best cosine against the positive concepts plus `margin`.
/// An empty negative list keeps everything.
NegativeFilterResult negative_filter(const Eigen::VectorXf& image_embedding,
                                     std::span<const ConceptEmbedding> negatives,
                                     std::span<const ConceptEmbedding> positives,
                                     double margin);

struct QualityCheck {
  std::string name;
  double value = 0.0;
  bool passed = false;
};

struct QualityReport {
  std::string image_id;
  bool passed = false;
  std::vector<QualityCheck> checks;
  std::string reason;  // first failing check, empty when passed
};

/// Screens an image on minimum side length, aspect ratio, and
/// variance-of-Laplacian blur score, in that order. All checks are always
/// evaluated; `reason` names the first failure.
QualityReport quality_gate(const RasterImage& image, const CurationConfig& cfg,
                           const std::string& image_id);

}  // namespace facadefixer
