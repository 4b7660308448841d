#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "facadefixer/evaluation.hpp"
#include "facadefixer/raster.hpp"

namespace facadefixer {

/// Per-image annotation record; the on-disk sidecar format is
/// {"image": {"id", "width", "height"}, "instances": [{"bbox": [x,y,w,h],
/// "category", "confidence"?, "mask_rle"?}]}.
struct AnnotatedImage {
  struct Instance {
    BoundingBox bbox;
    DefectCategory category = DefectCategory::Crack;
    std::optional<double> confidence;
    std::optional<BinaryMask> mask;
  };

  ImageRef image;
  std::vector<Instance> instances;
};

nlohmann::json annotation_to_json(const AnnotatedImage& ann);
AnnotatedImage annotation_from_json(const nlohmann::json& j);

void write_annotation(const AnnotatedImage& ann, const std::filesystem::path& path);
AnnotatedImage read_annotation(const std::filesystem::path& path);

/// Loads every *.json sidecar in a directory, sorted by image id.
std::vector<AnnotatedImage> load_annotation_dir(const std::filesystem::path& dir);

/// Flattens annotation records into evaluation inputs.
std::vector<PredictedItem> to_predictions(const std::vector<AnnotatedImage>& anns);
std::vector<GroundTruthItem> to_ground_truths(const std::vector<AnnotatedImage>& anns);

/// Per-image, per-class mask union for segmentation metrics.
std::map<std::string, std::map<DefectCategory, BinaryMask>> to_class_masks(
    const std::vector<AnnotatedImage>& anns);

// Small file helpers shared by the pipeline and the CLI.
std::string slurp_file(const std::filesystem::path& path);
void spit_file(const std::filesystem::path& path, const std::string& bytes);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace facadefixer
