#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "facadefixer/raster.hpp"

namespace facadefixer {

enum class Provenance { Real, Synthetic };

std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);

/// One defect knowledge tuple: the local patch, its mask, category, a textual
/// morphology description, and a retrieval embedding.
struct MemoryEntry {
  std::string id;
  ImageRef crop;           // dimensions and provenance uri of the patch
  RasterImage crop_pixels; // patch pixels, same dimensions as `crop`
  BinaryMask mask;         // patch-local mask, same dimensions as `crop`
  DefectCategory category = DefectCategory::Crack;
  std::string text;
  Eigen::VectorXf embedding;
  Provenance provenance = Provenance::Real;
  std::int64_t created_at_ms = 0;
};

/// A clean facade surface available as a recomposition canvas.
struct BackgroundTemplate {
  std::string id;
  ImageRef image;
  RasterImage image_pixels;
  Eigen::VectorXf embedding;
  Provenance provenance = Provenance::Real;
};

struct QuerySpec {
  std::optional<DefectCategory> category;
  Eigen::VectorXf embedding;
  int k = 1;
  std::optional<BoundingBox> region;
};

struct QueryHit {
  std::string id;
  double similarity = 0.0;
};

/// Returns true when the entry's mask tight bounding box can be placed inside
/// `region`: some uniform scale in [0.5, 1.0] must make it fit, and its aspect
/// ratio must be within a factor of 2 of the region's.
bool mask_fits_region(const BinaryMask& mask, const BoundingBox& region);

/// Embedding-indexed store of defect tuples and background templates.
/// Retrieval is an exact linear scan with cosine similarity; ties break by
/// ascending id. Single writer, many readers.
class MemoryBank {
 public:
  explicit MemoryBank(int embedding_dim = 512);

  MemoryBank(MemoryBank&&) = default;
  MemoryBank& operator=(MemoryBank&&) = default;

  int embedding_dim() const { return dim_; }

  std::string insert(MemoryEntry entry);
  std::string insert_background(BackgroundTemplate background);

  bool contains(const std::string& id) const;
  std::optional<MemoryEntry> find(const std::string& id) const;
  std::size_t size() const;
  std::size_t background_count() const;

  std::vector<QueryHit> query_top_k(const QuerySpec& spec) const;

  /// Best-cosine entry of `category` whose mask fits `region`; nullopt when
  /// no entry fits.
  std::optional<MemoryEntry> retrieve_compatible_mask(
      const BoundingBox& region, DefectCategory category,
      const Eigen::VectorXf& embedding) const;

  /// Snapshot of all entries / backgrounds in id order.
  std::vector<MemoryEntry> entries() const;
  std::vector<BackgroundTemplate> backgrounds() const;

  /// On-disk layout: manifest.json + entries/<id>/{crop.ppm, mask.rle,
  /// meta.json, embedding.f32} + backgrounds/<id>/{image.ppm, meta.json,
  /// embedding.f32}. load(persist(bank)) is bit-exact.
  void persist(const std::filesystem::path& dir) const;
  static MemoryBank load(const std::filesystem::path& dir);

  static constexpr int kManifestVersion = 1;

 private:
  void validate_embedding(const Eigen::VectorXf& e, const std::string& id) const;

  int dim_;
  std::map<std::string, MemoryEntry> entries_;
  std::map<std::string, BackgroundTemplate> backgrounds_;
  mutable std::unique_ptr<std::shared_mutex> mutex_;
};

std::int64_t now_ms();

}  // namespace facadefixer
