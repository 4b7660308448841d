#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "facadefixer/errors.hpp"

namespace facadefixer {

// Reference to an image; pixel data travels separately (see raster.hpp).
struct ImageRef {
  std::string id;
  std::string uri;
  int width = 0;
  int height = 0;
  std::optional<std::string> checksum;
};

enum class DefectCategory {
  Crack,
  Spalling,
  RustStain,
  DegradedPlaster,
  Vegetation,
  Contaminant,
};

inline constexpr std::array<DefectCategory, 6> kAllCategories = {
    DefectCategory::Crack,          DefectCategory::Spalling,
    DefectCategory::RustStain,      DefectCategory::DegradedPlaster,
    DefectCategory::Vegetation,     DefectCategory::Contaminant,
};

// Wire/file name, e.g. "rust_stain".
std::string_view category_name(DefectCategory c);
// Display name, e.g. "Rust Stain".
std::string_view category_label(DefectCategory c);
DefectCategory category_from_name(std::string_view name);

/// Axis-aligned box in pixel units. Origin is the image top-left corner, x
/// grows rightward, y downward; the box covers the half-open pixel range
/// [x, x+w) x [y, y+h).
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double aspect() const { return h > 0.0 ? w / h : 0.0; }

  bool operator==(const BoundingBox&) const = default;
};

inline bool box_valid(const BoundingBox& b) { return b.w > 0.0 && b.h > 0.0; }

inline bool box_within(const BoundingBox& b, int width, int height) {
  return b.x >= 0.0 && b.y >= 0.0 && b.x2() <= static_cast<double>(width) &&
         b.y2() <= static_cast<double>(height);
}

/// Intersection-over-union over continuous rectangle area. Symmetric, 0 for
/// disjoint boxes, 1 for identical ones.
double box_iou(const BoundingBox& a, const BoundingBox& b);

struct Detection {
  BoundingBox box;
  DefectCategory category = DefectCategory::Crack;
  double confidence = 0.0;
  std::string source;  // id of the expert that produced it

  bool operator==(const Detection&) const = default;
};

// {0,1} grid storage. Rows index y, columns index x. Eigen's default
// column-major layout makes the linear pixel order run down each column, left
// to right, which is exactly the RLE scan order below.
using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Binary mask over an image. Serialized as a run-length string
/// "<width>x<height>:<c0>,<c1>,..." where counts alternate between runs of
/// zeros and ones, starting with zeros (c0 may be 0), scanning column-major.
/// The encoding is canonical: encode(decode(s)) == s for every valid s.
class BinaryMask {
 public:
  BinaryMask() = default;

  static BinaryMask zeros(int width, int height);
  static BinaryMask from_grid(MaskGrid grid);
  static BinaryMask from_rle(const std::string& rle);

  std::string to_rle() const;

  int width() const { return static_cast<int>(grid_.cols()); }
  int height() const { return static_cast<int>(grid_.rows()); }
  const MaskGrid& grid() const { return grid_; }

  bool at(int x, int y) const { return grid_(y, x) != 0; }
  void set(int x, int y, bool v) { grid_(y, x) = v ? 1 : 0; }

  /// Number of set pixels.
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
  bool same_shape(const BinaryMask& other) const {
    return width() == other.width() && height() == other.height();
  }

  bool operator==(const BinaryMask& other) const {
    return same_shape(other) && (grid_ == other.grid_).all();
  }

 private:
  MaskGrid grid_;
};

/// Pixel-wise OR over a non-empty list of same-shaped masks.
BinaryMask mask_union(std::span<const BinaryMask> masks);

/// |a AND b| / |a OR b|; 1.0 when both masks are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Keeps only the mask pixels covered by at least one anchor rectangle.
/// An empty anchor list yields the all-zero mask. Anchors must lie inside the
/// mask's image bounds.
BinaryMask clip_mask_to_boxes(const BinaryMask& mask,
                              std::span<const BoundingBox> anchors);

/// Morphological dilation with a square structuring element of side
/// 2*radius + 1. radius 0 is the identity.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// Tight bounding box of the set pixels; nullopt for an empty mask.
std::optional<BoundingBox> mask_tight_bbox(const BinaryMask& mask);

}  // namespace facadefixer
