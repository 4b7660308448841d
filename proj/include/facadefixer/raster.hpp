#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facadefixer/geometry.hpp"

namespace facadefixer {

/// In-memory RGB image, 8 bits per channel, row-major interleaved.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  static RasterImage filled(int width, int height, std::uint8_t r,
                            std::uint8_t g, std::uint8_t b);

  bool valid() const {
    return width >= 1 && height >= 1 &&
           pixels.size() == static_cast<std::size_t>(width) * height * 3;
  }
  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  bool operator==(const RasterImage&) const = default;
};

/// FNV-1a content hash over dimensions and pixel bytes, as 16 hex chars.
std::string image_checksum(const RasterImage& img);

/// Builds an ImageRef describing an in-memory image.
ImageRef make_ref(const RasterImage& img, std::string id, std::string uri = "");

// Binary PPM (P6, maxval 255): the single lossless fixture format. Bit-exact
// round trip.
RasterImage parse_ppm(const std::string& bytes);
std::string serialize_ppm(const RasterImage& img);
RasterImage read_ppm(const std::filesystem::path& path);
void write_ppm(const RasterImage& img, const std::filesystem::path& path);

/// Luma plane (0.299 R + 0.587 G + 0.114 B), rows index y.
Eigen::ArrayXXd to_grayscale(const RasterImage& img);

/// Variance of the 4-neighbor Laplacian (center -4, cross neighbors +1) over
/// interior pixels; border rows/columns are excluded rather than zero-padded.
/// Returns 0 when the image has no interior.
double laplacian_variance(const RasterImage& img);

/// Bilinear resample of the rectangle `src_rect` (integer pixel rect) of `img`
/// to dst_w x dst_h.
RasterImage resample_bilinear(const RasterImage& img, const BoundingBox& src_rect,
                              int dst_w, int dst_h);

/// Nearest-neighbor resample of a mask rectangle; label-preserving.
BinaryMask resample_mask_nearest(const BinaryMask& mask, const BoundingBox& src_rect,
                                 int dst_w, int dst_h);

/// Per-pixel blend weights for a patch mask: `alpha` on set pixels, decaying
/// linearly over `feather` one-pixel dilation rings outside the mask, zero
/// elsewhere.
Eigen::ArrayXXd feathered_weights(const BinaryMask& mask, double alpha, int feather);

/// Copy of `base` with `patch` alpha-blended at (x0, y0) using
/// feathered_weights(patch_mask, alpha, feather). Pixels with zero weight are
/// byte-identical to `base`.
RasterImage alpha_blend_patch(const RasterImage& base, const RasterImage& patch,
                              const BinaryMask& patch_mask, int x0, int y0,
                              double alpha, int feather);

/// Copy of `img` with every pixel inside `hole` replaced by the mean color of
/// the ring of width `ring_width` around the hole (the whole image's mean
/// color when the ring is empty). Pixels outside the hole are byte-identical
/// to the input.
RasterImage mean_ring_inpaint(const RasterImage& img, const BinaryMask& hole,
                              int ring_width);

/// Count of pixels whose RGB differs between two same-sized images.
std::int64_t count_changed_pixels(const RasterImage& a, const RasterImage& b);

/// Mask of pixels whose RGB differs between two same-sized images.
BinaryMask changed_pixel_mask(const RasterImage& a, const RasterImage& b);

/// Crops the integer rectangle `rect` out of `img`.
RasterImage crop_image(const RasterImage& img, const BoundingBox& rect);

/// Crops the integer rectangle `rect` out of `mask`.
BinaryMask crop_mask(const BinaryMask& mask, const BoundingBox& rect);

}  // namespace facadefixer
