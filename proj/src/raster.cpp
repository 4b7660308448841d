#include "facadefixer/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "facadefixer/rng.hpp"

namespace facadefixer {

RasterImage RasterImage::filled(int width, int height, std::uint8_t r,
                                std::uint8_t g, std::uint8_t b) {
  if (width < 1 || height < 1)
    throw ValidationError("image dimensions must be positive");
  RasterImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

std::string image_checksum(const RasterImage& img) {
  std::uint64_t h = fnv1a64(std::to_string(img.width) + "x" +
                            std::to_string(img.height));
  h = fnv1a64(img.pixels.data(), img.pixels.size(), h);
  return to_hex(h);
}

ImageRef make_ref(const RasterImage& img, std::string id, std::string uri) {
  ImageRef ref;
  ref.id = std::move(id);
  ref.uri = std::move(uri);
  ref.width = img.width;
  ref.height = img.height;
  ref.checksum = image_checksum(img);
  return ref;
}

RasterImage parse_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("not a binary PPM (P6) image");
  // Header tokens may be separated by whitespace and '#' comments.
  const auto next_int = [&]() -> int {
    for (;;) {
      int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    int v = -1;
    in >> v;
    if (!in) throw IoError("truncated PPM header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w < 1 || h < 1) throw IoError("PPM with non-positive dimensions");
  if (maxval != 255) throw IoError("unsupported PPM maxval");
  in.get();  // single whitespace byte after the header
  RasterImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError("truncated PPM pixel data");
  return img;
}

std::string serialize_ppm(const RasterImage& img) {
  if (!img.valid()) throw ValidationError("cannot serialize an invalid image");
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()),
             img.pixels.size());
  return out;
}

RasterImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_ppm(buf.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_ppm(const RasterImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path.string());
  const std::string bytes = serialize_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Eigen::ArrayXXd to_grayscale(const RasterImage& img) {
  Eigen::ArrayXXd gray(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.at(x, y);
      gray(y, x) = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return gray;
}

double laplacian_variance(const RasterImage& img) {
  if (img.width < 3 || img.height < 3) return 0.0;
  const Eigen::ArrayXXd g = to_grayscale(img);
  const int h = img.height;
  const int w = img.width;
  Eigen::ArrayXXd lap = g.block(0, 1, h - 2, w - 2) + g.block(2, 1, h - 2, w - 2) +
                        g.block(1, 0, h - 2, w - 2) + g.block(1, 2, h - 2, w - 2) -
                        4.0 * g.block(1, 1, h - 2, w - 2);
  const double mean = lap.mean();
  return (lap - mean).square().mean();
}

namespace {

struct IntRect {
  int x, y, w, h;
};

IntRect to_int_rect(const BoundingBox& r, int bound_w, int bound_h,
                    const char* who) {
  IntRect out{static_cast<int>(std::llround(r.x)),
              static_cast<int>(std::llround(r.y)),
              static_cast<int>(std::llround(r.w)),
              static_cast<int>(std::llround(r.h))};
  if (out.w < 1 || out.h < 1 || out.x < 0 || out.y < 0 ||
      out.x + out.w > bound_w || out.y + out.h > bound_h)
    throw ValidationError(std::string(who) + ": rectangle outside bounds");
  return out;
}

}  // namespace

RasterImage resample_bilinear(const RasterImage& img, const BoundingBox& src_rect,
                              int dst_w, int dst_h) {
  if (dst_w < 1 || dst_h < 1)
    throw ValidationError("resample: non-positive destination size");
  const IntRect src = to_int_rect(src_rect, img.width, img.height, "resample");
  RasterImage out;
  out.width = dst_w;
  out.height = dst_h;
  out.pixels.resize(static_cast<std::size_t>(dst_w) * dst_h * 3);
  const double sx = static_cast<double>(src.w) / dst_w;
  const double sy = static_cast<double>(src.h) / dst_h;
  for (int y = 0; y < dst_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.h - 1);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < dst_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.w - 1);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const std::uint8_t* p00 = img.at(src.x + x0, src.y + y0);
      const std::uint8_t* p01 = img.at(src.x + x1, src.y + y0);
      const std::uint8_t* p10 = img.at(src.x + x0, src.y + y1);
      const std::uint8_t* p11 = img.at(src.x + x1, src.y + y1);
      std::uint8_t* q = out.at(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = (1 - wy) * ((1 - wx) * p00[ch] + wx * p01[ch]) +
                         wy * ((1 - wx) * p10[ch] + wx * p11[ch]);
        q[ch] = static_cast<std::uint8_t>(std::llround(v));
      }
    }
  }
  return out;
}

BinaryMask resample_mask_nearest(const BinaryMask& mask, const BoundingBox& src_rect,
                                 int dst_w, int dst_h) {
  if (dst_w < 1 || dst_h < 1)
    throw ValidationError("resample: non-positive destination size");
  const IntRect src = to_int_rect(src_rect, mask.width(), mask.height(), "resample");
  BinaryMask out = BinaryMask::zeros(dst_w, dst_h);
  const double sx = static_cast<double>(src.w) / dst_w;
  const double sy = static_cast<double>(src.h) / dst_h;
  for (int y = 0; y < dst_h; ++y) {
    const int yy = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0,
                              src.h - 1);
    for (int x = 0; x < dst_w; ++x) {
      const int xx = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0,
                                src.w - 1);
      out.set(x, y, mask.at(src.x + xx, src.y + yy));
    }
  }
  return out;
}

Eigen::ArrayXXd feathered_weights(const BinaryMask& mask, double alpha, int feather) {
  if (alpha <= 0.0 || alpha > 1.0)
    throw ValidationError("alpha must be in (0, 1]");
  if (feather < 0) throw ValidationError("feather must be non-negative");
  Eigen::ArrayXXd weights =
      mask.grid().cast<double>() * alpha;
  BinaryMask prev = mask;
  for (int k = 1; k <= feather; ++k) {
    const BinaryMask grown = dilate(mask, k);
    const double ring_alpha =
        alpha * static_cast<double>(feather + 1 - k) / (feather + 1);
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) {
        if (grown.at(x, y) && !prev.at(x, y)) weights(y, x) = ring_alpha;
      }
    }
    prev = grown;
  }
  return weights;
}

RasterImage alpha_blend_patch(const RasterImage& base, const RasterImage& patch,
                              const BinaryMask& patch_mask, int x0, int y0,
                              double alpha, int feather) {
  if (patch.width != patch_mask.width() || patch.height != patch_mask.height())
    throw ValidationError("alpha_blend_patch: patch/mask shape mismatch");
  if (x0 < 0 || y0 < 0 || x0 + patch.width > base.width ||
      y0 + patch.height > base.height)
    throw ValidationError("alpha_blend_patch: patch outside base image");
  const Eigen::ArrayXXd weights = feathered_weights(patch_mask, alpha, feather);
  RasterImage out = base;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      const double wt = weights(y, x);
      if (wt <= 0.0) continue;
      const std::uint8_t* src = patch.at(x, y);
      std::uint8_t* dst = out.at(x0 + x, y0 + y);
      for (int ch = 0; ch < 3; ++ch) {
        dst[ch] = static_cast<std::uint8_t>(
            std::llround((1.0 - wt) * dst[ch] + wt * src[ch]));
      }
    }
  }
  return out;
}

RasterImage mean_ring_inpaint(const RasterImage& img, const BinaryMask& hole,
                              int ring_width) {
  if (hole.width() != img.width || hole.height() != img.height)
    throw ValidationError("mean_ring_inpaint: hole/image shape mismatch");
  if (ring_width < 0) throw ValidationError("ring width must be non-negative");
  std::int64_t sum[3] = {0, 0, 0};
  std::int64_t n = 0;
  const BinaryMask grown = dilate(hole, ring_width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!grown.at(x, y) || hole.at(x, y)) continue;
      const std::uint8_t* p = img.at(x, y);
      sum[0] += p[0];
      sum[1] += p[1];
      sum[2] += p[2];
      ++n;
    }
  }
  if (n == 0) {
    // Degenerate full-frame hole: fall back to the global mean color.
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const std::uint8_t* p = img.at(x, y);
        sum[0] += p[0];
        sum[1] += p[1];
        sum[2] += p[2];
        ++n;
      }
    }
  }
  std::uint8_t fill[3];
  for (int ch = 0; ch < 3; ++ch) {
    fill[ch] = static_cast<std::uint8_t>(
        std::llround(static_cast<double>(sum[ch]) / static_cast<double>(n)));
  }
  RasterImage out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!hole.at(x, y)) continue;
      std::uint8_t* p = out.at(x, y);
      p[0] = fill[0];
      p[1] = fill[1];
      p[2] = fill[2];
    }
  }
  return out;
}

std::int64_t count_changed_pixels(const RasterImage& a, const RasterImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("count_changed_pixels: shape mismatch");
  std::int64_t n = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (std::memcmp(a.at(x, y), b.at(x, y), 3) != 0) ++n;
    }
  }
  return n;
}

BinaryMask changed_pixel_mask(const RasterImage& a, const RasterImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("changed_pixel_mask: shape mismatch");
  BinaryMask m = BinaryMask::zeros(a.width, a.height);
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (std::memcmp(a.at(x, y), b.at(x, y), 3) != 0) m.set(x, y, true);
    }
  }
  return m;
}

RasterImage crop_image(const RasterImage& img, const BoundingBox& rect) {
  const IntRect r = to_int_rect(rect, img.width, img.height, "crop_image");
  RasterImage out;
  out.width = r.w;
  out.height = r.h;
  out.pixels.resize(static_cast<std::size_t>(r.w) * r.h * 3);
  for (int y = 0; y < r.h; ++y) {
    std::memcpy(out.at(0, y), img.at(r.x, r.y + y),
                static_cast<std::size_t>(r.w) * 3);
  }
  return out;
}

BinaryMask crop_mask(const BinaryMask& mask, const BoundingBox& rect) {
  const IntRect r = to_int_rect(rect, mask.width(), mask.height(), "crop_mask");
  return BinaryMask::from_grid(mask.grid().block(r.y, r.x, r.h, r.w));
}

}  // namespace facadefixer
