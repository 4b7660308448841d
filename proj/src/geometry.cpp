#include "facadefixer/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "facadefixer/rng.hpp"

namespace facadefixer {

namespace {

constexpr std::array<std::string_view, 6> kNames = {
    "crack", "spalling", "rust_stain", "degraded_plaster", "vegetation",
    "contaminant"};
constexpr std::array<std::string_view, 6> kLabels = {
    "Crack", "Spalling", "Rust Stain", "Degraded Plaster", "Vegetation",
    "Contaminant"};

}  // namespace

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string_view category_name(DefectCategory c) {
  return kNames[static_cast<std::size_t>(c)];
}

std::string_view category_label(DefectCategory c) {
  return kLabels[static_cast<std::size_t>(c)];
}

DefectCategory category_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<DefectCategory>(i);
  }
  throw ValidationError("unknown defect category: " + std::string(name));
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix =
      std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const double iy =
      std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BinaryMask BinaryMask::zeros(int width, int height) {
  if (width < 1 || height < 1)
    throw ValidationError("mask dimensions must be positive");
  BinaryMask m;
  m.grid_ = MaskGrid::Zero(height, width);
  return m;
}

BinaryMask BinaryMask::from_grid(MaskGrid grid) {
  if (grid.rows() < 1 || grid.cols() < 1)
    throw ValidationError("mask dimensions must be positive");
  BinaryMask m;
  m.grid_ = (grid != 0).cast<std::uint8_t>();
  return m;
}

BinaryMask BinaryMask::from_rle(const std::string& rle) {
  const auto bad = [&](const std::string& why) {
    return ValidationError("invalid RLE \"" + rle + "\": " + why);
  };

  const std::size_t x_pos = rle.find('x');
  const std::size_t colon = rle.find(':');
  if (x_pos == std::string::npos || colon == std::string::npos ||
      x_pos > colon) {
    throw bad("expected \"<width>x<height>:<counts>\"");
  }

  const auto parse_int = [&](std::string_view s) -> std::int64_t {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 0)
      throw bad("bad integer \"" + std::string(s) + "\"");
    return v;
  };

  const std::int64_t width = parse_int(std::string_view(rle).substr(0, x_pos));
  const std::int64_t height =
      parse_int(std::string_view(rle).substr(x_pos + 1, colon - x_pos - 1));
  if (width < 1 || height < 1) throw bad("non-positive dimensions");

  std::vector<std::int64_t> counts;
  std::string_view rest = std::string_view(rle).substr(colon + 1);
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    counts.push_back(parse_int(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (counts.empty()) throw bad("no run counts");

  std::int64_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i > 0 && counts[i] == 0) throw bad("zero-length run");
    total += counts[i];
  }
  if (total != width * height) throw bad("counts do not cover the grid");

  BinaryMask m;
  m.grid_ = MaskGrid::Zero(height, width);
  std::uint8_t* data = m.grid_.data();  // column-major scan order
  std::int64_t pos = 0;
  std::uint8_t value = 0;
  for (std::int64_t c : counts) {
    if (value != 0) std::fill(data + pos, data + pos + c, std::uint8_t{1});
    pos += c;
    value = static_cast<std::uint8_t>(1 - value);
  }
  return m;
}

std::string BinaryMask::to_rle() const {
  if (grid_.size() == 0) throw ValidationError("cannot encode an unbound mask");
  std::string out = std::to_string(width()) + "x" + std::to_string(height()) + ":";
  const std::uint8_t* data = grid_.data();
  const std::int64_t n = grid_.size();
  std::uint8_t value = 0;
  std::int64_t run = 0;
  bool first = true;
  for (std::int64_t i = 0; i < n; ++i) {
    if (data[i] == value) {
      ++run;
    } else {
      out += (first ? "" : ",") + std::to_string(run);
      first = false;
      value = data[i];
      run = 1;
    }
  }
  out += (first ? "" : ",") + std::to_string(run);
  return out;
}

std::int64_t BinaryMask::count() const {
  return static_cast<std::int64_t>((grid_ != 0).count());
}

BinaryMask mask_union(std::span<const BinaryMask> masks) {
  if (masks.empty())
    throw ValidationError("mask_union requires at least one mask");
  MaskGrid acc = masks.front().grid();
  for (std::size_t i = 1; i < masks.size(); ++i) {
    if (!masks[i].same_shape(masks.front()))
      throw ValidationError("mask_union: shape mismatch at index " +
                            std::to_string(i));
    acc = acc.max(masks[i].grid());
  }
  return BinaryMask::from_grid(std::move(acc));
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ValidationError("mask_iou: shape mismatch");
  const auto inter =
      static_cast<double>((a.grid().min(b.grid()) != 0).count());
  const auto uni = static_cast<double>((a.grid().max(b.grid()) != 0).count());
  if (uni == 0.0) return 1.0;  // both empty
  return inter / uni;
}

BinaryMask clip_mask_to_boxes(const BinaryMask& mask,
                              std::span<const BoundingBox> anchors) {
  const int w = mask.width();
  const int h = mask.height();
  MaskGrid keep = MaskGrid::Zero(h, w);
  for (const BoundingBox& a : anchors) {
    if (!box_valid(a) || !box_within(a, w, h))
      throw ValidationError("clip_mask_to_boxes: anchor outside image bounds");
    // Pixel (r, c) is covered iff c in [x, x+w) and r in [y, y+h).
    const int c0 = static_cast<int>(std::ceil(a.x));
    const int c1 = static_cast<int>(std::ceil(a.x2())) - 1;
    const int r0 = static_cast<int>(std::ceil(a.y));
    const int r1 = static_cast<int>(std::ceil(a.y2())) - 1;
    if (c1 < c0 || r1 < r0) continue;
    keep.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setConstant(1);
  }
  return BinaryMask::from_grid(mask.grid().min(keep));
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ValidationError("dilate: negative radius");
  if (radius == 0) return mask;
  const int w = mask.width();
  const int h = mask.height();
  // Square structuring element is separable: rows then columns.
  MaskGrid horiz = MaskGrid::Zero(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask.grid()(r, c) == 0) continue;
      const int c0 = std::max(0, c - radius);
      const int c1 = std::min(w - 1, c + radius);
      horiz.row(r).segment(c0, c1 - c0 + 1).setConstant(1);
    }
  }
  MaskGrid out = MaskGrid::Zero(h, w);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) {
      if (horiz(r, c) == 0) continue;
      const int r0 = std::max(0, r - radius);
      const int r1 = std::min(h - 1, r + radius);
      out.col(c).segment(r0, r1 - r0 + 1).setConstant(1);
    }
  }
  return BinaryMask::from_grid(std::move(out));
}

std::optional<BoundingBox> mask_tight_bbox(const BinaryMask& mask) {
  int min_r = mask.height(), max_r = -1, min_c = mask.width(), max_c = -1;
  for (int c = 0; c < mask.width(); ++c) {
    for (int r = 0; r < mask.height(); ++r) {
      if (mask.grid()(r, c) == 0) continue;
      min_r = std::min(min_r, r);
      max_r = std::max(max_r, r);
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
    }
  }
  if (max_r < 0) return std::nullopt;
  return BoundingBox{static_cast<double>(min_c), static_cast<double>(min_r),
                     static_cast<double>(max_c - min_c + 1),
                     static_cast<double>(max_r - min_r + 1)};
}

}  // namespace facadefixer
