#include "facadefixer/geometry.hpp"

#include <doctest.h>

#include "facadefixer/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace facadefixer;

namespace {

BoundingBox random_int_box(SplitMix64& rng, int bound) {
  const double w = static_cast<double>(rng.uniform_int(1, bound / 2));
  const double h = static_cast<double>(rng.uniform_int(1, bound / 2));
  const double x = static_cast<double>(rng.uniform_int(0, bound - static_cast<int>(w)));
  const double y = static_cast<double>(rng.uniform_int(0, bound - static_cast<int>(h)));
  return {x, y, w, h};
}

}  // namespace

TEST_CASE("box_iou hand cases") {
  const BoundingBox unit{0, 0, 10, 10};
  CHECK(box_iou(unit, unit) == doctest::Approx(1.0));
  CHECK(box_iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
  // 5px shift in both axes: 25 overlap over 175 union.
  CHECK(box_iou({0, 0, 10, 10}, {5, 5, 10, 10}) ==
        doctest::Approx(25.0 / 175.0).epsilon(1e-12));
}

TEST_CASE("box_iou is symmetric and matches the rasterization oracle") {
  SplitMix64 rng(42);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox a = random_int_box(rng, 64);
    const BoundingBox b = random_int_box(rng, 64);
    const double ab = box_iou(a, b);
    CHECK(ab == box_iou(b, a));
    CHECK(std::abs(ab - oracle::rasterized_iou(a, b)) < 1e-9);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("RLE round trip on random grids") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(1, 256));
    const int h = static_cast<int>(rng.uniform_int(1, 256));
    const BinaryMask m = support::random_mask(rng, w, h, rng.uniform(0.0, 1.0));
    const std::string rle = m.to_rle();
    CHECK(BinaryMask::from_rle(rle) == m);
    CHECK(BinaryMask::from_rle(rle).to_rle() == rle);
  }
}

TEST_CASE("RLE string format is column-major with zeros first") {
  // 2x2 grid, set pixel at (x=1, y=0): column-major scan order is
  // (0,0),(0,1),(1,0),(1,1) -> runs 2 zeros, 1 one, 1 zero.
  BinaryMask m = BinaryMask::zeros(2, 2);
  m.set(1, 0, true);
  CHECK(m.to_rle() == "2x2:2,1,1");
  // All-zero and leading-one cases.
  CHECK(BinaryMask::zeros(3, 2).to_rle() == "3x2:6");
  BinaryMask first = BinaryMask::zeros(2, 1);
  first.set(0, 0, true);
  CHECK(first.to_rle() == "2x1:0,1,1");
}

TEST_CASE("RLE rejects malformed strings") {
  CHECK_THROWS_AS(BinaryMask::from_rle("4x4:1,2"), ValidationError);     // short
  CHECK_THROWS_AS(BinaryMask::from_rle("4x4:16,1"), ValidationError);    // long
  CHECK_THROWS_AS(BinaryMask::from_rle("4x4:1,0,15"), ValidationError);  // zero run
  CHECK_THROWS_AS(BinaryMask::from_rle("0x4:0"), ValidationError);
  CHECK_THROWS_AS(BinaryMask::from_rle("4:16"), ValidationError);
  CHECK_THROWS_AS(BinaryMask::from_rle("4x4:"), ValidationError);
}

TEST_CASE("mask_union basics and oracle") {
  SplitMix64 rng(11);
  const BinaryMask m = support::random_mask(rng, 9, 5);
  SUBCASE("single input is the identity") {
    const std::vector<BinaryMask> one = {m};
    CHECK(mask_union(one) == m);
  }
  SUBCASE("zero mask is the identity") {
    const std::vector<BinaryMask> two = {m, BinaryMask::zeros(9, 5)};
    CHECK(mask_union(two) == m);
  }
  SUBCASE("disjoint single pixels") {
    BinaryMask a = BinaryMask::zeros(4, 4);
    BinaryMask b = BinaryMask::zeros(4, 4);
    a.set(0, 0, true);
    b.set(3, 3, true);
    const std::vector<BinaryMask> two = {a, b};
    CHECK(mask_union(two).count() == 2);
  }
  SUBCASE("matches the per-pixel oracle") {
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<BinaryMask> masks;
      const int n = static_cast<int>(rng.uniform_int(1, 4));
      for (int i = 0; i < n; ++i) masks.push_back(support::random_mask(rng, 13, 7));
      CHECK(mask_union(masks) == oracle::pixel_or(masks));
    }
  }
  SUBCASE("shape mismatch and empty list are rejected") {
    const std::vector<BinaryMask> bad = {m, BinaryMask::zeros(5, 9)};
    CHECK_THROWS_AS(mask_union(bad), ValidationError);
    CHECK_THROWS_AS(mask_union(std::vector<BinaryMask>{}), ValidationError);
  }
}

TEST_CASE("mask_union is commutative, associative, idempotent") {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const BinaryMask a = support::random_mask(rng, 8, 8);
    const BinaryMask b = support::random_mask(rng, 8, 8);
    const BinaryMask c = support::random_mask(rng, 8, 8);
    const std::vector<BinaryMask> abc = {a, b, c};
    const std::vector<BinaryMask> cba = {c, b, a};
    CHECK(mask_union(abc) == mask_union(cba));
    const std::vector<BinaryMask> ab = {a, b};
    const std::vector<BinaryMask> ab_c = {mask_union(ab), c};
    CHECK(mask_union(abc) == mask_union(ab_c));
    const std::vector<BinaryMask> aa = {a, a};
    CHECK(mask_union(aa) == a);
  }
}

TEST_CASE("mask_iou hand cases and oracle") {
  SplitMix64 rng(17);
  BinaryMask nonempty = BinaryMask::zeros(10, 10);
  nonempty.set(4, 4, true);
  CHECK(mask_iou(nonempty, nonempty) == 1.0);

  BinaryMask a = BinaryMask::zeros(6, 6);
  BinaryMask b = BinaryMask::zeros(6, 6);
  a.set(0, 0, true);
  b.set(5, 5, true);
  CHECK(mask_iou(a, b) == 0.0);

  // Two 2x2 blocks shifted by 1px horizontally: overlap 2, union 6.
  BinaryMask p = BinaryMask::zeros(10, 10);
  BinaryMask q = BinaryMask::zeros(10, 10);
  for (int y = 2; y < 4; ++y) {
    for (int x = 2; x < 4; ++x) p.set(x, y, true);
    for (int x = 3; x < 5; ++x) q.set(x, y, true);
  }
  CHECK(mask_iou(p, q) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));

  CHECK(mask_iou(BinaryMask::zeros(4, 4), BinaryMask::zeros(4, 4)) == 1.0);

  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask x = support::random_mask(rng, 12, 9);
    const BinaryMask y = support::random_mask(rng, 12, 9);
    CHECK(mask_iou(x, y) == oracle::pixel_iou(x, y));
  }
  CHECK_THROWS_AS(mask_iou(a, BinaryMask::zeros(5, 6)), ValidationError);
}

TEST_CASE("clip_mask_to_boxes") {
  SplitMix64 rng(23);
  BinaryMask m = BinaryMask::zeros(10, 10);
  m.set(2, 2, true);  // inside the anchor below
  m.set(8, 8, true);  // outside
  const std::vector<BoundingBox> anchor = {{0, 0, 5, 5}};
  const BinaryMask clipped = clip_mask_to_boxes(m, anchor);
  CHECK(clipped.at(2, 2));
  CHECK_FALSE(clipped.at(8, 8));
  CHECK(clipped.count() == 1);

  SUBCASE("empty anchors zero the mask") {
    CHECK(clip_mask_to_boxes(m, std::vector<BoundingBox>{}).count() == 0);
  }
  SUBCASE("full-image anchor is the identity") {
    const std::vector<BoundingBox> full = {{0, 0, 10, 10}};
    CHECK(clip_mask_to_boxes(m, full) == m);
  }
  SUBCASE("out-of-bounds anchor is rejected") {
    const std::vector<BoundingBox> bad = {{5, 5, 6, 6}};
    CHECK_THROWS_AS(clip_mask_to_boxes(m, bad), ValidationError);
  }
  SUBCASE("output is always a subset of the input") {
    for (int trial = 0; trial < 20; ++trial) {
      const BinaryMask mask = support::random_mask(rng, 16, 12);
      std::vector<BoundingBox> anchors;
      const int n = static_cast<int>(rng.uniform_int(0, 3));
      for (int i = 0; i < n; ++i) {
        const double w = static_cast<double>(rng.uniform_int(1, 8));
        const double h = static_cast<double>(rng.uniform_int(1, 8));
        anchors.push_back(
            {static_cast<double>(rng.uniform_int(0, 16 - static_cast<int>(w))),
             static_cast<double>(rng.uniform_int(0, 12 - static_cast<int>(h))), w,
             h});
      }
      const BinaryMask out = clip_mask_to_boxes(mask, anchors);
      for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 16; ++x) {
          if (out.at(x, y)) CHECK(mask.at(x, y));
        }
      }
    }
  }
}

TEST_CASE("dilate matches the brute-force oracle") {
  SplitMix64 rng(29);
  SUBCASE("single pixel, radius 1 becomes a 3x3 square") {
    BinaryMask m = BinaryMask::zeros(7, 7);
    m.set(3, 3, true);
    const BinaryMask d = dilate(m, 1);
    CHECK(d.count() == 9);
    for (int y = 2; y <= 4; ++y) {
      for (int x = 2; x <= 4; ++x) CHECK(d.at(x, y));
    }
  }
  SUBCASE("radius 0 is the identity") {
    const BinaryMask m = support::random_mask(rng, 11, 6);
    CHECK(dilate(m, 0) == m);
  }
  SUBCASE("random masks") {
    for (int trial = 0; trial < 25; ++trial) {
      const BinaryMask m = support::random_mask(rng, 14, 10, 0.15);
      const int r = static_cast<int>(rng.uniform_int(0, 4));
      CHECK(dilate(m, r) == oracle::brute_dilate(m, r));
    }
  }
}

TEST_CASE("mask_tight_bbox") {
  CHECK_FALSE(mask_tight_bbox(BinaryMask::zeros(5, 5)).has_value());
  BinaryMask m = BinaryMask::zeros(10, 8);
  m.set(3, 2, true);
  m.set(6, 5, true);
  const auto bb = mask_tight_bbox(m);
  REQUIRE(bb.has_value());
  CHECK(bb->x == 3);
  CHECK(bb->y == 2);
  CHECK(bb->w == 4);
  CHECK(bb->h == 4);
}

TEST_CASE("category names round trip") {
  for (DefectCategory c : kAllCategories) {
    CHECK(category_from_name(category_name(c)) == c);
  }
  CHECK_THROWS_AS(category_from_name("mould"), ValidationError);
}
