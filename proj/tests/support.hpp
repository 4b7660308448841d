// Shared fixture builders for the test suites.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "facadefixer/annotations.hpp"
#include "facadefixer/experts.hpp"
#include "facadefixer/gateway.hpp"
#include "facadefixer/memory_bank.hpp"
#include "facadefixer/rng.hpp"

namespace support {

using namespace facadefixer;

class ScopedTempDir {
 public:
  explicit ScopedTempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ffx-" + tag + "-" + std::to_string(now_ms()) + "-" +
             std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~ScopedTempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

inline BinaryMask random_mask(SplitMix64& rng, int w, int h, double density = 0.3) {
  BinaryMask m = BinaryMask::zeros(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (rng.chance(density)) m.set(x, y, true);
    }
  }
  return m;
}

inline Eigen::VectorXf random_unit_vector(SplitMix64& rng, int dim) {
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  if (v.norm() < 1e-9f) v[0] = 1.0f;
  return v.normalized();
}

// A textured wall-like image: smooth gradient plus brick-ish banding and
// seeded speckle, so blur and embedding fixtures are non-degenerate.
inline RasterImage wall_image(std::uint64_t seed, int w, int h) {
  SplitMix64 rng(mix_seed(seed, "wall"));
  const int base_r = static_cast<int>(rng.uniform_int(120, 190));
  const int base_g = static_cast<int>(rng.uniform_int(110, 180));
  const int base_b = static_cast<int>(rng.uniform_int(100, 170));
  RasterImage img = RasterImage::filled(w, h, 0, 0, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int band = ((y / 8) % 2 == 0 && x % 16 == 0) ? -35 : 0;
      const int grad = (x * 20) / w;
      const int noise = static_cast<int>(rng.uniform_int(-6, 6));
      std::uint8_t* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(std::clamp(base_r + band + grad + noise, 0, 255));
      p[1] = static_cast<std::uint8_t>(std::clamp(base_g + band + grad + noise, 0, 255));
      p[2] = static_cast<std::uint8_t>(std::clamp(base_b + band + grad + noise, 0, 255));
    }
  }
  return img;
}

// A defect patch: dark blob on a light ground with the blob as its mask.
inline MemoryEntry defect_entry(std::uint64_t seed, DefectCategory category,
                                int size, int dim) {
  SplitMix64 rng(mix_seed(seed, "entry"));
  MemoryEntry entry;
  entry.id = "fix-" + std::string(category_name(category)) + "-" +
             std::to_string(seed);
  entry.crop_pixels = RasterImage::filled(size, size, 200, 196, 188);
  entry.mask = BinaryMask::zeros(size, size);
  const double cx = size / 2.0, cy = size / 2.0;
  const double rx = size * rng.uniform(0.25, 0.4);
  const double ry = size * rng.uniform(0.25, 0.4);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        entry.mask.set(x, y, true);
        std::uint8_t* p = entry.crop_pixels.at(x, y);
        p[0] = static_cast<std::uint8_t>(40 + rng.uniform_int(0, 30));
        p[1] = static_cast<std::uint8_t>(30 + rng.uniform_int(0, 30));
        p[2] = static_cast<std::uint8_t>(25 + rng.uniform_int(0, 30));
      }
    }
  }
  entry.category = category;
  entry.text = std::string(category_name(category)) + " fixture";
  entry.embedding = random_unit_vector(rng, dim);
  entry.provenance = Provenance::Real;
  entry.created_at_ms = 1700000000000 + static_cast<std::int64_t>(seed);
  entry.crop = make_ref(entry.crop_pixels, entry.id);
  return entry;
}

// Bank with one modest entry per category (plus extras), embedding dim `dim`.
inline MemoryBank seeded_bank(std::uint64_t seed, int dim, int per_category = 2) {
  MemoryBank bank(dim);
  std::uint64_t n = 0;
  for (DefectCategory c : kAllCategories) {
    for (int i = 0; i < per_category; ++i)
      bank.insert(defect_entry(seed + 100 * n++ + 7, c, 12 + 2 * i, dim));
  }
  return bank;
}

inline std::vector<ExpertDescriptor> mock_roster(int embed_dim = 64) {
  nlohmann::json j{{"experts", nlohmann::json::array()}};
  const auto add = [&](const char* id, const char* kind, const char* endpoint) {
    j["experts"].push_back({{"id", id}, {"kind", kind}, {"endpoint", endpoint}});
  };
  add("det-a", "detector", "mock:1");
  add("det-b", "detector", "mock:2");
  add("det-c", "detector", "mock:3");
  add("crack-a", "crack_segmenter", "mock:4");
  add("crack-b", "crack_segmenter", "mock:5");
  add("sam", "promptable_segmenter", "mock:6");
  add("gen", "generator", "mock:7");
  add("adj", "adjudicator", "mock:8");
  j["experts"].push_back({{"id", "clip"},
                          {"kind", "embedder"},
                          {"endpoint", "mock:9"},
                          {"params", {{"dim", embed_dim}}}});
  return parse_roster(j);
}

// Writes `n` wall images (and optional detection ground truth derived from
// the mock scene) into a directory.
inline void write_fixture_images(const std::filesystem::path& dir, int n,
                                 std::uint64_t seed, int w = 64, int h = 64,
                                 const std::filesystem::path* gt_dir = nullptr) {
  std::filesystem::create_directories(dir);
  if (gt_dir) std::filesystem::create_directories(*gt_dir);
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img%03d", i);
    const RasterImage img = wall_image(seed + static_cast<std::uint64_t>(i), w, h);
    write_ppm(img, dir / (std::string(name) + ".ppm"));
    if (gt_dir) {
      AnnotatedImage ann;
      ann.image = make_ref(img, name);
      for (const Detection& d : mock_scene_detections(ann.image)) {
        AnnotatedImage::Instance inst;
        inst.bbox = d.box;
        inst.category = d.category;
        ann.instances.push_back(inst);
      }
      write_annotation(ann, *gt_dir / (std::string(name) + ".json"));
    }
  }
}

}  // namespace support
