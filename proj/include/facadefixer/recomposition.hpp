#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facadefixer/gateway.hpp"
#include "facadefixer/memory_bank.hpp"

namespace facadefixer {

/// Semantic-inpainting work item: the frame plus the dilated union of its
/// instance masks.
struct InpaintJob {
  ImageRef image;
  RasterImage pixels;
  BinaryMask hole_mask;
  int dilation_radius = 0;
};

/// Fully resolved blend: which entry goes where on which background.
struct BlendSpec {
  BackgroundTemplate background;
  MemoryEntry entry;
  BoundingBox placement;
  double alpha = 1.0;
  int feather = 0;
  std::uint64_t seed = 0;
};

struct SampleLineage {
  std::string background_id;
  std::vector<std::string> entry_ids;
  std::uint64_t seed = 0;
  std::vector<std::string> notes;
};

/// A synthesized labeled sample: the image plus per-instance masks in image
/// coordinates.
struct AugmentedSample {
  RasterImage image;
  std::vector<std::pair<BinaryMask, DefectCategory>> instances;
  SampleLineage lineage;
};

struct ConsistencyReport {
  bool consistent = false;
  std::int64_t leakage_px = 0;
  double coverage = 0.0;  // minimum per-instance coverage, 1.0 with no instances
  std::vector<double> per_instance_coverage;
};

/// hole_mask = dilate(union of instance masks, radius), square structuring
/// element of side 2*radius + 1. Requires at least one instance mask.
InpaintJob build_inpaint_job(const ImageRef& image, const RasterImage& pixels,
                             std::span<const Detection> detections,
                             std::span<const BinaryMask> masks, int radius);

/// Runs semantic inpainting through the generator expert, producing a clean
/// background canvas. The returned template has no embedding yet.
BackgroundTemplate decouple(const InpaintJob& job, const ExpertDescriptor& generator,
                            const ExpertGateway& gateway);

/// Seeded-uniform placement of the entry's mask inside the background with a
/// 5% margin on every side, uniformly scaled by a factor in [0.5, 1.0].
/// Deterministic in (background id, entry id, seed).
BlendSpec plan_placement(const BackgroundTemplate& background,
                         const MemoryEntry& entry, std::uint64_t seed,
                         double alpha = 1.0, int feather = 0);

/// Blends the entry onto the background through the generator expert. Falls
/// back to the in-process blend with a lineage note if the generator fails.
AugmentedSample compose(const BlendSpec& spec, const ExpertDescriptor& generator,
                        const ExpertGateway& gateway);

/// Checks that the sample only changed pixels inside the feather-dilated
/// instance masks (leakage_px == 0) and actually synthesized something on at
/// least 10% of each instance mask.
ConsistencyReport verify_label_consistency(const AugmentedSample& sample,
                                           const BackgroundTemplate& background,
                                           int feather);

using ImageEmbedder = std::function<Eigen::VectorXf(const RasterImage&)>;

/// Stores each instance of a sample as a synthetic memory entry (crop at the
/// instance's tight bounding box). Returns the new entry ids.
std::vector<std::string> archive_synthetic(const AugmentedSample& sample,
                                           MemoryBank& bank,
                                           const ImageEmbedder& embed,
                                           std::int64_t created_at_ms);

struct RecomposeOptions {
  int dilation_radius = 2;
  double alpha = 1.0;
  int feather = 1;
  std::vector<DefectCategory> categories;  // empty: categories present in detections
};

struct CycleNote {
  std::optional<DefectCategory> category;
  std::string status;  // "archived", "no_compatible_entry", "inconsistent", "error"
  std::string detail;
};

struct CycleResult {
  std::vector<AugmentedSample> samples;
  std::vector<CycleNote> notes;
  std::vector<std::string> archived_ids;
  std::optional<BackgroundTemplate> background;
};

struct RecomposeContext {
  const ExpertGateway& gateway;
  ExpertDescriptor generator;
  ExpertDescriptor embedder;
  std::function<std::int64_t()> clock = now_ms;
};

/// One full recomposition cycle for one image: decouple, retrieve a
/// compatible entry per requested category, place, compose, verify, and
/// archive the consistent samples. Per-category failures are recorded as
/// notes and never abort the remaining categories.
CycleResult recompose_cycle(const ImageRef& image, const RasterImage& pixels,
                            std::span<const Detection> detections,
                            std::span<const BinaryMask> masks, MemoryBank& bank,
                            const RecomposeContext& ctx, std::uint64_t seed,
                            const RecomposeOptions& options = {});

}  // namespace facadefixer
