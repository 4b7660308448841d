#include "facadefixer/recomposition.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "facadefixer/rng.hpp"

namespace facadefixer {

InpaintJob build_inpaint_job(const ImageRef& image, const RasterImage& pixels,
                             std::span<const Detection> detections,
                             std::span<const BinaryMask> masks, int radius) {
  (void)detections;  // boxes ride along in the pipeline; the hole is mask-driven
  if (masks.empty())
    throw ValidationError("build_inpaint_job: nothing to decouple");
  if (radius < 0) throw ValidationError("dilation radius must be non-negative");
  if (!pixels.valid() || pixels.width != image.width ||
      pixels.height != image.height)
    throw ValidationError("build_inpaint_job: pixels do not match the image ref");
  for (const BinaryMask& m : masks) {
    if (m.width() != image.width || m.height() != image.height)
      throw ValidationError("build_inpaint_job: mask not bound to the image");
  }
  InpaintJob job;
  job.image = image;
  job.pixels = pixels;
  job.hole_mask = dilate(mask_union(masks), radius);
  job.dilation_radius = radius;
  if (job.hole_mask.empty())
    throw ValidationError("build_inpaint_job: empty hole mask");
  return job;
}

BackgroundTemplate decouple(const InpaintJob& job, const ExpertDescriptor& generator,
                            const ExpertGateway& gateway) {
  GeneratorRequest req;
  req.task = "inpaint";
  req.image = job.image;
  req.pixels = job.pixels;
  req.mask = job.hole_mask;
  req.ring_width = job.dilation_radius + 2;
  RasterImage clean = gateway.call_generator(req, generator);

  BackgroundTemplate bg;
  bg.id = job.image.id + "-bg";
  bg.image_pixels = std::move(clean);
  bg.image = make_ref(bg.image_pixels, bg.id);
  bg.provenance = Provenance::Synthetic;
  return bg;
}

BlendSpec plan_placement(const BackgroundTemplate& background,
                         const MemoryEntry& entry, std::uint64_t seed,
                         double alpha, int feather) {
  const std::optional<BoundingBox> tight = mask_tight_bbox(entry.mask);
  if (!tight)
    throw ValidationError("plan_placement: entry " + entry.id + " has an empty mask");
  const int bg_w = background.image_pixels.width;
  const int bg_h = background.image_pixels.height;
  const int margin_x = static_cast<int>(std::ceil(0.05 * bg_w));
  const int margin_y = static_cast<int>(std::ceil(0.05 * bg_h));
  const int avail_w = bg_w - 2 * margin_x;
  const int avail_h = bg_h - 2 * margin_y;
  if (avail_w < 1 || avail_h < 1)
    throw ValidationError("plan_placement: background too small");

  const double s_max =
      std::min({1.0, avail_w / tight->w, avail_h / tight->h});
  if (s_max < 0.5)
    throw ValidationError("plan_placement: no feasible placement for entry " +
                          entry.id);

  SplitMix64 rng(mix_seed(seed, background.id + "|" + entry.id));
  const double s = 0.5 + rng.uniform() * (s_max - 0.5);
  const double w = std::max(1.0, std::floor(tight->w * s));
  const double h = std::max(1.0, std::floor(tight->h * s));
  const double x = std::floor(margin_x + rng.uniform() * (avail_w - w));
  const double y = std::floor(margin_y + rng.uniform() * (avail_h - h));

  BlendSpec spec;
  spec.background = background;
  spec.entry = entry;
  spec.placement = {x, y, w, h};
  spec.alpha = alpha;
  spec.feather = feather;
  spec.seed = seed;
  return spec;
}

AugmentedSample compose(const BlendSpec& spec, const ExpertDescriptor& generator,
                        const ExpertGateway& gateway) {
  if (spec.alpha <= 0.0 || spec.alpha > 1.0)
    throw ValidationError("compose: alpha must be in (0, 1]");
  if (spec.feather < 0) throw ValidationError("compose: negative feather");
  const RasterImage& bg = spec.background.image_pixels;
  if (!box_within(spec.placement, bg.width, bg.height))
    throw ValidationError("compose: placement outside the background");

  AugmentedSample sample;
  sample.lineage.background_id = spec.background.id;
  sample.lineage.entry_ids = {spec.entry.id};
  sample.lineage.seed = spec.seed;

  const std::optional<BoundingBox> tight = mask_tight_bbox(spec.entry.mask);
  if (!tight) {
    // Degenerate fixture: nothing to blend.
    sample.image = bg;
    sample.lineage.notes.push_back("entry mask empty; background returned as-is");
    return sample;
  }

  const int dst_w = static_cast<int>(std::llround(spec.placement.w));
  const int dst_h = static_cast<int>(std::llround(spec.placement.h));
  const BinaryMask scaled_mask =
      resample_mask_nearest(spec.entry.mask, *tight, dst_w, dst_h);
  const RasterImage scaled_crop =
      resample_bilinear(spec.entry.crop_pixels, *tight, dst_w, dst_h);

  const int x0 = static_cast<int>(std::llround(spec.placement.x));
  const int y0 = static_cast<int>(std::llround(spec.placement.y));
  BinaryMask placed_mask = BinaryMask::zeros(bg.width, bg.height);
  for (int y = 0; y < dst_h; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      if (scaled_mask.at(x, y)) placed_mask.set(x0 + x, y0 + y, true);
    }
  }

  GeneratorRequest req;
  req.task = "compose";
  req.image = spec.background.image;
  req.pixels = bg;
  req.mask = placed_mask;
  req.category = spec.entry.category;
  req.text = spec.entry.text;
  req.seed = spec.seed;
  req.crop = scaled_crop;
  req.crop_mask = scaled_mask;
  req.placement = spec.placement;
  req.alpha = spec.alpha;
  req.feather = spec.feather;

  try {
    sample.image = gateway.call_generator(req, generator);
  } catch (const std::exception& e) {
    sample.image = alpha_blend_patch(bg, scaled_crop, scaled_mask, x0, y0,
                                     spec.alpha, spec.feather);
    sample.lineage.notes.push_back(std::string("generator failed (") + e.what() +
                                   "); in-process blend used");
  }
  if (!scaled_mask.empty())
    sample.instances.emplace_back(std::move(placed_mask), spec.entry.category);
  return sample;
}

ConsistencyReport verify_label_consistency(const AugmentedSample& sample,
                                           const BackgroundTemplate& background,
                                           int feather) {
  const RasterImage& bg = background.image_pixels;
  if (sample.image.width != bg.width || sample.image.height != bg.height)
    throw ValidationError("verify_label_consistency: dimension mismatch");

  const BinaryMask changed = changed_pixel_mask(sample.image, bg);

  BinaryMask allowed = BinaryMask::zeros(bg.width, bg.height);
  if (!sample.instances.empty()) {
    std::vector<BinaryMask> masks;
    for (const auto& [m, c] : sample.instances) masks.push_back(m);
    allowed = dilate(mask_union(masks), feather);
  }

  ConsistencyReport report;
  report.leakage_px = static_cast<std::int64_t>(
      (changed.grid() != 0 && allowed.grid() == 0).count());

  report.coverage = 1.0;
  for (const auto& [mask, category] : sample.instances) {
    const auto mask_px = mask.count();
    double cov = 0.0;
    if (mask_px > 0) {
      const auto touched = static_cast<std::int64_t>(
          (changed.grid() != 0 && mask.grid() != 0).count());
      cov = static_cast<double>(touched) / static_cast<double>(mask_px);
    }
    report.per_instance_coverage.push_back(cov);
    report.coverage = std::min(report.coverage, cov);
  }
  report.consistent = report.leakage_px == 0 && report.coverage >= 0.1;
  return report;
}

std::vector<std::string> archive_synthetic(const AugmentedSample& sample,
                                           MemoryBank& bank,
                                           const ImageEmbedder& embed,
                                           std::int64_t created_at_ms) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < sample.instances.size(); ++i) {
    const auto& [mask, category] = sample.instances[i];
    const std::optional<BoundingBox> tight = mask_tight_bbox(mask);
    if (!tight) continue;

    MemoryEntry entry;
    entry.id = "syn-" + to_hex(fnv1a64(sample.lineage.background_id + "|" +
                                       std::to_string(sample.lineage.seed) + "|" +
                                       std::to_string(i)));
    entry.crop_pixels = crop_image(sample.image, *tight);
    entry.mask = crop_mask(mask, *tight);
    entry.category = category;
    entry.text = "synthetic " + std::string(category_name(category)) +
                 " recomposed onto " + sample.lineage.background_id;
    entry.embedding = embed(entry.crop_pixels);
    entry.provenance = Provenance::Synthetic;
    entry.created_at_ms = created_at_ms;
    entry.crop = make_ref(entry.crop_pixels, entry.id);
    ids.push_back(bank.insert(std::move(entry)));
  }
  return ids;
}

CycleResult recompose_cycle(const ImageRef& image, const RasterImage& pixels,
                            std::span<const Detection> detections,
                            std::span<const BinaryMask> masks, MemoryBank& bank,
                            const RecomposeContext& ctx, std::uint64_t seed,
                            const RecomposeOptions& options) {
  CycleResult result;

  BackgroundTemplate bg;
  try {
    const InpaintJob job = build_inpaint_job(image, pixels, detections, masks,
                                             options.dilation_radius);
    bg = decouple(job, ctx.generator, ctx.gateway);
    bg.embedding = ctx.gateway.embed_image(bg.image_pixels, ctx.embedder);
  } catch (const std::exception& e) {
    result.notes.push_back({std::nullopt, "error", e.what()});
    return result;
  }
  result.background = bg;

  std::vector<DefectCategory> categories = options.categories;
  if (categories.empty()) {
    std::set<DefectCategory> seen;
    for (const Detection& d : detections) seen.insert(d.category);
    categories.assign(seen.begin(), seen.end());
  }

  const BoundingBox region{std::ceil(0.05 * bg.image_pixels.width),
                           std::ceil(0.05 * bg.image_pixels.height),
                           bg.image_pixels.width -
                               2 * std::ceil(0.05 * bg.image_pixels.width),
                           bg.image_pixels.height -
                               2 * std::ceil(0.05 * bg.image_pixels.height)};

  for (DefectCategory category : categories) {
    try {
      const std::optional<MemoryEntry> entry =
          bank.retrieve_compatible_mask(region, category, bg.embedding);
      if (!entry) {
        result.notes.push_back({category, "no_compatible_entry",
                                "no compatible entry in the memory bank"});
        continue;
      }
      const std::uint64_t sub_seed =
          mix_seed(seed, image.id + "|" + std::string(category_name(category)));
      const BlendSpec spec = plan_placement(bg, *entry, sub_seed, options.alpha,
                                            options.feather);
      AugmentedSample sample = compose(spec, ctx.generator, ctx.gateway);
      const ConsistencyReport report =
          verify_label_consistency(sample, bg, options.feather);
      if (!report.consistent) {
        result.notes.push_back(
            {category, "inconsistent",
             "leakage_px=" + std::to_string(report.leakage_px) +
                 " coverage=" + std::to_string(report.coverage)});
        continue;
      }
      std::vector<std::string> ids = archive_synthetic(
          sample, bank,
          [&](const RasterImage& img) {
            return ctx.gateway.embed_image(img, ctx.embedder);
          },
          ctx.clock());
      result.archived_ids.insert(result.archived_ids.end(), ids.begin(), ids.end());
      result.samples.push_back(std::move(sample));
      result.notes.push_back({category, "archived", entry->id});
    } catch (const std::exception& e) {
      result.notes.push_back({category, "error", e.what()});
    }
  }
  return result;
}

}  // namespace facadefixer
