// facadefixer CLI: batch front-end over the pipeline library.
//
//   facadefixer inspect   --profile p.json --experts e.json --bank dir --out dir [--seed N]
//   facadefixer evaluate  --pred dir --gt dir --out metrics.json
//   facadefixer recompose --in dir --bank dir --out dir --seed N [--experts e.json]
//   facadefixer curate    --in dir --config c.json --out dir
//   facadefixer bank      {add|query|stats} ...

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "facadefixer/annotations.hpp"
#include "facadefixer/orchestrator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace facadefixer;

namespace {

std::vector<ExpertDescriptor> default_mock_roster() {
  const json j = json::parse(R"({"experts": [
    {"id": "det-a", "kind": "detector", "endpoint": "mock:1"},
    {"id": "det-b", "kind": "detector", "endpoint": "mock:2"},
    {"id": "det-c", "kind": "detector", "endpoint": "mock:3"},
    {"id": "crack-a", "kind": "crack_segmenter", "endpoint": "mock:4"},
    {"id": "crack-b", "kind": "crack_segmenter", "endpoint": "mock:5"},
    {"id": "sam", "kind": "promptable_segmenter", "endpoint": "mock:6"},
    {"id": "gen", "kind": "generator", "endpoint": "mock:7"},
    {"id": "adj", "kind": "adjudicator", "endpoint": "mock:8"},
    {"id": "clip", "kind": "embedder", "endpoint": "mock:9", "params": {"dim": 64}}
  ]})");
  return parse_roster(j);
}

// The profile document doubles as the run configuration: pipeline knobs that
// are not part of the InstructionProfile ride in optional sections.
RunConfig config_from_profile_doc(const json& doc, const fs::path& profile_dir) {
  RunConfig config;
  config.profile = interpret_profile(doc);

  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : profile_dir / path;
  };
  if (doc.contains("images")) config.images_dir = resolve(doc.at("images"));
  if (doc.contains("ground_truth"))
    config.ground_truth_dir = resolve(doc.at("ground_truth"));
  if (doc.contains("fusion")) {
    const json& f = doc.at("fusion");
    config.fusion.iou_threshold = f.value("iou_threshold", 0.6);
    config.fusion.min_agreement = f.value("min_agreement", 2);
  }
  if (doc.contains("recompose")) {
    const json& r = doc.at("recompose");
    config.recompose.dilation_radius = r.value("dilation_radius", 2);
    config.recompose.alpha = r.value("alpha", 1.0);
    config.recompose.feather = r.value("feather", 1);
  }
  if (doc.contains("curation")) {
    const json& c = doc.at("curation");
    config.curation.dedup_threshold = c.value("dedup_threshold", 0.95);
    config.curation.negative_margin = c.value("negative_margin", 0.0);
    config.curation.min_side = c.value("min_side", 512);
    config.curation.blur_min_variance = c.value("blur_min_variance", 100.0);
    if (c.contains("aspect_range")) {
      config.curation.aspect_range = {c.at("aspect_range")[0].get<double>(),
                                      c.at("aspect_range")[1].get<double>()};
    }
    if (c.contains("negative_concepts"))
      config.negative_concept_names =
          c.at("negative_concepts").get<std::vector<std::string>>();
  }
  return config;
}

MemoryBank load_or_create_bank(const fs::path& dir, int dim) {
  if (fs::exists(dir / "manifest.json")) return MemoryBank::load(dir);
  return MemoryBank(dim);
}

int cmd_inspect(const fs::path& profile_path, const fs::path& experts_path,
                const fs::path& bank_dir, const fs::path& out_dir,
                std::optional<std::uint64_t> seed) {
  const json doc = read_json_file(profile_path);
  RunConfig config = config_from_profile_doc(doc, profile_path.parent_path());
  config.experts = parse_roster(read_json_file(experts_path));
  config.out_dir = out_dir;
  config.bank_dir = bank_dir;
  if (seed) config.profile.seed = *seed;
  if (config.images_dir.empty())
    throw ValidationError("profile document does not name an images directory");

  MemoryBank bank = load_or_create_bank(bank_dir, 64);
  const ExpertGateway gateway;
  const TaskPlan task_plan = plan(config.profile);
  const RunReport report = execute(task_plan, config, gateway, &bank);

  std::printf("run digest: %s\n", report.comparable_digest().c_str());
  bool ok = true;
  for (const NodeReport& n : report.nodes) {
    std::printf("  %-9s %s%s%s\n", n.id.c_str(),
                std::string(node_status_name(n.status)).c_str(),
                n.error.empty() ? "" : ": ", n.error.c_str());
    if (n.status == NodeStatus::Failed) ok = false;
  }
  return ok ? 0 : 1;
}

int cmd_evaluate(const fs::path& pred_dir, const fs::path& gt_dir,
                 const fs::path& out_file) {
  const std::vector<AnnotatedImage> pred_anns = load_annotation_dir(pred_dir);
  const std::vector<AnnotatedImage> gt_anns = load_annotation_dir(gt_dir);

  const std::vector<PredictedItem> preds = to_predictions(pred_anns);
  const std::vector<GroundTruthItem> gts = to_ground_truths(gt_anns);
  const DetectionMetrics dm = detection_metrics(preds, gts);

  json metrics{{"detection",
                {{"Precision", dm.precision},
                 {"Recall", dm.recall},
                 {"mAP50", dm.map50},
                 {"mAP50:95", dm.map50_95},
                 {"F1-score", dm.f1}}}};

  char line[256];
  std::string csv = "Task,Precision,Recall,mAP50,mAP50:95,F1-score,mIoU,PA\n";
  std::snprintf(line, sizeof(line), "detection,%.4f,%.4f,%.4f,%.4f,%.4f,,\n",
                dm.precision, dm.recall, dm.map50, dm.map50_95, dm.f1);
  csv += line;

  // Segmentation metrics when both sides carry masks.
  const auto pred_masks = to_class_masks(pred_anns);
  const auto gt_masks = to_class_masks(gt_anns);
  if (!gt_masks.empty()) {
    double miou = 0, p = 0, r = 0, f1 = 0, pa = 0;
    int n = 0;
    for (const auto& [image_id, gt_per_class] : gt_masks) {
      const auto it = pred_masks.find(image_id);
      const std::map<DefectCategory, BinaryMask> empty;
      const SegMetrics sm =
          seg_metrics(it == pred_masks.end() ? empty : it->second, gt_per_class);
      miou += sm.miou;
      p += sm.precision;
      r += sm.recall;
      f1 += sm.f1;
      pa += sm.pixel_accuracy;
      ++n;
    }
    miou /= n;
    p /= n;
    r /= n;
    f1 /= n;
    pa /= n;
    metrics["segmentation"] = {{"mIoU", miou},
                               {"Precision", p},
                               {"Recall", r},
                               {"F1-score", f1},
                               {"PA", pa}};
    std::snprintf(line, sizeof(line), "segmentation,%.4f,%.4f,,,%.4f,%.4f,%.4f\n",
                  p, r, f1, miou, pa);
    csv += line;
  }

  write_json_file(out_file, metrics);
  fs::path csv_path = out_file;
  csv_path.replace_extension(".csv");
  spit_file(csv_path, csv);
  std::printf("%s", csv.c_str());
  return 0;
}

int cmd_recompose(const fs::path& in_dir, const fs::path& bank_dir,
                  const fs::path& out_dir, std::uint64_t seed,
                  const std::optional<fs::path>& experts_path) {
  std::vector<ExpertDescriptor> roster =
      experts_path ? parse_roster(read_json_file(*experts_path))
                   : default_mock_roster();
  const ExpertGateway gateway;
  const ExpertDescriptor* generator = find_expert(roster, ExpertKind::Generator);
  const ExpertDescriptor* embedder = find_expert(roster, ExpertKind::Embedder);
  if (!generator || !embedder)
    throw ValidationError("roster needs a generator and an embedder");

  MemoryBank bank = load_or_create_bank(bank_dir, 64);
  fs::create_directories(out_dir);

  const std::vector<AnnotatedImage> anns = load_annotation_dir(in_dir);
  RecomposeContext ctx{gateway, *generator, *embedder};
  int produced = 0;
  json report = json::array();
  for (const AnnotatedImage& ann : anns) {
    const fs::path image_path = in_dir / (ann.image.id + ".ppm");
    if (!fs::exists(image_path)) continue;
    const RasterImage pixels = read_ppm(image_path);

    std::vector<Detection> detections;
    std::vector<BinaryMask> masks;
    for (const auto& inst : ann.instances) {
      Detection d;
      d.box = inst.bbox;
      d.category = inst.category;
      d.confidence = inst.confidence.value_or(1.0);
      d.source = "annotation";
      detections.push_back(d);
      if (inst.mask) masks.push_back(*inst.mask);
    }
    const CycleResult result = recompose_cycle(
        make_ref(pixels, ann.image.id), pixels, detections, masks, bank, ctx, seed);

    for (std::size_t i = 0; i < result.samples.size(); ++i) {
      const AugmentedSample& sample = result.samples[i];
      const std::string stem = ann.image.id + "-aug" + std::to_string(i);
      write_ppm(sample.image, out_dir / (stem + ".ppm"));
      AnnotatedImage out_ann;
      out_ann.image = make_ref(sample.image, stem);
      for (const auto& [mask, category] : sample.instances) {
        AnnotatedImage::Instance inst;
        inst.bbox = *mask_tight_bbox(mask);
        inst.category = category;
        inst.mask = mask;
        out_ann.instances.push_back(std::move(inst));
      }
      write_annotation(out_ann, out_dir / (stem + ".json"));
      ++produced;
    }
    for (const CycleNote& note : result.notes) {
      json jn{{"image", ann.image.id}, {"status", note.status},
              {"detail", note.detail}};
      if (note.category) jn["category"] = category_name(*note.category);
      report.push_back(jn);
    }
  }
  bank.persist(bank_dir);
  write_json_file(out_dir / "recompose-report.json", report);
  std::printf("produced %d augmented sample(s); bank now holds %zu entries\n",
              produced, bank.size());
  return 0;
}

int cmd_curate(const fs::path& in_dir, const fs::path& config_path,
               const fs::path& out_dir) {
  json doc = json::object();
  if (!config_path.empty()) doc = read_json_file(config_path);

  RunConfig config;
  config.profile.toggles = {Toggle::Curate};
  config.profile.categories.assign(kAllCategories.begin(), kAllCategories.end());
  if (doc.contains("curation")) {
    // Accept both a flat config and a nested {"curation": ...} document.
    doc = doc.at("curation");
  }
  config.curation.dedup_threshold = doc.value("dedup_threshold", 0.95);
  config.curation.negative_margin = doc.value("negative_margin", 0.0);
  config.curation.min_side = doc.value("min_side", 512);
  config.curation.blur_min_variance = doc.value("blur_min_variance", 100.0);
  if (doc.contains("aspect_range")) {
    config.curation.aspect_range = {doc.at("aspect_range")[0].get<double>(),
                                    doc.at("aspect_range")[1].get<double>()};
  }
  if (doc.contains("negative_concepts"))
    config.negative_concept_names =
        doc.at("negative_concepts").get<std::vector<std::string>>();
  config.experts = default_mock_roster();
  if (doc.contains("embedder"))
    config.experts.push_back(descriptor_from_json(doc.at("embedder")));
  config.images_dir = in_dir;
  config.out_dir = out_dir;

  const ExpertGateway gateway;
  const RunReport report = execute(plan(config.profile), config, gateway, nullptr);
  for (const NodeReport& n : report.nodes) {
    if (n.status == NodeStatus::Failed) {
      std::fprintf(stderr, "curate failed: %s\n", n.error.c_str());
      return 1;
    }
  }
  // Surface the manifest at the top of the output directory.
  for (const auto& [id, record] : report.artifact_index) {
    if (id == "curate/manifest")
      fs::copy_file(out_dir / record.path, out_dir / "curation-manifest.json",
                    fs::copy_options::overwrite_existing);
    if (id == "curate/report_csv")
      fs::copy_file(out_dir / record.path, out_dir / "curation-report.csv",
                    fs::copy_options::overwrite_existing);
  }
  std::printf("curation manifest written to %s\n",
              (out_dir / "curation-manifest.json").c_str());
  return 0;
}

int cmd_bank_add(const fs::path& bank_dir, const fs::path& crop_path,
                 const fs::path& mask_path, const std::string& category,
                 const std::string& text, std::string id,
                 const std::string& provenance, const std::string& embedder_endpoint) {
  MemoryBank bank = load_or_create_bank(bank_dir, 64);
  MemoryEntry entry;
  entry.crop_pixels = read_ppm(crop_path);
  entry.mask = BinaryMask::from_rle(slurp_file(mask_path));
  entry.category = category_from_name(category);
  entry.text = text;
  entry.provenance = provenance_from_name(provenance);
  entry.created_at_ms = now_ms();
  if (id.empty()) id = "entry-" + image_checksum(entry.crop_pixels);
  entry.id = id;
  entry.crop = make_ref(entry.crop_pixels, id);

  ExpertDescriptor embedder;
  embedder.id = "embedder";
  embedder.kind = ExpertKind::Embedder;
  embedder.endpoint = embedder_endpoint;
  embedder.params = {{"dim", bank.embedding_dim()}};
  const ExpertGateway gateway;
  entry.embedding = gateway.embed_image(entry.crop_pixels, embedder);

  bank.insert(std::move(entry));
  bank.persist(bank_dir);
  std::printf("inserted %s; bank now holds %zu entries\n", id.c_str(), bank.size());
  return 0;
}

int cmd_bank_query(const fs::path& bank_dir, const std::string& text,
                   const fs::path& crop_path, const std::string& category, int k,
                   const std::string& embedder_endpoint) {
  const MemoryBank bank = MemoryBank::load(bank_dir);
  ExpertDescriptor embedder;
  embedder.id = "embedder";
  embedder.kind = ExpertKind::Embedder;
  embedder.endpoint = embedder_endpoint;
  embedder.params = {{"dim", bank.embedding_dim()}};
  const ExpertGateway gateway;

  QuerySpec spec;
  spec.k = k;
  if (!crop_path.empty()) {
    spec.embedding = gateway.embed_image(read_ppm(crop_path), embedder);
  } else if (!text.empty()) {
    spec.embedding = gateway.embed_text(text, embedder);
  } else {
    throw ValidationError("bank query needs --text or --crop");
  }
  if (!category.empty()) spec.category = category_from_name(category);

  for (const QueryHit& hit : bank.query_top_k(spec)) {
    const std::optional<MemoryEntry> entry = bank.find(hit.id);
    std::printf("%-28s %.4f  %-16s %s\n", hit.id.c_str(), hit.similarity,
                std::string(category_name(entry->category)).c_str(),
                entry->text.c_str());
  }
  return 0;
}

int cmd_bank_stats(const fs::path& bank_dir) {
  const MemoryBank bank = MemoryBank::load(bank_dir);
  std::map<DefectCategory, int> per_category;
  std::map<Provenance, int> per_provenance;
  for (const MemoryEntry& e : bank.entries()) {
    ++per_category[e.category];
    ++per_provenance[e.provenance];
  }
  std::printf("entries: %zu, backgrounds: %zu, embedding dim: %d\n", bank.size(),
              bank.background_count(), bank.embedding_dim());
  for (const auto& [c, n] : per_category)
    std::printf("  %-18s %d\n", std::string(category_name(c)).c_str(), n);
  for (const auto& [p, n] : per_provenance)
    std::printf("  %-18s %d\n", std::string(provenance_name(p)).c_str(), n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facade defect inspection pipeline"};
  app.require_subcommand(1);

  // inspect
  std::string profile_path, experts_path, bank_dir, out_dir;
  std::optional<std::uint64_t> seed;
  CLI::App* inspect = app.add_subcommand("inspect", "run the inspection pipeline");
  inspect->add_option("--profile", profile_path, "profile document (JSON)")->required();
  inspect->add_option("--experts", experts_path, "experts roster (JSON)")->required();
  inspect->add_option("--bank", bank_dir, "memory bank directory")->required();
  inspect->add_option("--out", out_dir, "run directory")->required();
  inspect->add_option("--seed", seed, "override the profile seed");

  // evaluate
  std::string pred_dir, gt_dir, out_file;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  evaluate->add_option("--pred", pred_dir, "prediction sidecar directory")->required();
  evaluate->add_option("--gt", gt_dir, "ground-truth sidecar directory")->required();
  evaluate->add_option("--out", out_file, "metrics output file (JSON; CSV beside it)")->required();

  // recompose
  std::string in_dir;
  std::uint64_t rec_seed = 0;
  std::string rec_experts;
  CLI::App* recompose = app.add_subcommand("recompose", "synthesize augmented samples");
  recompose->add_option("--in", in_dir, "annotated image directory")->required();
  recompose->add_option("--bank", bank_dir, "memory bank directory")->required();
  recompose->add_option("--out", out_dir, "output directory")->required();
  recompose->add_option("--seed", rec_seed, "recomposition seed")->required();
  recompose->add_option("--experts", rec_experts, "experts roster (JSON, default all-mock)");

  // curate
  std::string curate_config;
  CLI::App* curate = app.add_subcommand("curate", "filter a raw image corpus");
  curate->add_option("--in", in_dir, "image directory")->required();
  curate->add_option("--config", curate_config, "curation config (JSON)");
  curate->add_option("--out", out_dir, "output directory")->required();

  // bank
  CLI::App* bank = app.add_subcommand("bank", "memory bank maintenance");
  bank->require_subcommand(1);
  std::string crop_path, mask_path, category, text, entry_id;
  std::string provenance = "real", embedder_endpoint = "mock:9";
  int k = 5;
  CLI::App* bank_add = bank->add_subcommand("add", "insert one entry");
  bank_add->add_option("--bank", bank_dir)->required();
  bank_add->add_option("--crop", crop_path, "crop image (PPM)")->required();
  bank_add->add_option("--mask", mask_path, "mask RLE file")->required();
  bank_add->add_option("--category", category)->required();
  bank_add->add_option("--text", text, "morphology description")->required();
  bank_add->add_option("--id", entry_id);
  bank_add->add_option("--provenance", provenance);
  bank_add->add_option("--embedder", embedder_endpoint);
  CLI::App* bank_query = bank->add_subcommand("query", "similarity search");
  bank_query->add_option("--bank", bank_dir)->required();
  bank_query->add_option("--text", text);
  bank_query->add_option("--crop", crop_path);
  bank_query->add_option("--category", category);
  bank_query->add_option("--k", k);
  bank_query->add_option("--embedder", embedder_endpoint);
  CLI::App* bank_stats = bank->add_subcommand("stats", "bank contents summary");
  bank_stats->add_option("--bank", bank_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (inspect->parsed())
      return cmd_inspect(profile_path, experts_path, bank_dir, out_dir, seed);
    if (evaluate->parsed()) return cmd_evaluate(pred_dir, gt_dir, out_file);
    if (recompose->parsed())
      return cmd_recompose(in_dir, bank_dir, out_dir, rec_seed,
                           rec_experts.empty()
                               ? std::nullopt
                               : std::optional<fs::path>(rec_experts));
    if (curate->parsed()) return cmd_curate(in_dir, curate_config, out_dir);
    if (bank_add->parsed())
      return cmd_bank_add(bank_dir, crop_path, mask_path, category, text, entry_id,
                          provenance, embedder_endpoint);
    if (bank_query->parsed())
      return cmd_bank_query(bank_dir, text, crop_path, category, k,
                            embedder_endpoint);
    if (bank_stats->parsed()) return cmd_bank_stats(bank_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
