#include "facadefixer/annotations.hpp"

#include <algorithm>
#include <fstream>

namespace facadefixer {

namespace fs = std::filesystem;
using nlohmann::json;

json annotation_to_json(const AnnotatedImage& ann) {
  json j{{"image",
          {{"id", ann.image.id},
           {"width", ann.image.width},
           {"height", ann.image.height}}}};
  json instances = json::array();
  for (const AnnotatedImage::Instance& inst : ann.instances) {
    json ji{{"bbox", {inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h}},
            {"category", category_name(inst.category)}};
    if (inst.confidence) ji["confidence"] = *inst.confidence;
    if (inst.mask) ji["mask_rle"] = inst.mask->to_rle();
    instances.push_back(ji);
  }
  j["instances"] = instances;
  return j;
}

AnnotatedImage annotation_from_json(const json& j) {
  AnnotatedImage ann;
  const json& img = j.at("image");
  ann.image.id = img.at("id").get<std::string>();
  ann.image.width = img.at("width").get<int>();
  ann.image.height = img.at("height").get<int>();
  if (ann.image.width < 1 || ann.image.height < 1)
    throw ValidationError("annotation for " + ann.image.id + ": bad dimensions");
  for (const json& ji : j.at("instances")) {
    AnnotatedImage::Instance inst;
    const json& bbox = ji.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4)
      throw ValidationError("annotation for " + ann.image.id + ": bad bbox");
    inst.bbox = {bbox[0].get<double>(), bbox[1].get<double>(),
                 bbox[2].get<double>(), bbox[3].get<double>()};
    inst.category = category_from_name(ji.at("category").get<std::string>());
    if (ji.contains("confidence")) inst.confidence = ji.at("confidence").get<double>();
    if (ji.contains("mask_rle"))
      inst.mask = BinaryMask::from_rle(ji.at("mask_rle").get<std::string>());
    ann.instances.push_back(std::move(inst));
  }
  return ann;
}

std::string slurp_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void spit_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(slurp_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  spit_file(path, j.dump(2) + "\n");
}

void write_annotation(const AnnotatedImage& ann, const fs::path& path) {
  write_json_file(path, annotation_to_json(ann));
}

AnnotatedImage read_annotation(const fs::path& path) {
  try {
    return annotation_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<AnnotatedImage> load_annotation_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw IoError("annotation directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<AnnotatedImage> anns;
  for (const fs::path& f : files) anns.push_back(read_annotation(f));
  std::sort(anns.begin(), anns.end(),
            [](const AnnotatedImage& a, const AnnotatedImage& b) {
              return a.image.id < b.image.id;
            });
  return anns;
}

std::vector<PredictedItem> to_predictions(const std::vector<AnnotatedImage>& anns) {
  std::vector<PredictedItem> out;
  for (const AnnotatedImage& ann : anns) {
    for (const auto& inst : ann.instances) {
      out.push_back({ann.image.id, inst.bbox, inst.category,
                     inst.confidence.value_or(1.0)});
    }
  }
  return out;
}

std::vector<GroundTruthItem> to_ground_truths(const std::vector<AnnotatedImage>& anns) {
  std::vector<GroundTruthItem> out;
  for (const AnnotatedImage& ann : anns) {
    for (const auto& inst : ann.instances) {
      out.push_back({ann.image.id, inst.bbox, inst.category, inst.mask});
    }
  }
  return out;
}

std::map<std::string, std::map<DefectCategory, BinaryMask>> to_class_masks(
    const std::vector<AnnotatedImage>& anns) {
  std::map<std::string, std::map<DefectCategory, BinaryMask>> out;
  for (const AnnotatedImage& ann : anns) {
    auto& per_class = out[ann.image.id];
    for (const auto& inst : ann.instances) {
      if (!inst.mask) continue;
      auto it = per_class.find(inst.category);
      if (it == per_class.end()) {
        per_class.emplace(inst.category, *inst.mask);
      } else {
        const std::vector<BinaryMask> both = {it->second, *inst.mask};
        it->second = mask_union(both);
      }
    }
  }
  return out;
}

}  // namespace facadefixer
