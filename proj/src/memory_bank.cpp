#include "facadefixer/memory_bank.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <mutex>
#include <fstream>

#include "facadefixer/curation.hpp"

namespace facadefixer {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view provenance_name(Provenance p) {
  return p == Provenance::Real ? "real" : "synthetic";
}

Provenance provenance_from_name(std::string_view name) {
  if (name == "real") return Provenance::Real;
  if (name == "synthetic") return Provenance::Synthetic;
  throw ValidationError("unknown provenance: " + std::string(name));
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool mask_fits_region(const BinaryMask& mask, const BoundingBox& region) {
  const std::optional<BoundingBox> tight = mask_tight_bbox(mask);
  if (!tight) return false;
  // Smallest allowed scale must already fit.
  if (0.5 * tight->w > region.w || 0.5 * tight->h > region.h) return false;
  const double mask_aspect = tight->aspect();
  const double region_aspect = region.aspect();
  if (mask_aspect <= 0.0 || region_aspect <= 0.0) return false;
  const double ratio = mask_aspect / region_aspect;
  return ratio >= 0.5 && ratio <= 2.0;
}

MemoryBank::MemoryBank(int embedding_dim)
    : dim_(embedding_dim), mutex_(std::make_unique<std::shared_mutex>()) {
  if (embedding_dim < 1)
    throw ValidationError("embedding dimension must be positive");
}

void MemoryBank::validate_embedding(const Eigen::VectorXf& e,
                                    const std::string& id) const {
  if (static_cast<int>(e.size()) != dim_)
    throw ValidationError("embedding of entry " + id + " has dimension " +
                          std::to_string(e.size()) + ", bank expects " +
                          std::to_string(dim_));
}

std::string MemoryBank::insert(MemoryEntry entry) {
  if (entry.id.empty()) throw ValidationError("entry id must be non-empty");
  validate_embedding(entry.embedding, entry.id);
  if (!entry.crop_pixels.valid())
    throw ValidationError("entry " + entry.id + " carries no crop pixels");
  if (entry.mask.width() != entry.crop_pixels.width ||
      entry.mask.height() != entry.crop_pixels.height)
    throw ValidationError("entry " + entry.id +
                          ": mask dimensions differ from crop dimensions");
  entry.crop.width = entry.crop_pixels.width;
  entry.crop.height = entry.crop_pixels.height;
  if (entry.crop.id.empty()) entry.crop.id = entry.id;

  std::unique_lock lock(*mutex_);
  const auto [it, inserted] = entries_.emplace(entry.id, std::move(entry));
  if (!inserted)
    throw ValidationError("duplicate entry id: " + it->first);
  return it->first;
}

std::string MemoryBank::insert_background(BackgroundTemplate background) {
  if (background.id.empty()) throw ValidationError("background id must be non-empty");
  validate_embedding(background.embedding, background.id);
  if (!background.image_pixels.valid())
    throw ValidationError("background " + background.id + " carries no pixels");
  background.image.width = background.image_pixels.width;
  background.image.height = background.image_pixels.height;
  if (background.image.id.empty()) background.image.id = background.id;

  std::unique_lock lock(*mutex_);
  const auto [it, inserted] =
      backgrounds_.emplace(background.id, std::move(background));
  if (!inserted)
    throw ValidationError("duplicate background id: " + it->first);
  return it->first;
}

bool MemoryBank::contains(const std::string& id) const {
  std::shared_lock lock(*mutex_);
  return entries_.count(id) > 0;
}

std::optional<MemoryEntry> MemoryBank::find(const std::string& id) const {
  std::shared_lock lock(*mutex_);
  const auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t MemoryBank::size() const {
  std::shared_lock lock(*mutex_);
  return entries_.size();
}

std::size_t MemoryBank::background_count() const {
  std::shared_lock lock(*mutex_);
  return backgrounds_.size();
}

std::vector<QueryHit> MemoryBank::query_top_k(const QuerySpec& spec) const {
  if (spec.k < 1) throw ValidationError("query k must be at least 1");
  validate_embedding(spec.embedding, "<query>");
  if (spec.embedding.cast<double>().norm() == 0.0)
    throw ValidationError("cosine undefined for a zero-norm query");

  std::shared_lock lock(*mutex_);
  std::vector<QueryHit> hits;
  for (const auto& [id, entry] : entries_) {
    if (spec.category && entry.category != *spec.category) continue;
    hits.push_back({id, cosine_similarity(spec.embedding, entry.embedding)});
  }
  std::sort(hits.begin(), hits.end(), [](const QueryHit& a, const QueryHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  if (hits.size() > static_cast<std::size_t>(spec.k))
    hits.resize(static_cast<std::size_t>(spec.k));
  return hits;
}

std::optional<MemoryEntry> MemoryBank::retrieve_compatible_mask(
    const BoundingBox& region, DefectCategory category,
    const Eigen::VectorXf& embedding) const {
  if (!box_valid(region)) throw ValidationError("retrieve: degenerate region");
  validate_embedding(embedding, "<query>");
  if (embedding.cast<double>().norm() == 0.0)
    throw ValidationError("cosine undefined for a zero-norm query");

  std::shared_lock lock(*mutex_);
  const MemoryEntry* best = nullptr;
  double best_cos = 0.0;
  for (const auto& [id, entry] : entries_) {
    if (entry.category != category) continue;
    if (!mask_fits_region(entry.mask, region)) continue;
    const double cos = cosine_similarity(embedding, entry.embedding);
    if (best == nullptr || cos > best_cos ||
        (cos == best_cos && id < best->id)) {
      best = &entry;
      best_cos = cos;
    }
  }
  if (best == nullptr) return std::nullopt;
  return *best;
}

std::vector<MemoryEntry> MemoryBank::entries() const {
  std::shared_lock lock(*mutex_);
  std::vector<MemoryEntry> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

std::vector<BackgroundTemplate> MemoryBank::backgrounds() const {
  std::shared_lock lock(*mutex_);
  std::vector<BackgroundTemplate> out;
  out.reserve(backgrounds_.size());
  for (const auto& [id, b] : backgrounds_) out.push_back(b);
  return out;
}

namespace {

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

std::string embedding_to_bytes(const Eigen::VectorXf& e) {
  std::string out;
  out.reserve(static_cast<std::size_t>(e.size()) * 4);
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(e[i]);
    out += static_cast<char>(bits & 0xff);
    out += static_cast<char>((bits >> 8) & 0xff);
    out += static_cast<char>((bits >> 16) & 0xff);
    out += static_cast<char>((bits >> 24) & 0xff);
  }
  return out;
}

Eigen::VectorXf embedding_from_bytes(const std::string& bytes, int dim,
                                     const std::string& id) {
  if (bytes.size() != static_cast<std::size_t>(dim) * 4)
    throw IoError("entry " + id + ": embedding blob has " +
                  std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(dim * 4));
  Eigen::VectorXf e(dim);
  for (int i = 0; i < dim; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * 4;
    const std::uint32_t bits =
        static_cast<std::uint8_t>(bytes[o]) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 1])) << 8) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 2])) << 16) |
        (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[o + 3])) << 24);
    e[i] = std::bit_cast<float>(bits);
  }
  return e;
}

json image_ref_to_meta(const ImageRef& ref) {
  json j{{"id", ref.id},
         {"uri", ref.uri},
         {"width", ref.width},
         {"height", ref.height}};
  if (ref.checksum) j["checksum"] = *ref.checksum;
  return j;
}

ImageRef image_ref_from_meta(const json& j) {
  ImageRef ref;
  ref.id = j.at("id").get<std::string>();
  ref.uri = j.value("uri", std::string());
  ref.width = j.at("width").get<int>();
  ref.height = j.at("height").get<int>();
  if (j.contains("checksum")) ref.checksum = j.at("checksum").get<std::string>();
  return ref;
}

}  // namespace

void MemoryBank::persist(const fs::path& dir) const {
  std::shared_lock lock(*mutex_);
  fs::create_directories(dir / "entries");
  fs::create_directories(dir / "backgrounds");

  for (const auto& [id, entry] : entries_) {
    const fs::path edir = dir / "entries" / id;
    fs::create_directories(edir);
    write_file(edir / "crop.ppm", serialize_ppm(entry.crop_pixels));
    write_file(edir / "mask.rle", entry.mask.to_rle());
    write_file(edir / "embedding.f32", embedding_to_bytes(entry.embedding));
    json meta{{"id", entry.id},
              {"category", category_name(entry.category)},
              {"text", entry.text},
              {"provenance", provenance_name(entry.provenance)},
              {"created_at_ms", entry.created_at_ms},
              {"crop", image_ref_to_meta(entry.crop)}};
    write_file(edir / "meta.json", meta.dump(2));
  }
  for (const auto& [id, bg] : backgrounds_) {
    const fs::path bdir = dir / "backgrounds" / id;
    fs::create_directories(bdir);
    write_file(bdir / "image.ppm", serialize_ppm(bg.image_pixels));
    write_file(bdir / "embedding.f32", embedding_to_bytes(bg.embedding));
    json meta{{"id", bg.id},
              {"provenance", provenance_name(bg.provenance)},
              {"image", image_ref_to_meta(bg.image)}};
    write_file(bdir / "meta.json", meta.dump(2));
  }

  json manifest{{"version", kManifestVersion}, {"embedding_dim", dim_}};
  json entry_ids = json::array();
  for (const auto& [id, e] : entries_) entry_ids.push_back(id);
  json bg_ids = json::array();
  for (const auto& [id, b] : backgrounds_) bg_ids.push_back(id);
  manifest["entries"] = entry_ids;
  manifest["backgrounds"] = bg_ids;

  // Manifest goes last, atomically, so a torn persist never yields a bank
  // that indexes half-written entries.
  const fs::path tmp = dir / "manifest.json.tmp";
  write_file(tmp, manifest.dump(2));
  fs::rename(tmp, dir / "manifest.json");
}

MemoryBank MemoryBank::load(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("corrupt bank manifest at " + dir.string() + ": " + e.what());
  }
  const int version = manifest.value("version", -1);
  if (version != kManifestVersion)
    throw IoError("unsupported bank manifest version " + std::to_string(version) +
                  " (expected " + std::to_string(kManifestVersion) + ")");
  MemoryBank bank(manifest.at("embedding_dim").get<int>());

  for (const json& jid : manifest.at("entries")) {
    const std::string id = jid.get<std::string>();
    const fs::path edir = dir / "entries" / id;
    try {
      json meta = json::parse(read_file(edir / "meta.json"));
      MemoryEntry entry;
      entry.id = meta.at("id").get<std::string>();
      if (entry.id != id) throw IoError("meta id mismatch");
      entry.category = category_from_name(meta.at("category").get<std::string>());
      entry.text = meta.at("text").get<std::string>();
      entry.provenance =
          provenance_from_name(meta.at("provenance").get<std::string>());
      entry.created_at_ms = meta.at("created_at_ms").get<std::int64_t>();
      entry.crop = image_ref_from_meta(meta.at("crop"));
      entry.crop_pixels = parse_ppm(read_file(edir / "crop.ppm"));
      entry.mask = BinaryMask::from_rle(read_file(edir / "mask.rle"));
      entry.embedding = embedding_from_bytes(read_file(edir / "embedding.f32"),
                                             bank.embedding_dim(), id);
      bank.insert(std::move(entry));
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError("bank entry " + id + " failed to load: " + e.what());
    }
  }
  for (const json& jid : manifest.at("backgrounds")) {
    const std::string id = jid.get<std::string>();
    const fs::path bdir = dir / "backgrounds" / id;
    try {
      json meta = json::parse(read_file(bdir / "meta.json"));
      BackgroundTemplate bg;
      bg.id = meta.at("id").get<std::string>();
      if (bg.id != id) throw IoError("meta id mismatch");
      bg.provenance = provenance_from_name(meta.at("provenance").get<std::string>());
      bg.image = image_ref_from_meta(meta.at("image"));
      bg.image_pixels = parse_ppm(read_file(bdir / "image.ppm"));
      bg.embedding = embedding_from_bytes(read_file(bdir / "embedding.f32"),
                                          bank.embedding_dim(), id);
      bank.insert_background(std::move(bg));
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError("bank background " + id + " failed to load: " + e.what());
    }
  }
  return bank;
}

}  // namespace facadefixer
