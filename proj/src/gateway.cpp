#include "facadefixer/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <condition_variable>

#include "facadefixer/rng.hpp"

namespace facadefixer {

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

struct ParsedEndpoint {
  std::string host;
  int port = 80;
  std::string path = "/";
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const std::string prefix = "http://";
  if (endpoint.rfind(prefix, 0) != 0)
    throw TransportError("unsupported endpoint scheme: " + endpoint);
  ParsedEndpoint out;
  std::string rest = endpoint.substr(prefix.size());
  const std::size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (slash != std::string::npos) out.path = rest.substr(slash);
  const std::size_t colon = hostport.find(':');
  if (colon == std::string::npos) {
    out.host = hostport;
  } else {
    out.host = hostport.substr(0, colon);
    out.port = std::stoi(hostport.substr(colon + 1));
  }
  if (out.host.empty()) throw TransportError("endpoint has no host: " + endpoint);
  return out;
}

class HttplibTransport : public HttpTransport {
 public:
  std::string post_json(const std::string& endpoint, const std::string& body,
                        int timeout_ms, const std::string& bearer_token) override {
    const ParsedEndpoint ep = parse_endpoint(endpoint);
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(0, timeout_ms * 1000);
    client.set_read_timeout(0, timeout_ms * 1000);
    client.set_write_timeout(0, timeout_ms * 1000);
    httplib::Headers headers;
    if (!bearer_token.empty())
      headers.emplace("Authorization", "Bearer " + bearer_token);
    const auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res)
      throw TransportError("POST " + endpoint + " failed: " +
                           httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw TransportError("POST " + endpoint + " returned HTTP " +
                           std::to_string(res->status));
    return res->body;
  }
};

std::string bearer_of(const ExpertDescriptor& d) {
  if (d.params.is_object() && d.params.contains("bearer_token"))
    return d.params.at("bearer_token").get<std::string>();
  return "";
}

int embedding_dim_of(const ExpertDescriptor& d) {
  if (d.params.is_object() && d.params.contains("dim"))
    return d.params.at("dim").get<int>();
  return ExpertGateway::kDefaultEmbeddingDim;
}

// Draws a filled ellipse into the mask, clipped to the mask bounds.
void fill_ellipse(BinaryMask& mask, double cx, double cy, double rx, double ry) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(mask.width() - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(mask.height() - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) mask.set(x, y, true);
    }
  }
}

void draw_segment(BinaryMask& mask, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  int x = x0, y = y0;
  for (;;) {
    if (x >= 0 && x < mask.width() && y >= 0 && y < mask.height())
      mask.set(x, y, true);
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace

std::shared_ptr<HttpTransport> make_httplib_transport() {
  return std::make_shared<HttplibTransport>();
}

std::string encode_base64(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < bytes.size()) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                            static_cast<unsigned char>(bytes[i + 2]);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
    i += 3;
  }
  const std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    const std::uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (rem == 2) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += "=";
  }
  return out;
}

std::string decode_base64(const std::string& text) {
  std::array<int, 256> inv;
  inv.fill(-1);
  for (int i = 0; i < 64; ++i)
    inv[static_cast<unsigned char>(kB64Alphabet[i])] = i;
  std::string out;
  std::uint32_t buffer = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = inv[static_cast<unsigned char>(c)];
    if (v < 0) throw ProtocolError("invalid base64 character");
    buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((buffer >> bits) & 0xff);
    }
  }
  return out;
}

nlohmann::json image_ref_to_wire(const ImageRef& ref) {
  nlohmann::json j{{"id", ref.id},
                   {"uri", ref.uri},
                   {"width", ref.width},
                   {"height", ref.height}};
  if (ref.checksum) j["checksum"] = *ref.checksum;
  return j;
}

ImageRef image_ref_from_wire(const nlohmann::json& j) {
  ImageRef ref;
  ref.id = j.at("id").get<std::string>();
  ref.uri = j.value("uri", std::string());
  ref.width = j.at("width").get<int>();
  ref.height = j.at("height").get<int>();
  if (j.contains("checksum")) ref.checksum = j.at("checksum").get<std::string>();
  return ref;
}

nlohmann::json detection_to_wire(const Detection& d) {
  return nlohmann::json{{"x", d.box.x},
                        {"y", d.box.y},
                        {"w", d.box.w},
                        {"h", d.box.h},
                        {"category", category_name(d.category)},
                        {"confidence", d.confidence}};
}

Detection detection_from_wire(const nlohmann::json& j) {
  Detection d;
  try {
    d.box = {j.at("x").get<double>(), j.at("y").get<double>(),
             j.at("w").get<double>(), j.at("h").get<double>()};
    d.category = category_from_name(j.at("category").get<std::string>());
    d.confidence = j.at("confidence").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed detection record: ") + e.what());
  }
  if (d.confidence < 0.0 || d.confidence > 1.0)
    throw ProtocolError("field confidence out of [0,1]");
  return d;
}

ExpertGateway::ExpertGateway(std::shared_ptr<HttpTransport> transport,
                             int max_concurrent)
    : transport_(transport ? std::move(transport) : make_httplib_transport()),
      max_concurrent_(std::max(1, max_concurrent)) {}

void ExpertGateway::warn(std::string message) const {
  std::lock_guard lock(mutex_);
  warnings_.push_back(std::move(message));
}

std::vector<std::string> ExpertGateway::warnings() const {
  std::lock_guard lock(mutex_);
  return warnings_;
}

void ExpertGateway::clear_warnings() const {
  std::lock_guard lock(mutex_);
  warnings_.clear();
}

std::string ExpertGateway::post_with_retry(const ExpertDescriptor& d,
                                           const nlohmann::json& body) const {
  const std::string payload = body.dump();
  // Bounded concurrency toward live endpoints.
  {
    std::unique_lock lock(mutex_);
    slots_.wait(lock, [&] { return in_flight_ < max_concurrent_; });
    ++in_flight_;
  }
  struct Slot {
    const ExpertGateway* gw;
    ~Slot() {
      std::lock_guard lock(gw->mutex_);
      --gw->in_flight_;
      gw->slots_.notify_one();
    }
  } slot{this};

  try {
    return transport_->post_json(d.endpoint, payload, d.timeout_ms, bearer_of(d));
  } catch (const TransportError&) {
    // One retry, then surface the failure.
    return transport_->post_json(d.endpoint, payload, d.timeout_ms, bearer_of(d));
  }
}

std::vector<Detection> mock_scene_detections(const ImageRef& image) {
  SplitMix64 rng(mix_seed(0xface, image.id));
  const int w = image.width;
  const int h = image.height;
  const int n = static_cast<int>(1 + rng.next() % 3);
  std::vector<Detection> scene;
  for (int i = 0; i < n; ++i) {
    const double side = std::max(
        16.0, std::floor(rng.uniform(0.25, 0.45) * std::min(w, h)));
    const double bw = std::min<double>(side, w - 2);
    const double bh = std::min<double>(
        std::max(16.0, std::floor(side * rng.uniform(0.8, 1.2))), h - 2);
    const double x = std::floor(rng.uniform(1.0, std::max(1.0, w - bw - 1)));
    const double y = std::floor(rng.uniform(1.0, std::max(1.0, h - bh - 1)));
    Detection d;
    d.box = {x, y, bw, bh};
    d.category = kAllCategories[rng.next() % kAllCategories.size()];
    d.confidence = 0.55 + 0.40 * rng.uniform();
    d.source = "scene";
    scene.push_back(d);
  }
  return scene;
}

ExpertOutput ExpertGateway::call_detector(const ImageRef& image,
                                          const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::Detector)
    throw ValidationError("expert " + d.id + " is not a detector");
  if (image.width < 1 || image.height < 1)
    throw ValidationError("detector called with an unbound image");

  std::vector<Detection> detections;
  if (d.is_mock()) {
    // Each mock expert sees the shared per-image scene through small seeded
    // jitter, so multi-expert fusion has agreement structure to work with.
    const std::vector<Detection> scene = mock_scene_detections(image);
    SplitMix64 rng(mix_seed(d.mock_seed(), d.id + "|" + image.id));
    for (std::size_t i = 0; i < scene.size(); ++i) {
      if (scene.size() > 1 && rng.chance(0.15)) continue;  // missed box
      Detection det = scene[i];
      det.box.x = std::max(0.0, det.box.x + rng.uniform_int(-1, 1));
      det.box.y = std::max(0.0, det.box.y + rng.uniform_int(-1, 1));
      det.box.w = std::max(8.0, det.box.w + rng.uniform_int(-1, 1));
      det.box.h = std::max(8.0, det.box.h + rng.uniform_int(-1, 1));
      det.box.w = std::min(det.box.w, image.width - det.box.x);
      det.box.h = std::min(det.box.h, image.height - det.box.y);
      det.confidence =
          std::clamp(det.confidence + rng.uniform(-0.1, 0.1), 0.05, 0.99);
      detections.push_back(det);
    }
    if (rng.chance(0.2)) {
      // Occasional spurious box; exercises the precision side of fusion.
      Detection fp;
      const double bw = std::max(8.0, std::floor(0.15 * image.width));
      const double bh = std::max(8.0, std::floor(0.15 * image.height));
      fp.box = {std::floor(rng.uniform(0.0, image.width - bw)),
                std::floor(rng.uniform(0.0, image.height - bh)), bw, bh};
      fp.category = kAllCategories[rng.next() % kAllCategories.size()];
      fp.confidence = 0.05 + 0.45 * rng.uniform();
      detections.push_back(fp);
    }
  } else {
    const nlohmann::json body{{"task", "detect"},
                              {"image", image_ref_to_wire(image)}};
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(post_with_retry(d, body));
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("detector " + d.id + ": unparseable reply: " + e.what());
    }
    if (!reply.contains("detections") || !reply.at("detections").is_array())
      throw ProtocolError("detector " + d.id + ": missing field detections");
    for (const nlohmann::json& item : reply.at("detections")) {
      Detection det = detection_from_wire(item);
      BoundingBox clamped = det.box;
      clamped.x = std::clamp(clamped.x, 0.0, static_cast<double>(image.width));
      clamped.y = std::clamp(clamped.y, 0.0, static_cast<double>(image.height));
      clamped.w = std::min(clamped.w, image.width - clamped.x);
      clamped.h = std::min(clamped.h, image.height - clamped.y);
      if (clamped != det.box) {
        if (!box_valid(clamped)) {
          warn("detector " + d.id + ": dropped box fully outside image " + image.id);
          continue;
        }
        warn("detector " + d.id + ": clamped out-of-bounds box on image " + image.id);
        det.box = clamped;
      }
      detections.push_back(det);
    }
  }
  return ExpertOutput::from_detections(d.id, image.id, std::move(detections));
}

BinaryMask ExpertGateway::call_segmenter(const ImageRef& image,
                                         const SegmentPrompt& prompt,
                                         const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::CrackSegmenter &&
      d.kind != ExpertKind::PromptableSegmenter)
    throw ValidationError("expert " + d.id + " is not a segmenter");
  if (d.kind == ExpertKind::CrackSegmenter &&
      prompt.mode == SegmentPrompt::Mode::Text)
    throw ValidationError("crack segmenter " + d.id + " cannot take text prompts");

  if (d.is_mock()) {
    BinaryMask mask = BinaryMask::zeros(image.width, image.height);
    if (d.kind == ExpertKind::CrackSegmenter) {
      // Crack experts ignore prompts: a seeded polyline across the frame,
      // thickened once.
      SplitMix64 rng(mix_seed(d.mock_seed(), d.id + "|" + image.id));
      int x = static_cast<int>(rng.uniform_int(0, image.width - 1));
      int y = 0;
      while (y < image.height - 1) {
        const int nx = std::clamp(
            x + static_cast<int>(rng.uniform_int(-3, 3)), 0, image.width - 1);
        const int ny = std::min(image.height - 1,
                                y + 1 + static_cast<int>(rng.uniform_int(0, 3)));
        draw_segment(mask, x, y, nx, ny);
        x = nx;
        y = ny;
      }
      return dilate(mask, 1);
    }
    switch (prompt.mode) {
      case SegmentPrompt::Mode::Bbox: {
        for (const BoundingBox& b : prompt.boxes) {
          SplitMix64 rng(mix_seed(d.mock_seed(),
                                  d.id + "|" + image.id + "|" + std::to_string(b.x) +
                                      "," + std::to_string(b.y)));
          const double rx = std::max(1.0, b.w * rng.uniform(0.28, 0.42));
          const double ry = std::max(1.0, b.h * rng.uniform(0.28, 0.42));
          fill_ellipse(mask, b.x + b.w / 2, b.y + b.h / 2, rx, ry);
        }
        // Blob stays inside the prompt boxes by construction of the radii;
        // clip anyway so the contract is structural.
        if (!prompt.boxes.empty()) mask = clip_mask_to_boxes(mask, prompt.boxes);
        return mask;
      }
      case SegmentPrompt::Mode::Points: {
        SplitMix64 rng(mix_seed(d.mock_seed(), d.id + "|" + image.id + "|points"));
        for (const auto& [px, py] : prompt.points) {
          const double r = rng.uniform(3.0, 8.0);
          fill_ellipse(mask, px, py, r, r);
        }
        return mask;
      }
      case SegmentPrompt::Mode::Text: {
        SplitMix64 rng(
            mix_seed(d.mock_seed(), d.id + "|" + image.id + "|" + prompt.concept_text));
        const int blobs = static_cast<int>(1 + rng.next() % 3);
        for (int i = 0; i < blobs; ++i) {
          const double rx = std::max(2.0, rng.uniform(0.05, 0.15) * image.width);
          const double ry = std::max(2.0, rng.uniform(0.05, 0.15) * image.height);
          fill_ellipse(mask, rng.uniform(rx, image.width - rx),
                       rng.uniform(ry, image.height - ry), rx, ry);
        }
        return mask;
      }
    }
    throw ValidationError("unknown prompt mode");
  }

  nlohmann::json prompt_json{{"mode", prompt_mode_name(prompt.mode)}};
  if (prompt.mode == SegmentPrompt::Mode::Bbox) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const BoundingBox& b : prompt.boxes)
      boxes.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
    prompt_json["boxes"] = boxes;
  } else if (prompt.mode == SegmentPrompt::Mode::Points) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& [px, py] : prompt.points) points.push_back({px, py});
    prompt_json["points"] = points;
  } else {
    prompt_json["concept"] = prompt.concept_text;
  }
  const nlohmann::json body{{"task", "segment"},
                            {"image", image_ref_to_wire(image)},
                            {"prompt", prompt_json}};
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(post_with_retry(d, body));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("segmenter " + d.id + ": unparseable reply: " + e.what());
  }
  if (!reply.contains("mask_rle") || !reply.at("mask_rle").is_string())
    throw ProtocolError("segmenter " + d.id + ": missing field mask_rle");
  BinaryMask mask;
  try {
    mask = BinaryMask::from_rle(reply.at("mask_rle").get<std::string>());
  } catch (const ValidationError& e) {
    throw ProtocolError("segmenter " + d.id + ": bad mask_rle: " + e.what());
  }
  if (mask.width() != image.width || mask.height() != image.height)
    throw ProtocolError("segmenter " + d.id + ": mask_rle dimensions mismatch");
  return mask;
}

RasterImage ExpertGateway::call_generator(const GeneratorRequest& req,
                                          const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::Generator)
    throw ValidationError("expert " + d.id + " is not a generator");
  if (req.task != "inpaint" && req.task != "compose")
    throw ValidationError("unknown generator task: " + req.task);
  if (!req.pixels.valid())
    throw ValidationError("generator request carries no base image pixels");

  if (d.is_mock()) {
    if (req.task == "inpaint")
      return mean_ring_inpaint(req.pixels, req.mask, req.ring_width);
    const auto x0 = static_cast<int>(std::llround(req.placement.x));
    const auto y0 = static_cast<int>(std::llround(req.placement.y));
    return alpha_blend_patch(req.pixels, req.crop, req.crop_mask, x0, y0,
                             req.alpha, req.feather);
  }

  nlohmann::json body{{"task", req.task},
                      {"image", image_ref_to_wire(req.image)},
                      {"image_rgb_base64",
                       encode_base64(std::string(
                           reinterpret_cast<const char*>(req.pixels.pixels.data()),
                           req.pixels.pixels.size()))},
                      {"mask_rle", req.mask.to_rle()},
                      {"category", category_name(req.category)},
                      {"text", req.text},
                      {"seed", req.seed}};
  if (req.task == "inpaint") {
    body["params"] = {{"ring_width", req.ring_width}};
  } else {
    body["params"] = {{"alpha", req.alpha}, {"feather", req.feather}};
    body["crop_rgb_base64"] = encode_base64(std::string(
        reinterpret_cast<const char*>(req.crop.pixels.data()), req.crop.pixels.size()));
    body["crop_mask_rle"] = req.crop_mask.to_rle();
    body["placement"] = {{"x", req.placement.x},
                         {"y", req.placement.y},
                         {"w", req.placement.w},
                         {"h", req.placement.h}};
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(post_with_retry(d, body));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("generator " + d.id + ": unparseable reply: " + e.what());
  }
  if (!reply.contains("image") || !reply.at("image").is_object())
    throw ProtocolError("generator " + d.id + ": missing field image");
  const nlohmann::json& img = reply.at("image");
  RasterImage out;
  try {
    out.width = img.at("width").get<int>();
    out.height = img.at("height").get<int>();
    const std::string raw = decode_base64(img.at("rgb_base64").get<std::string>());
    out.pixels.assign(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("generator " + d.id + ": malformed image: " + e.what());
  }
  if (out.width != req.pixels.width || out.height != req.pixels.height ||
      !out.valid())
    throw ProtocolError("generator " + d.id + ": image dimensions mismatch");
  return out;
}

namespace {

Eigen::VectorXf seeded_unit_vector(std::uint64_t seed, int dim) {
  SplitMix64 rng(seed);
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i)
    v[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  const float norm = v.norm();
  if (norm < 1e-12f) {
    v.setZero();
    v[0] = 1.0f;
    return v;
  }
  return v / norm;
}

Eigen::VectorXf parse_embedding_reply(const std::string& raw,
                                      const std::string& id, int dim) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("embedder " + id + ": unparseable reply: " + e.what());
  }
  if (!reply.contains("embedding") || !reply.at("embedding").is_array())
    throw ProtocolError("embedder " + id + ": missing field embedding");
  const auto& arr = reply.at("embedding");
  if (static_cast<int>(arr.size()) != dim)
    throw ProtocolError("embedder " + id + ": embedding dimension mismatch");
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v[i] = arr[static_cast<std::size_t>(i)].get<float>();
  return v;
}

}  // namespace

Eigen::VectorXf ExpertGateway::embed_text(const std::string& text,
                                          const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::Embedder)
    throw ValidationError("expert " + d.id + " is not an embedder");
  const int dim = embedding_dim_of(d);
  if (d.is_mock())
    return seeded_unit_vector(mix_seed(d.mock_seed(), "text|" + text), dim);
  const nlohmann::json body{{"task", "embed"}, {"text", text}};
  return parse_embedding_reply(post_with_retry(d, body), d.id, dim);
}

Eigen::VectorXf ExpertGateway::embed_image(const RasterImage& image,
                                           const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::Embedder)
    throw ValidationError("expert " + d.id + " is not an embedder");
  if (!image.valid()) throw ValidationError("embed_image: invalid image");
  const int dim = embedding_dim_of(d);
  if (d.is_mock()) {
    return seeded_unit_vector(
        mix_seed(d.mock_seed(), "image|" + image_checksum(image)), dim);
  }
  const nlohmann::json body{
      {"task", "embed"},
      {"image", {{"width", image.width}, {"height", image.height}}},
      {"image_rgb_base64",
       encode_base64(std::string(reinterpret_cast<const char*>(image.pixels.data()),
                                 image.pixels.size()))}};
  return parse_embedding_reply(post_with_retry(d, body), d.id, dim);
}

std::string ExpertGateway::call_adjudicator(const nlohmann::json& request_body,
                                            const ExpertDescriptor& d) const {
  if (d.kind != ExpertKind::Adjudicator)
    throw ValidationError("expert " + d.id + " is not an adjudicator");
  // No retry here: adjudicate() owns the retry-then-fallback policy.
  return transport_->post_json(d.endpoint, request_body.dump(), d.timeout_ms,
                               bearer_of(d));
}

}  // namespace facadefixer
