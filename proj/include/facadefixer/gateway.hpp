#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <condition_variable>
#include <mutex>
#include <string>
#include <vector>

#include "facadefixer/experts.hpp"
#include "facadefixer/fusion.hpp"
#include "facadefixer/raster.hpp"

namespace facadefixer {

/// Transport seam: one JSON POST, one reply body. Throws TransportError on
/// network failure. Injected so tests can fake endpoints without sockets.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual std::string post_json(const std::string& endpoint,
                                const std::string& body, int timeout_ms,
                                const std::string& bearer_token) = 0;
};

/// cpp-httplib backed transport for plain-http endpoints.
std::shared_ptr<HttpTransport> make_httplib_transport();

/// Request to a generator expert. The mock path consumes the structured
/// fields directly; the live path serializes them into the wire body.
struct GeneratorRequest {
  std::string task;  // "inpaint" or "compose"
  ImageRef image;
  RasterImage pixels;  // base image: the raw frame (inpaint) or I_bg (compose)
  BinaryMask mask;     // hole mask (inpaint) or placed instance mask (compose)
  DefectCategory category = DefectCategory::Crack;
  std::string text;
  std::uint64_t seed = 0;
  // inpaint only
  int ring_width = 0;
  // compose only
  RasterImage crop;      // defect patch, already scaled to the placement size
  BinaryMask crop_mask;  // patch-local mask, same size as crop
  BoundingBox placement;
  double alpha = 1.0;
  int feather = 0;
};

/// Uniform client for every expert kind. Live endpoints get one retry on
/// transport failure; replies are validated before they become core types.
/// Mock endpoints ("mock:<seed>") are served in-process by pure functions of
/// (seed, input identity).
class ExpertGateway {
 public:
  explicit ExpertGateway(std::shared_ptr<HttpTransport> transport = nullptr,
                         int max_concurrent = 8);

  ExpertOutput call_detector(const ImageRef& image, const ExpertDescriptor& d) const;
  BinaryMask call_segmenter(const ImageRef& image, const SegmentPrompt& prompt,
                            const ExpertDescriptor& d) const;
  RasterImage call_generator(const GeneratorRequest& req,
                             const ExpertDescriptor& d) const;
  Eigen::VectorXf embed_text(const std::string& text,
                             const ExpertDescriptor& d) const;
  Eigen::VectorXf embed_image(const RasterImage& image,
                              const ExpertDescriptor& d) const;

  /// Single-attempt call to an adjudicator endpoint; the adjudication layer
  /// owns its own retry-and-fallback policy.
  std::string call_adjudicator(const nlohmann::json& request_body,
                               const ExpertDescriptor& d) const;

  /// Validation warnings (clamped boxes, dropped replies) accumulated across
  /// calls, oldest first.
  std::vector<std::string> warnings() const;
  void clear_warnings() const;

  /// Embedding width used by mock embedders without an explicit "dim" param.
  static constexpr int kDefaultEmbeddingDim = 512;

 private:
  std::string post_with_retry(const ExpertDescriptor& d,
                              const nlohmann::json& body) const;
  void warn(std::string message) const;

  std::shared_ptr<HttpTransport> transport_;
  int max_concurrent_;
  mutable std::mutex mutex_;
  mutable int in_flight_ = 0;
  mutable std::condition_variable slots_;
  mutable std::vector<std::string> warnings_;
};

/// The scene a mock detector perceives for an image: the jitter-free base
/// boxes every mock expert's view derives from. Exposed so tests can use the
/// scene as synthetic ground truth.
std::vector<Detection> mock_scene_detections(const ImageRef& image);

// Wire helpers shared with the adjudication layer and tests.
nlohmann::json detection_to_wire(const Detection& d);
Detection detection_from_wire(const nlohmann::json& j);
std::string encode_base64(const std::string& bytes);
std::string decode_base64(const std::string& text);
nlohmann::json image_ref_to_wire(const ImageRef& ref);
ImageRef image_ref_from_wire(const nlohmann::json& j);

}  // namespace facadefixer
