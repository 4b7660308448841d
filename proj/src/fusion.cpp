#include "facadefixer/fusion.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

namespace facadefixer {

ExpertOutput ExpertOutput::from_detections(std::string expert,
                                           std::string image_id,
                                           std::vector<Detection> detections) {
  for (Detection& d : detections) d.source = expert;
  ExpertOutput out;
  out.expert = std::move(expert);
  out.image_id = std::move(image_id);
  out.payload = std::move(detections);
  return out;
}

ExpertOutput ExpertOutput::from_mask(std::string expert, std::string image_id,
                                     BinaryMask mask) {
  ExpertOutput out;
  out.expert = std::move(expert);
  out.image_id = std::move(image_id);
  out.payload = std::move(mask);
  return out;
}

namespace {

void validate_config(const FusionConfig& cfg) {
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0))
    throw ValidationError("iou_threshold must be in (0, 1]");
  if (cfg.min_agreement < 2)
    throw ValidationError("min_agreement must be at least 2");
}

auto detection_key(const Detection& d) {
  return std::make_tuple(static_cast<int>(d.category), d.source, d.box.x,
                         d.box.y, d.box.w, d.box.h, d.confidence);
}

std::vector<Detection> collect_detections(std::span<const ExpertOutput> outputs) {
  if (outputs.empty())
    throw ValidationError("fusion requires at least one expert output");
  const std::string& image_id = outputs.front().image_id;
  std::vector<Detection> all;
  for (const ExpertOutput& out : outputs) {
    if (!out.holds_detections())
      throw ValidationError("box fusion given a non-detection expert output");
    if (out.image_id != image_id)
      throw ValidationError("box fusion given outputs for different images");
    for (const Detection& d : out.detections()) {
      if (!box_valid(d.box))
        throw ValidationError("degenerate box from expert " + out.expert);
      if (d.confidence < 0.0 || d.confidence > 1.0)
        throw ValidationError("confidence out of [0,1] from expert " + out.expert);
      if (d.source != out.expert)
        throw ValidationError("detection source does not match its expert");
      all.push_back(d);
    }
  }
  return all;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

std::string joined_sources(const std::vector<Detection>& cluster) {
  std::set<std::string> ids;
  for (const Detection& d : cluster) ids.insert(d.source);
  std::string out;
  for (const std::string& id : ids) {
    if (!out.empty()) out += "+";
    out += id;
  }
  return out;
}

Detection representative(const std::vector<Detection>& cluster, ScoreRule rule) {
  switch (rule) {
    case ScoreRule::Max: {
      const Detection* best = &cluster.front();
      for (const Detection& d : cluster) {
        if (d.confidence > best->confidence ||
            (d.confidence == best->confidence &&
             std::tie(d.source, d.box.x, d.box.y) <
                 std::tie(best->source, best->box.x, best->box.y))) {
          best = &d;
        }
      }
      return *best;
    }
    case ScoreRule::Mean: {
      Detection out;
      out.category = cluster.front().category;
      double n = static_cast<double>(cluster.size());
      for (const Detection& d : cluster) {
        out.box.x += d.box.x / n;
        out.box.y += d.box.y / n;
        out.box.w += d.box.w / n;
        out.box.h += d.box.h / n;
        out.confidence += d.confidence / n;
      }
      out.source = joined_sources(cluster);
      return out;
    }
    case ScoreRule::WeightedAvg: {
      Detection out;
      out.category = cluster.front().category;
      double weight_sum = 0.0;
      for (const Detection& d : cluster) weight_sum += d.confidence;
      for (const Detection& d : cluster) {
        // Equal weights when every member has zero confidence.
        const double wt = weight_sum > 0.0 ? d.confidence / weight_sum
                                           : 1.0 / cluster.size();
        out.box.x += wt * d.box.x;
        out.box.y += wt * d.box.y;
        out.box.w += wt * d.box.w;
        out.box.h += wt * d.box.h;
        out.confidence += d.confidence / cluster.size();
      }
      out.source = joined_sources(cluster);
      return out;
    }
  }
  throw ValidationError("unknown score rule");
}

}  // namespace

std::vector<std::vector<Detection>> cluster_boxes(
    std::span<const ExpertOutput> outputs, const FusionConfig& cfg) {
  validate_config(cfg);
  std::vector<Detection> all = collect_detections(outputs);
  // Canonical detection order first, so the clustering result cannot depend
  // on input order.
  std::sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) {
    return detection_key(a) < detection_key(b);
  });

  UnionFind uf(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (all[i].category != all[j].category) continue;
      if (box_iou(all[i].box, all[j].box) >= cfg.iou_threshold) uf.unite(i, j);
    }
  }

  std::vector<std::vector<Detection>> clusters;
  std::vector<std::int64_t> root_to_cluster(all.size(), -1);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::size_t root = uf.find(i);
    if (root_to_cluster[root] < 0) {
      root_to_cluster[root] = static_cast<std::int64_t>(clusters.size());
      clusters.emplace_back();
    }
    clusters[static_cast<std::size_t>(root_to_cluster[root])].push_back(all[i]);
  }
  // Members are already in canonical order; order clusters by first member.
  std::sort(clusters.begin(), clusters.end(),
            [](const std::vector<Detection>& a, const std::vector<Detection>& b) {
              return detection_key(a.front()) < detection_key(b.front());
            });
  return clusters;
}

std::vector<Detection> fuse_union(std::span<const ExpertOutput> outputs,
                                  const FusionConfig& cfg) {
  std::vector<Detection> fused;
  for (const auto& cluster : cluster_boxes(outputs, cfg))
    fused.push_back(representative(cluster, cfg.score_rule));
  return fused;
}

std::vector<Detection> fuse_intersection(std::span<const ExpertOutput> outputs,
                                         const FusionConfig& cfg) {
  std::vector<Detection> fused;
  for (const auto& cluster : cluster_boxes(outputs, cfg)) {
    std::set<std::string> experts;
    for (const Detection& d : cluster) experts.insert(d.source);
    if (static_cast<int>(experts.size()) < cfg.min_agreement) continue;
    fused.push_back(representative(cluster, ScoreRule::WeightedAvg));
  }
  return fused;
}

BinaryMask crack_mask_union(std::span<const ExpertOutput> outputs) {
  if (outputs.empty())
    throw ValidationError("crack_mask_union requires at least one output");
  std::vector<BinaryMask> masks;
  for (const ExpertOutput& out : outputs) {
    if (out.holds_detections())
      throw ValidationError("crack_mask_union given a detection output from " +
                            out.expert);
    masks.push_back(out.mask());
  }
  return mask_union(masks);
}

}  // namespace facadefixer
