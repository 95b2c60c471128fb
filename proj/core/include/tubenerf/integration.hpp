#pragma once

// Blending of per-block renders: distance and visibility filtering of the
// candidate blocks, then inverse-distance weighting by block center.

#include "tubenerf/field.hpp"
#include "tubenerf/geometry.hpp"
#include "tubenerf/renderer.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <span>
#include <vector>

namespace tubenerf {

struct IntegrationConfig {
  double epsilon = 2.0;
  /// World units; values <= 0 mean 1.5 x the mean adjacent center spacing.
  double distance_threshold = 0.0;
  double visibility_threshold = 0.05;

  void validate() const;
};

void to_json(nlohmann::json& j, const IntegrationConfig& c);
void from_json(const nlohmann::json& j, IntegrationConfig& c);

/// Distance from p to the infinite line through a and b (point distance when a == b).
double point_line_distance(const Vec3& p, const Vec3& a, const Vec3& b);

struct DistanceDecision {
  double distance = 0.0;
  bool keep_a = false;
  bool keep_b = false;
};
DistanceDecision filter_by_distance(const Vec3& p, const Vec3& center_a, const Vec3& center_b, double threshold);

using VisibilityFn = std::function<double(const Vec3& x, const Vec3& d)>;
bool filter_by_visibility(const Vec3& p, const Vec3& direction, const VisibilityFn& visibility, double threshold);

/// Normalized inverse-distance weights; throws std::invalid_argument when `centers` is empty.
std::vector<double> idw_weights(const Vec3& p, std::span<const Vec3> centers, double epsilon);

/// Per-pixel convex combination of colour and depth (and accumulation).
RenderedImage blend(std::span<const RenderedImage> renders, std::span<const double> weights);

double default_distance_threshold(std::span<const Vec3> centers);

/// One trained block as seen by the integrator.
struct BlockModel {
  std::size_t index = 0;
  Vec3 center = Vec3::Zero();
  std::function<RenderedImage(const Pose&, const CameraIntrinsics&)> render;
  VisibilityFn visibility;
};

BlockModel make_block_model(std::size_t index, const Vec3& center, const MultiLevelField& field,
                            const RenderConfig& render_config, int active_stages, int jobs = 1);

struct BlockSelection {
  std::vector<std::size_t> blocks;  // positions into the model list
  std::vector<double> weights;
  bool fallback = false;  // every candidate was filtered; nearest center used
};

/// Chooses blocks for a view from camera position p and view direction d:
/// the adjacent pair whose center segment is closest to p goes through both
/// filters, the survivors get IDW weights.
BlockSelection select_blocks(const Vec3& p, const Vec3& direction, std::span<const BlockModel> models,
                             const IntegrationConfig& config);

struct IntegratedRender {
  RenderedImage image;
  BlockSelection selection;
};

IntegratedRender render_integrated(std::span<const BlockModel> models, const Pose& pose, const CameraIntrinsics& K,
                                   const IntegrationConfig& config);

}  // namespace tubenerf
