#include "tubenerf/integration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tubenerf {

void IntegrationConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("IntegrationConfig: epsilon must be positive");
  if (!(visibility_threshold > 0.0 && visibility_threshold <= 1.0)) {
    throw std::invalid_argument("IntegrationConfig: visibility_threshold must lie in (0, 1]");
  }
}

void to_json(nlohmann::json& j, const IntegrationConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"distance_threshold", c.distance_threshold},
       {"visibility_threshold", c.visibility_threshold}};
}

void from_json(const nlohmann::json& j, IntegrationConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.distance_threshold = j.value("distance_threshold", c.distance_threshold);
  c.visibility_threshold = j.value("visibility_threshold", c.visibility_threshold);
}

double point_line_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len = ab.norm();
  if (len < 1e-12) return (p - a).norm();
  return (p - a).cross(ab).norm() / len;
}

namespace {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-24) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

DistanceDecision filter_by_distance(const Vec3& p, const Vec3& center_a, const Vec3& center_b, double threshold) {
  DistanceDecision d;
  d.distance = point_line_distance(p, center_a, center_b);
  d.keep_a = d.keep_b = d.distance < threshold;
  return d;
}

bool filter_by_visibility(const Vec3& p, const Vec3& direction, const VisibilityFn& visibility, double threshold) {
  return visibility(p, direction) >= threshold;
}

std::vector<double> idw_weights(const Vec3& p, std::span<const Vec3> centers, double epsilon) {
  if (centers.empty()) throw std::invalid_argument("idw_weights: no surviving blocks");
  if (!(epsilon > 0.0)) throw std::invalid_argument("idw_weights: epsilon must be positive");
  std::vector<double> w(centers.size(), 0.0);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if ((p - centers[i]).norm() < 1e-9) {
      w[i] = 1.0;
      return w;
    }
  }
  // Scale by the smallest distance first so large epsilon cannot underflow.
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& c : centers) dmin = std::min(dmin, (p - c).norm());
  double total = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    w[i] = std::pow((p - centers[i]).norm() / dmin, -epsilon);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

RenderedImage blend(std::span<const RenderedImage> renders, std::span<const double> weights) {
  if (renders.empty() || renders.size() != weights.size()) {
    throw std::invalid_argument("blend: need one weight per render");
  }
  RenderedImage out{Image(renders[0].rgb.width(), renders[0].rgb.height(), 3),
                    Image(renders[0].rgb.width(), renders[0].rgb.height(), 1),
                    Image(renders[0].rgb.width(), renders[0].rgb.height(), 1)};
  for (std::size_t r = 0; r < renders.size(); ++r) {
    const auto& in = renders[r];
    if (!in.rgb.same_shape(out.rgb) || !in.depth.same_shape(out.depth)) {
      throw std::invalid_argument("blend: render sizes differ");
    }
    const double w = weights[r];
    for (std::size_t i = 0; i < out.rgb.data().size(); ++i) out.rgb.data()[i] += w * in.rgb.data()[i];
    for (std::size_t i = 0; i < out.depth.data().size(); ++i) out.depth.data()[i] += w * in.depth.data()[i];
    if (in.accumulation.same_shape(out.accumulation)) {
      for (std::size_t i = 0; i < out.accumulation.data().size(); ++i) {
        out.accumulation.data()[i] += w * in.accumulation.data()[i];
      }
    }
  }
  return out;
}

double default_distance_threshold(std::span<const Vec3> centers) {
  if (centers.size() < 2) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < centers.size(); ++i) sum += (centers[i + 1] - centers[i]).norm();
  return 1.5 * sum / static_cast<double>(centers.size() - 1);
}

BlockModel make_block_model(std::size_t index, const Vec3& center, const MultiLevelField& field,
                            const RenderConfig& render_config, int active_stages, int jobs) {
  BlockModel m;
  m.index = index;
  m.center = center;
  m.render = [&field, render_config, active_stages, jobs](const Pose& pose, const CameraIntrinsics& K) {
    return render_image(field, pose, K, render_config, active_stages, jobs);
  };
  m.visibility = [&field](const Vec3& x, const Vec3& d) { return field.visibility(x, d); };
  return m;
}

BlockSelection select_blocks(const Vec3& p, const Vec3& direction, std::span<const BlockModel> models,
                             const IntegrationConfig& config) {
  config.validate();
  if (models.empty()) throw std::invalid_argument("select_blocks: no block models");
  BlockSelection sel;
  std::vector<Vec3> all_centers;
  for (const auto& m : models) all_centers.push_back(m.center);

  std::vector<std::size_t> candidates;
  if (models.size() == 1) {
    candidates.push_back(0);
  } else {
    std::size_t pair = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < models.size(); ++i) {
      const double d = point_segment_distance(p, models[i].center, models[i + 1].center);
      if (d < best) {
        best = d;
        pair = i;
      }
    }
    const double threshold =
        config.distance_threshold > 0.0 ? config.distance_threshold : default_distance_threshold(all_centers);
    const auto dec = filter_by_distance(p, models[pair].center, models[pair + 1].center, threshold);
    if (dec.keep_a) candidates.push_back(pair);
    if (dec.keep_b) candidates.push_back(pair + 1);
  }
  for (const auto c : candidates) {
    if (filter_by_visibility(p, direction, models[c].visibility, config.visibility_threshold)) {
      sel.blocks.push_back(c);
    }
  }
  if (sel.blocks.empty()) {
    sel.fallback = true;
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < models.size(); ++i) {
      if ((p - models[i].center).norm() < (p - models[nearest].center).norm()) nearest = i;
    }
    sel.blocks.push_back(nearest);
  }
  std::vector<Vec3> centers;
  for (const auto b : sel.blocks) centers.push_back(models[b].center);
  sel.weights = idw_weights(p, centers, config.epsilon);
  return sel;
}

IntegratedRender render_integrated(std::span<const BlockModel> models, const Pose& pose, const CameraIntrinsics& K,
                                   const IntegrationConfig& config) {
  IntegratedRender out;
  out.selection = select_blocks(pose.translation, pose.forward(), models, config);
  std::vector<RenderedImage> renders;
  std::vector<double> weights;
  for (std::size_t i = 0; i < out.selection.blocks.size(); ++i) {
    if (out.selection.weights[i] == 0.0) continue;
    renders.push_back(models[out.selection.blocks[i]].render(pose, K));
    weights.push_back(out.selection.weights[i]);
  }
  out.image = blend(renders, weights);
  return out;
}

}  // namespace tubenerf
