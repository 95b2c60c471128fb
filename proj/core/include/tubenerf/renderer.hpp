#pragma once

// Discretized volume rendering along rays.
//
// Samples sit at bin midpoints (or a uniform jitter inside each bin) between
// ray.near and ray.far. With delta_j = t_{j+1} - t_j and delta_last = far - t_last:
//   alpha_j = 1 - exp(-sigma_j delta_j),  T_j = prod_{l<j} (1 - alpha_l),  w_j = T_j alpha_j.
// Depth is the weight-normalized termination distance along the (unit) ray.

#include "tubenerf/autodiff.hpp"
#include "tubenerf/field.hpp"
#include "tubenerf/geometry.hpp"
#include "tubenerf/image.hpp"
#include "tubenerf/random.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <span>
#include <vector>

namespace tubenerf {

struct RenderConfig {
  int samples_per_ray = 128;
  bool stratified_jitter = false;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  /// Overrides `background` with white.
  bool white_background = false;
  /// Ray bounds used when rays are generated from a camera.
  double near = 0.05;
  double far = 1.0;
  /// Rays per evaluation chunk when rendering whole images.
  int chunk_rays = 1024;

  void validate() const;
  std::array<double, 3> effective_background() const;
};

void to_json(nlohmann::json& j, const RenderConfig& c);
void from_json(const nlohmann::json& j, RenderConfig& c);

struct RenderOutput {
  std::array<double, 3> color{};
  double depth = 0.0;
  double accumulation = 0.0;
  std::vector<double> tvals;
  std::vector<double> transmittance;
  std::vector<double> weights;
  double final_transmittance = 1.0;
};

/// Field given as a plain function; FieldSample::density is the world-space density.
using AnalyticField = std::function<FieldSample(const Vec3& x, const Vec3& d)>;

/// Sample distances and interval lengths for one ray. `jitter` may be null.
void sample_along_ray(const Ray& ray, int samples, Rng* jitter, double* tvals, double* deltas);

RenderOutput render_ray(const AnalyticField& field, const Ray& ray, const RenderConfig& config,
                        Rng* jitter = nullptr);
RenderOutput render_ray(const MultiLevelField& field, const Ray& ray, const RenderConfig& config,
                        int active_stages, Rng* jitter = nullptr);

/// Differentiable rendering of a ray batch on `tape`.
struct RayBatchRender {
  CompositeResult composite;
  /// Field density in (0, 1) per sample, [R*S, 1]; world density is density_scale times this.
  Var density;
  std::vector<Vec3> positions;   // R*S sample points, ray-major
  std::vector<Vec3> directions;  // R*S
  Tensor tvals;                  // [R, S]
  Tensor deltas;                 // [R, S]
};

RayBatchRender render_rays(Tape& tape, MultiLevelField& field, std::span<const Ray> rays,
                           const RenderConfig& config, int active_stages, Rng* jitter = nullptr);

struct RenderedImage {
  Image rgb;    // 3 channels
  Image depth;  // z-depth, 1 channel
  Image accumulation;
};

/// Full-raster render; depth is converted from ray distance to z-depth.
/// Deterministic for a fixed config when jitter is off, independent of `jobs`.
RenderedImage render_image(const MultiLevelField& field, const Pose& pose, const CameraIntrinsics& K,
                           const RenderConfig& config, int active_stages, int jobs = 1);
RenderedImage render_image(const AnalyticField& field, const Pose& pose, const CameraIntrinsics& K,
                           const RenderConfig& config, int jobs = 1);

enum class TransTarget { transmittance, alpha };

/// Per-sample supervision targets for the visibility head, detached from any tape.
std::vector<double> ray_transmittance_targets(const RenderOutput& output,
                                              TransTarget target = TransTarget::transmittance);
/// Same for a batch: [R*S, 1] in ray-major order.
Tensor batch_transmittance_targets(const RayBatchRender& render,
                                   TransTarget target = TransTarget::transmittance);

}  // namespace tubenerf
