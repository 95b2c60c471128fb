#pragma once

// Procedural tube phantoms with exact ground truth, dataset I/O and the
// train/test split.
//
// On-disk layout of a dataset directory:
//   poses.json       intrinsics + per-frame camera-to-world pose
//   rgb/%06d.png     8-bit RGB
//   depth/%06d.pfm   float32 z-depth (or depth/%06d.png, 16-bit with a scale)
//   phantom.json     generator config (only for generated data)
// See docs/formats.md for the exact schema.

#include "tubenerf/geometry.hpp"
#include "tubenerf/image.hpp"
#include "tubenerf/renderer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tubenerf {

struct Frame {
  std::size_t id = 0;
  Pose pose;
  Image rgb;    // 3 channels in [0, 1]
  Image depth;  // z-depth, world units
};

struct Dataset {
  CameraIntrinsics intrinsics;
  std::vector<Frame> frames;
  /// Generator config or other provenance, written verbatim as phantom.json.
  nlohmann::json provenance;

  /// Largest ray distance over all depth maps (0 when empty).
  double max_ray_distance() const;
};

struct TubePhantomConfig {
  std::string preset = "custom";
  /// Centerline through these points (Catmull-Rom), world units.
  std::vector<Vec3> control_points;
  int samples_per_span = 48;
  double base_radius = 1.0;
  /// Relative radius bump: r(s) = R (1 + amplitude sin(2 pi frequency s + phase)).
  double fold_amplitude = 0.08;
  double fold_frequency = 0.35;
  double fold_phase = 0.0;
  std::uint64_t texture_seed = 7;
  int texture_components = 6;
  /// Camera offset from the centerline as a fraction of the local radius.
  double camera_offset = 0.15;
  double look_ahead = 1.5;
  /// Camera arc-length range as fractions of the centerline length.
  double path_start = 0.08;
  double path_end = 0.75;
  int frame_count = 120;
  int width = 96;
  int height = 96;
  double fov_deg = 80.0;

  void validate() const;
  static TubePhantomConfig preset_named(const std::string& name);
};

void to_json(nlohmann::json& j, const TubePhantomConfig& c);
void from_json(const nlohmann::json& j, TubePhantomConfig& c);

/// Implicit tube: wall(x) < 0 inside the lumen, >= 0 in or beyond the wall.
class TubePhantom {
 public:
  explicit TubePhantom(TubePhantomConfig config);

  const TubePhantomConfig& config() const { return config_; }
  double length() const { return cumulative_.back(); }
  double max_radius() const;

  struct Closest {
    double s = 0.0;         // arc length of the closest centerline point (clamped)
    double s_raw = 0.0;     // unclamped parameter (negative/longer beyond the caps)
    double distance = 0.0;  // to the centerline polyline
    Vec3 point = Vec3::Zero();
    std::size_t segment = 0;
    bool found = false;
  };
  Closest closest(const Vec3& x) const;

  double radius(double s) const;
  double wall(const Vec3& x) const;
  bool inside(const Vec3& x) const { return wall(x) < 0.0; }
  /// Unlit wall colour at (or near) a point on the wall.
  std::array<double, 3> texture(const Vec3& x) const;

  Vec3 centerline(double s) const;
  Vec3 tangent(double s) const;
  /// Parallel-transported normal at s.
  Vec3 normal(double s) const;

  /// First wall hit along a ray starting inside the lumen, located to 1e-6
  /// world units. Returns nullopt when the origin is not inside or nothing is hit.
  std::optional<double> intersect(const Vec3& origin, const Vec3& direction, double max_distance = 1e3) const;

  Pose camera_pose(double s) const;
  CameraIntrinsics intrinsics() const;

 private:
  void build_grid();
  std::size_t segment_at(double s, double* local) const;

  TubePhantomConfig config_;
  std::vector<Vec3> points_;
  std::vector<double> cumulative_;
  std::vector<Vec3> tangents_;  // per segment
  std::vector<Vec3> normals_;   // per segment, parallel transport
  struct TextureWave {
    double freq_s;
    int freq_theta;
    double phase;
    std::array<double, 3> amplitude;
  };
  std::vector<TextureWave> waves_;
  // Uniform grid over segment bounding boxes (expanded by the max radius).
  Vec3 grid_min_ = Vec3::Zero();
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<std::vector<std::uint32_t>> cells_;
};

/// Renders every frame of the phantom. Images are quantized exactly as they
/// are stored on disk, so save + load reproduces the returned dataset.
Dataset generate_phantom(const TubePhantomConfig& config, int jobs = 1);

/// Volume-rendering stand-in for the phantom: density `sigma` outside the lumen, 0 inside.
AnalyticField phantom_density_field(const TubePhantom& phantom, double sigma);

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

struct SplitSpec {
  int test_every = 4;
  /// Test frames are those with index % test_every == offset.
  int offset = 2;
  /// Inverted protocol: train on index % test_every == offset, test on the rest.
  bool sparse = false;
  /// When set, these frame positions are the test set regardless of the rule.
  std::vector<std::size_t> test_indices;

  void validate() const;
};

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

struct Split {
  std::vector<std::size_t> train;  // positions into the frame list
  std::vector<std::size_t> test;
};

Split split(std::size_t frame_count, const SplitSpec& spec);

std::string frame_name(std::size_t id);

}  // namespace tubenerf
