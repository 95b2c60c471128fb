#pragma once

// Rigid-body math and pinhole camera model.
//
// Conventions used everywhere in tubenerf:
//   * camera frame: +z looks forward, +x right, +y down;
//   * poses map camera coordinates to world coordinates (camera-to-world);
//   * a pixel with integer index (i, j) has its center at (i + 0.5, j + 0.5).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace tubenerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Unit quaternion (w, x, y, z). Constructors normalize.
class Quaternion {
 public:
  Quaternion() = default;
  Quaternion(double w, double x, double y, double z);

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3& axis, double radians);
  static Quaternion from_matrix(const Mat3& rotation);

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  double norm() const;
  double dot(const Quaternion& other) const;
  Quaternion conjugate() const;
  Quaternion negated() const;
  /// Hamilton product; (a * b) rotates by b first, then by a.
  Quaternion operator*(const Quaternion& other) const;

  Mat3 to_matrix() const;
  Vec3 rotate(const Vec3& v) const;
  /// Rotation angle in [0, pi].
  double angle() const;

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Spherical linear interpolation along the shortest arc.
Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double u);

/// Rigid camera-to-world transform.
struct Pose {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);
  Mat4 to_matrix() const;
  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  /// Camera forward axis (+z) in world coordinates.
  Vec3 forward() const { return rotation.rotate(Vec3::UnitZ()); }
};

/// compose(a, b) maps p to a(b(p)).
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

/// Angle of the relative rotation between two poses, radians.
double rotation_distance(const Pose& a, const Pose& b);
double translation_distance(const Pose& a, const Pose& b);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const;
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  /// Symmetric pinhole with the given horizontal field of view.
  static CameraIntrinsics from_fov(int width, int height, double horizontal_fov_deg);
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

inline PixelCoord pixel_center(int i, int j) { return {i + 0.5, j + 0.5}; }

struct Projection {
  double u = 0.0;
  double v = 0.0;
  bool in_frustum = false;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double near = 0.05;
  double far = 1.0;
};

/// Camera-frame point at z = depth. Throws std::domain_error for depth <= 0 and
/// std::out_of_range for pixels outside the image.
Vec3 backproject(const PixelCoord& pixel, double depth, const CameraIntrinsics& K);
Projection project(const Vec3& point, const CameraIntrinsics& K);

/// Unit camera-frame bearing through a pixel.
Vec3 pixel_bearing(const PixelCoord& pixel, const CameraIntrinsics& K);
/// Ratio (distance along the unit ray) / (z-depth) for a pixel.
double ray_length_per_depth(const PixelCoord& pixel, const CameraIntrinsics& K);

std::vector<Ray> generate_rays(const Pose& pose, const CameraIntrinsics& K,
                               std::span<const PixelCoord> pixels, double near = 0.05,
                               double far = 1.0);

/// All rotations of `pose` about its own center by the signed angle set
/// {+a, -a : a in angles_deg}, per axis, composed x then y then z.
std::vector<Pose> spin_pose_grid(const Pose& pose, std::span<const double> angles_deg);

/// n poses strictly between a and b: slerp rotation, linear translation, u = k / (n + 1).
std::vector<Pose> helix_poses(const Pose& a, const Pose& b, int n);

/// Camera at `eye` looking at `target`; `up_hint` is the approximate world direction of -y.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint);

}  // namespace tubenerf
