#include "tubenerf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tubenerf {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

Quaternion::Quaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Quaternion: zero or non-finite norm");
  }
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double radians) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(0.5 * radians);
  return {std::cos(0.5 * radians), a.x() * s, a.y() * s, a.z() * s};
}

Quaternion Quaternion::from_matrix(const Mat3& rotation) {
  const Eigen::Quaterniond q(rotation);
  return {q.w(), q.x(), q.y(), q.z()};
}

double Quaternion::norm() const { return std::sqrt(dot(*this)); }

double Quaternion::dot(const Quaternion& o) const {
  return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
}

Quaternion Quaternion::conjugate() const {
  Quaternion q;
  q.w_ = w_;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

Quaternion Quaternion::negated() const {
  Quaternion q;
  q.w_ = -w_;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  return {w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
          w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
          w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
          w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_};
}

Mat3 Quaternion::to_matrix() const {
  Mat3 r;
  const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
  const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
  const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
  r << ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy),
      2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx),
      2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz;
  return r;
}

Vec3 Quaternion::rotate(const Vec3& v) const {
  // v' = v + 2 q_v x (q_v x v + w v)
  const Vec3 qv(x_, y_, z_);
  const Vec3 t = 2.0 * qv.cross(v);
  return v + w_ * t + qv.cross(t);
}

double Quaternion::angle() const {
  const double vec = std::sqrt(x_ * x_ + y_ * y_ + z_ * z_);
  return 2.0 * std::atan2(vec, std::abs(w_));
}

Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double u) {
  Quaternion target = q1;
  double cos_theta = q0.dot(q1);
  if (cos_theta < 0.0) {
    target = q1.negated();
    cos_theta = -cos_theta;
  }
  double a = 1.0 - u;
  double b = u;
  if (cos_theta <= 1.0 - 1e-8) {
    const double theta = std::acos(std::min(cos_theta, 1.0));
    const double s = std::sin(theta);
    a = std::sin((1.0 - u) * theta) / s;
    b = std::sin(u * theta) / s;
  }
  return {a * q0.w() + b * target.w(), a * q0.x() + b * target.x(),
          a * q0.y() + b * target.y(), a * q0.z() + b * target.z()};
}

Pose Pose::from_matrix(const Mat4& m) {
  Pose p;
  p.rotation = Quaternion::from_matrix(m.topLeftCorner<3, 3>());
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Mat4 Pose::to_matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.to_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation.rotate(b.translation) + a.translation;
  return out;
}

Pose inverse(const Pose& a) {
  Pose out;
  out.rotation = a.rotation.conjugate();
  out.translation = -out.rotation.rotate(a.translation);
  return out;
}

double rotation_distance(const Pose& a, const Pose& b) {
  return (a.rotation.conjugate() * b.rotation).angle();
}

double translation_distance(const Pose& a, const Pose& b) {
  return (a.translation - b.translation).norm();
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("CameraIntrinsics: width and height must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw std::invalid_argument("CameraIntrinsics: principal point outside the image");
  }
}

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
  CameraIntrinsics K;
  K.width = width;
  K.height = height;
  K.fx = 0.5 * width / std::tan(0.5 * horizontal_fov_deg * kDegToRad);
  K.fy = K.fx;
  K.cx = 0.5 * width;
  K.cy = 0.5 * height;
  K.validate();
  return K;
}

Vec3 backproject(const PixelCoord& pixel, double depth, const CameraIntrinsics& K) {
  if (!(depth > 0.0)) {
    throw std::domain_error("backproject: depth must be positive, got " + std::to_string(depth));
  }
  if (pixel.u < 0.0 || pixel.v < 0.0 || pixel.u > K.width || pixel.v > K.height) {
    throw std::out_of_range("backproject: pixel outside image bounds");
  }
  return {(pixel.u - K.cx) * depth / K.fx, (pixel.v - K.cy) * depth / K.fy, depth};
}

Projection project(const Vec3& point, const CameraIntrinsics& K) {
  Projection p;
  if (!(point.z() > 1e-6)) {
    return p;
  }
  p.u = K.fx * point.x() / point.z() + K.cx;
  p.v = K.fy * point.y() / point.z() + K.cy;
  p.in_frustum = p.u >= 0.0 && p.v >= 0.0 && p.u < K.width && p.v < K.height;
  return p;
}

Vec3 pixel_bearing(const PixelCoord& pixel, const CameraIntrinsics& K) {
  return Vec3((pixel.u - K.cx) / K.fx, (pixel.v - K.cy) / K.fy, 1.0).normalized();
}

double ray_length_per_depth(const PixelCoord& pixel, const CameraIntrinsics& K) {
  return Vec3((pixel.u - K.cx) / K.fx, (pixel.v - K.cy) / K.fy, 1.0).norm();
}

std::vector<Ray> generate_rays(const Pose& pose, const CameraIntrinsics& K,
                               std::span<const PixelCoord> pixels, double near, double far) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  const Mat3 r = pose.rotation.to_matrix();
  for (const auto& px : pixels) {
    Ray ray;
    ray.origin = pose.translation;
    ray.direction = (r * pixel_bearing(px, K)).normalized();
    ray.near = near;
    ray.far = far;
    rays.push_back(ray);
  }
  return rays;
}

std::vector<Pose> spin_pose_grid(const Pose& pose, std::span<const double> angles_deg) {
  if (angles_deg.empty()) {
    throw std::invalid_argument("spin_pose_grid: angle list is empty");
  }
  std::vector<double> signed_angles;
  for (double a : angles_deg) {
    for (double s : {a, -a}) {
      if (std::find(signed_angles.begin(), signed_angles.end(), s) == signed_angles.end()) {
        signed_angles.push_back(s);
      }
    }
  }
  std::vector<Pose> poses;
  poses.reserve(signed_angles.size() * signed_angles.size() * signed_angles.size());
  for (double ax : signed_angles) {
    const Quaternion rx = Quaternion::from_axis_angle(Vec3::UnitX(), ax * kDegToRad);
    for (double ay : signed_angles) {
      const Quaternion ry = Quaternion::from_axis_angle(Vec3::UnitY(), ay * kDegToRad);
      for (double az : signed_angles) {
        const Quaternion rz = Quaternion::from_axis_angle(Vec3::UnitZ(), az * kDegToRad);
        Pose p = pose;
        p.rotation = pose.rotation * (rz * ry * rx);
        poses.push_back(p);
      }
    }
  }
  return poses;
}

std::vector<Pose> helix_poses(const Pose& a, const Pose& b, int n) {
  if (n < 1) {
    throw std::invalid_argument("helix_poses: n must be >= 1");
  }
  std::vector<Pose> poses;
  poses.reserve(n);
  for (int k = 1; k <= n; ++k) {
    const double u = static_cast<double>(k) / (n + 1);
    Pose p;
    p.rotation = slerp(a.rotation, b.rotation, u);
    p.translation = (1.0 - u) * a.translation + u * b.translation;
    poses.push_back(p);
  }
  return poses;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = (-up_hint).cross(z);
  if (x.norm() < 1e-12) {
    x = z.unitOrthogonal();
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  Pose p;
  p.rotation = Quaternion::from_matrix(r);
  p.translation = eye;
  return p;
}

}  // namespace tubenerf
