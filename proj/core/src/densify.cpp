#include "tubenerf/densify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tubenerf {

const char* family_name(PoseFamily f) {
  switch (f) {
    case PoseFamily::original:
      return "original";
    case PoseFamily::spin:
      return "spin";
    case PoseFamily::helix:
      return "helix";
  }
  return "?";
}

std::size_t PseudoLabel::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

PseudoLabel warp(const Image& src_rgb, const Image& src_depth, const Pose& src_pose, const Pose& dst_pose,
                 const CameraIntrinsics& K) {
  K.validate();
  if (src_rgb.width() != K.width || src_rgb.height() != K.height || src_rgb.channels() != 3 ||
      src_depth.width() != K.width || src_depth.height() != K.height) {
    throw std::invalid_argument("warp: source images do not match the intrinsics");
  }
  const Pose to_dst = compose(inverse(dst_pose), src_pose);
  const Mat3 R = to_dst.rotation.to_matrix();
  const Vec3 t = to_dst.translation;
  PseudoLabel out;
  out.pose = dst_pose;
  out.rgb = Image(K.width, K.height, 3);
  out.depth = Image(K.width, K.height, 1);
  out.valid.assign(K.pixel_count(), 0);
  std::vector<double> zbuf(K.pixel_count(), std::numeric_limits<double>::infinity());
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const double d = src_depth.at(x, y);
      if (!(d > 0.0) || !std::isfinite(d)) continue;
      const Vec3 p = R * backproject(pixel_center(x, y), d, K) + t;
      const Projection proj = project(p, K);
      if (!proj.in_frustum) continue;
      const int u = static_cast<int>(std::floor(proj.u));
      const int v = static_cast<int>(std::floor(proj.v));
      if (u < 0 || v < 0 || u >= K.width || v >= K.height) continue;
      const std::size_t i = static_cast<std::size_t>(v) * K.width + u;
      if (p.z() < zbuf[i]) {
        zbuf[i] = p.z();
        out.depth.at(u, v) = p.z();
        for (int ch = 0; ch < 3; ++ch) out.rgb.at(u, v, ch) = src_rgb.at(x, y, ch);
        out.valid[i] = 1;
      }
    }
  }
  return out;
}

RayPool::RayPool(std::vector<Pose> poses, CameraIntrinsics K, std::size_t source_frame)
    : poses_(std::move(poses)), K_(K), source_frame_(source_frame) {
  if (poses_.size() > 65535 || K_.width > 65535 || K_.height > 65535) {
    throw std::invalid_argument("RayPool: too many poses or pixels for compact storage");
  }
}

RayPool build_spin_pool(const Frame& frame, const CameraIntrinsics& K, const std::vector<double>& angles_deg) {
  RayPool pool(spin_pose_grid(frame.pose, angles_deg), K, frame.id);
  for (std::size_t p = 0; p < pool.poses().size(); ++p) {
    const PseudoLabel label = warp(frame.rgb, frame.depth, frame.pose, pool.poses()[p], K);
    for (int y = 0; y < K.height; ++y) {
      for (int x = 0; x < K.width; ++x) {
        if (!label.valid[static_cast<std::size_t>(y) * K.width + x]) continue;
        RayPool::Entry e;
        e.pose = static_cast<std::uint16_t>(p);
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        for (int ch = 0; ch < 3; ++ch) e.rgb[ch] = static_cast<float>(label.rgb.at(x, y, ch));
        e.depth = static_cast<float>(label.depth.at(x, y));
        pool.add(e);
      }
    }
  }
  return pool;
}

SupervisionBatch sample_spin_rays(const RayPool& pool, std::size_t count, Rng& rng, double near, double far,
                                  DensifyStats* stats) {
  if (pool.empty()) throw std::invalid_argument("sample_spin_rays: empty pool");
  if (count > pool.size() && stats) ++stats->spin_pool_clamps;
  const auto picks = sample_without_replacement(rng, pool.size(), count);
  SupervisionBatch b;
  b.family = PoseFamily::spin;
  b.rgb = Tensor::matrix(picks.size(), 3);
  b.depth = Tensor::matrix(picks.size(), 1);
  b.valid.assign(picks.size(), 1);
  b.rays.reserve(picks.size());
  const auto& K = pool.intrinsics();
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& e = pool.entries()[picks[i]];
    const PixelCoord px = pixel_center(e.x, e.y);
    const Pose& pose = pool.poses()[e.pose];
    Ray r;
    r.origin = pose.translation;
    r.direction = pose.rotation.rotate(pixel_bearing(px, K));
    r.near = near;
    r.far = far;
    b.rays.push_back(r);
    for (int ch = 0; ch < 3; ++ch) b.rgb[i * 3 + ch] = e.rgb[ch];
    b.depth[i] = e.depth * ray_length_per_depth(px, K);
  }
  return b;
}

std::vector<PseudoLabel> build_helix_labels(const Frame& a, const Frame& b, int n, const CameraIntrinsics& K) {
  if (n < 1) throw std::invalid_argument("build_helix_labels: n must be >= 1");
  std::vector<PseudoLabel> labels;
  for (const Pose& p : helix_poses(a.pose, b.pose, n)) {
    const bool use_b = translation_distance(p, b.pose) < translation_distance(p, a.pose);
    const Frame& src = use_b ? b : a;
    PseudoLabel l = warp(src.rgb, src.depth, src.pose, p, K);
    l.source_frame = src.id;
    l.family = PoseFamily::helix;
    labels.push_back(std::move(l));
  }
  return labels;
}

double depth_quantization(const Image& depth) {
  if (depth.width() < 2 || depth.height() < 2) throw std::invalid_argument("depth_quantization: image too small");
  double total = 0.0;
  std::size_t n = 0;
  for (int y = 0; y + 1 < depth.height(); ++y) {
    for (int x = 0; x + 1 < depth.width(); ++x) {
      const double d = depth.at(x, y);
      const double dx = depth.at(x + 1, y);
      const double dy = depth.at(x, y + 1);
      if (!(d > 0.0) || !(dx > 0.0) || !(dy > 0.0)) continue;
      total += std::max(std::abs(dx - d), std::abs(dy - d));
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("depth_quantization: no valid pixels");
  return total / static_cast<double>(n);
}

}  // namespace tubenerf
