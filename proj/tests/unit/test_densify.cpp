#include "test_support.hpp"

#include "tubenerf/densify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace tubenerf;
using namespace tubenerf::testing;

namespace {

// Fronto-parallel plane at z = 2 with rgb encoding the source pixel index.
struct Synthetic {
  CameraIntrinsics K = CameraIntrinsics::from_fov(32, 24, 70.0);
  Image rgb{32, 24, 3};
  Image depth{32, 24, 1, 2.0};

  Synthetic() {
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        rgb.at(x, y, 0) = x;
        rgb.at(x, y, 1) = y;
        rgb.at(x, y, 2) = 1.0;
      }
  }
};


}  // namespace

TEST(Warp, IdentityReproducesSource) {
  const Synthetic s;
  const Pose pose{Quaternion::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.4), Vec3(0.3, -1, 2)};
  const PseudoLabel l = warp(s.rgb, s.depth, pose, pose, s.K);
  EXPECT_EQ(l.valid_count(), s.K.pixel_count());
  for (int y = 0; y < s.K.height; ++y)
    for (int x = 0; x < s.K.width; ++x) {
      EXPECT_NEAR(l.depth.at(x, y), 2.0, 1e-12);
      EXPECT_EQ(l.rgb.at(x, y, 0), x);
      EXPECT_EQ(l.rgb.at(x, y, 1), y);
    }
}

TEST(Warp, MatchesIndependentReprojection) {
  const Synthetic s;
  const Pose src = Pose::identity();
  const Pose dst{Quaternion::from_axis_angle(Vec3::UnitY(), 0.05), Vec3(0.25, 0.05, 0.1)};
  const PseudoLabel l = warp(s.rgb, s.depth, src, dst, s.K);
  ASSERT_GT(l.valid_count(), s.K.pixel_count() / 2);
  const Eigen::Matrix4d Ts = src.to_matrix();
  const Eigen::Matrix4d Td = dst.to_matrix();
  const Eigen::Matrix4d M = Td.inverse() * Ts;
  for (int v = 0; v < s.K.height; ++v)
    for (int u = 0; u < s.K.width; ++u) {
      if (!l.valid[v * s.K.width + u]) continue;
      const int x = static_cast<int>(l.rgb.at(u, v, 0));
      const int y = static_cast<int>(l.rgb.at(u, v, 1));
      const double z = 2.0;
      const Eigen::Vector4d p((x + 0.5 - s.K.cx) / s.K.fx * z, (y + 0.5 - s.K.cy) / s.K.fy * z, z, 1.0);
      const Eigen::Vector4d q = M * p;
      EXPECT_EQ(static_cast<int>(std::floor(s.K.fx * q.x() / q.z() + s.K.cx)), u);
      EXPECT_EQ(static_cast<int>(std::floor(s.K.fy * q.y() / q.z() + s.K.cy)), v);
      EXPECT_NEAR(l.depth.at(u, v), q.z(), 1e-12);
    }
  // Every source point that lands in the raster is represented (no z-fighting on a plane).
  std::size_t landed = 0;
  for (int y = 0; y < s.K.height; ++y)
    for (int x = 0; x < s.K.width; ++x) {
      const Eigen::Vector4d q = M * Eigen::Vector4d((x + 0.5 - s.K.cx) / s.K.fx * 2, (y + 0.5 - s.K.cy) / s.K.fy * 2, 2, 1);
      const double u = s.K.fx * q.x() / q.z() + s.K.cx;
      const double v = s.K.fy * q.y() / q.z() + s.K.cy;
      if (u >= 0 && v >= 0 && u < s.K.width && v < s.K.height) ++landed;
    }
  EXPECT_LE(l.valid_count(), landed);
  EXPECT_GE(l.valid_count() + 8, landed * 9 / 10);
}

TEST(Warp, NearestSurfaceWinsZBuffer) {
  Synthetic s;
  for (int y = 0; y < s.K.height; ++y)
    for (int x = 16; x < s.K.width; ++x) s.depth.at(x, y) = 1.0;
  // Sideways motion slides the near half over the far half.
  const Pose dst{Quaternion::identity(), Vec3(0.3, 0, 0)};
  const PseudoLabel l = warp(s.rgb, s.depth, Pose::identity(), dst, s.K);
  std::size_t far_hidden = 0;
  for (int y = 0; y < s.K.height; ++y)
    for (int x = 0; x < 16; ++x) {
      const Vec3 p = backproject(pixel_center(x, y), 2.0, s.K) - dst.translation;
      const Projection pr = project(p, s.K);
      const int u = static_cast<int>(std::floor(pr.u));
      const int v = static_cast<int>(std::floor(pr.v));
      if (u < 0 || v < 0 || u >= s.K.width || v >= s.K.height) continue;
      if (l.depth.at(u, v) < 1.5) ++far_hidden;
    }
  EXPECT_GT(far_hidden, 0u);
}

TEST(Warp, BehindCameraIsMasked) {
  const Synthetic s;
  const Pose turned{Quaternion::from_axis_angle(Vec3::UnitY(), std::numbers::pi), Vec3::Zero()};
  const PseudoLabel l = warp(s.rgb, s.depth, Pose::identity(), turned, s.K);
  EXPECT_EQ(l.valid_count(), 0u);
  for (double d : l.depth.data()) EXPECT_EQ(d, 0.0);
}

TEST(Warp, InvalidSourceDepthIsSkipped) {
  Synthetic s;
  s.depth.at(3, 4) = 0.0;
  s.depth.at(5, 6) = std::numeric_limits<double>::quiet_NaN();
  const PseudoLabel l = warp(s.rgb, s.depth, Pose::identity(), Pose::identity(), s.K);
  EXPECT_EQ(l.valid_count(), s.K.pixel_count() - 2);
  EXPECT_FALSE(l.valid[4 * s.K.width + 3]);
}

TEST(Warp, PhotometricAndDepthConsistencyOnPhantom) {
  const TubePhantomConfig pc = tiny_phantom("curved-tube", 40, 48);
  const Dataset d = generate_phantom(pc);
  for (std::size_t i : {5u, 20u, 33u}) {
    const Frame& a = d.frames[i];
    const Frame& b = d.frames[i + 1];
    const PseudoLabel l = warp(a.rgb, a.depth, a.pose, b.pose, d.intrinsics);
    double rgb_err = 0.0;
    double depth_err = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < pc.height; ++y)
      for (int x = 0; x < pc.width; ++x) {
        if (!l.valid[y * pc.width + x]) continue;
        for (int c = 0; c < 3; ++c) rgb_err += std::abs(l.rgb.at(x, y, c) - b.rgb.at(x, y, c)) / 3.0;
        depth_err += std::abs(l.depth.at(x, y) - b.depth.at(x, y));
        ++n;
      }
    ASSERT_GT(n, l.valid.size() / 2);
    EXPECT_LT(rgb_err / n, 0.05) << "frame " << i;
    EXPECT_LT(depth_err / n, 2.0 * depth_quantization(b.depth)) << "frame " << i;
  }
}

TEST(SpinPool, Has216PosesAndPositiveDepths) {
  const Dataset d = generate_phantom(tiny_phantom("straight-tube", 3, 16));
  const RayPool pool = build_spin_pool(d.frames[1], d.intrinsics);
  EXPECT_EQ(pool.poses().size(), 216u);
  EXPECT_GT(pool.size(), 216u * 100u);
  for (const auto& e : pool.entries()) EXPECT_GT(e.depth, 0.0f);
}

TEST(SpinPool, ZeroAngleGridIsTheFrame) {
  const Dataset d = generate_phantom(tiny_phantom("straight-tube", 3, 16));
  const RayPool pool = build_spin_pool(d.frames[0], d.intrinsics, {0.0});
  ASSERT_EQ(pool.poses().size(), 1u);
  ASSERT_EQ(pool.size(), d.intrinsics.pixel_count());
  for (const auto& e : pool.entries()) {
    EXPECT_EQ(e.depth, static_cast<float>(d.frames[0].depth.at(e.x, e.y)));
    EXPECT_EQ(e.rgb[1], static_cast<float>(d.frames[0].rgb.at(e.x, e.y, 1)));
  }
}

TEST(SpinSampling, CountClampAndDeterminism) {
  const Dataset d = generate_phantom(tiny_phantom("straight-tube", 3, 24));
  const RayPool pool = build_spin_pool(d.frames[1], d.intrinsics);
  Rng r1(9);
  Rng r2(9);
  DensifyStats stats;
  const SupervisionBatch a = sample_spin_rays(pool, 3136, r1, 0.05, 4.0, &stats);
  const SupervisionBatch b = sample_spin_rays(pool, 3136, r2, 0.05, 4.0, &stats);
  EXPECT_EQ(a.size(), 3136u);
  EXPECT_EQ(stats.spin_pool_clamps, 0);
  EXPECT_EQ(a.rgb.storage(), b.rgb.storage());
  EXPECT_EQ(a.depth.storage(), b.depth.storage());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.rays[i].direction, b.rays[i].direction);

  const RayPool small = build_spin_pool(d.frames[1], d.intrinsics, {0.0});
  const SupervisionBatch c = sample_spin_rays(small, 3136, r1, 0.05, 4.0, &stats);
  EXPECT_EQ(c.size(), small.size());
  EXPECT_EQ(stats.spin_pool_clamps, 1);
  EXPECT_THROW(sample_spin_rays(RayPool{}, 3, r1, 0.05, 4.0), std::invalid_argument);
}

TEST(SpinSampling, RayDepthIsAlongTheRay) {
  const Dataset d = generate_phantom(tiny_phantom("straight-tube", 3, 24));
  const TubePhantom phantom(tiny_phantom("straight-tube", 3, 24));
  const RayPool pool = build_spin_pool(d.frames[1], d.intrinsics, {0.0});
  Rng rng(2);
  const SupervisionBatch b = sample_spin_rays(pool, 50, rng, 0.05, 10.0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto t = phantom.intersect(b.rays[i].origin, b.rays[i].direction);
    ASSERT_TRUE(t.has_value());
    EXPECT_NEAR(b.depth[i], *t, 1e-4);
  }
}

TEST(Helix, CountSourcesAndDegenerateCase) {
  const Dataset d = generate_phantom(tiny_phantom("curved-tube", 6, 24));
  const auto labels = build_helix_labels(d.frames[2], d.frames[3], 3, d.intrinsics);
  ASSERT_EQ(labels.size(), 3u);
  EXPECT_EQ(labels[0].source_frame, d.frames[2].id);
  EXPECT_EQ(labels[2].source_frame, d.frames[3].id);
  for (const auto& l : labels) EXPECT_EQ(l.family, PoseFamily::helix);

  const auto same = build_helix_labels(d.frames[2], d.frames[2], 2, d.intrinsics);
  for (const auto& l : same) {
    EXPECT_EQ(l.valid_count(), d.intrinsics.pixel_count());
    for (std::size_t i = 0; i < l.depth.data().size(); ++i)
      EXPECT_NEAR(l.depth.data()[i], d.frames[2].depth.data()[i], 1e-9);
  }
  EXPECT_THROW(build_helix_labels(d.frames[0], d.frames[1], 0, d.intrinsics), std::invalid_argument);
}

TEST(Helix, MidpointDepthOnStraightCorridor) {
  const TubePhantomConfig pc = tiny_phantom("straight-tube", 10, 48);
  const TubePhantom phantom(pc);
  const Dataset d = generate_phantom(pc);
  const auto labels = build_helix_labels(d.frames[4], d.frames[5], 1, d.intrinsics);
  const PseudoLabel& l = labels.at(0);
  const auto& K = d.intrinsics;
  const int x = K.width / 2;
  const int y = K.height / 2;
  ASSERT_TRUE(l.valid[y * K.width + x]);
  const Vec3 bearing = pixel_bearing(pixel_center(x, y), K);
  const auto t = phantom.intersect(l.pose.translation, l.pose.rotation.rotate(bearing));
  ASSERT_TRUE(t.has_value());
  const double expected = *t / ray_length_per_depth(pixel_center(x, y), K);
  EXPECT_NEAR(l.depth.at(x, y), expected, 2.0 * depth_quantization(d.frames[4].depth));
}

TEST(DepthQuantization, LinearRamp) {
  Image ramp(10, 10, 1);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) ramp.at(x, y) = 1.0 + 0.1 * x + 0.3 * y;
  EXPECT_NEAR(depth_quantization(ramp), 0.3, 1e-12);
  EXPECT_THROW(depth_quantization(Image(10, 10, 1)), std::invalid_argument);
}
