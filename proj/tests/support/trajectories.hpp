#pragma once

// Synthetic camera trajectories with known geometry.

#include "tubenerf/segmentation.hpp"

namespace tubenerf::testing {

inline Trajectory straight_trajectory(std::size_t n, double step = 0.1) {
  Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 eye(0, 0, step * static_cast<double>(i));
    t.push_back({i, look_at(eye, eye + Vec3::UnitZ(), -Vec3::UnitY())});
  }
  return t;
}

/// Two straight legs of `leg` frames each, the second turned 90 degrees. The
/// bend apex is frame `leg`, the first frame of the second leg.
inline Trajectory l_trajectory(std::size_t leg = 100, double step = 0.1) {
  Trajectory t;
  for (std::size_t i = 0; i < leg; ++i) {
    const Vec3 eye(0, 0, step * static_cast<double>(i));
    t.push_back({i, look_at(eye, eye + Vec3::UnitZ(), -Vec3::UnitY())});
  }
  const Vec3 corner(0, 0, step * static_cast<double>(leg));
  for (std::size_t i = 0; i < leg; ++i) {
    const Vec3 eye = corner + Vec3(step * static_cast<double>(i), 0, 0);
    t.push_back({leg + i, look_at(eye, eye + Vec3::UnitX(), -Vec3::UnitY())});
  }
  return t;
}

}  // namespace tubenerf::testing
