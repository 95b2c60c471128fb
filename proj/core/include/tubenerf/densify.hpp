#pragma once

// Pose densification: depth-based forward warping of a captured frame into
// synthesized poses, the spin-grid ray pool and helix pseudo-labels.

#include "tubenerf/dataset.hpp"
#include "tubenerf/geometry.hpp"
#include "tubenerf/image.hpp"
#include "tubenerf/random.hpp"
#include "tubenerf/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace tubenerf {

enum class PoseFamily { original, spin, helix };

const char* family_name(PoseFamily f);

struct PseudoLabel {
  Pose pose;
  Image rgb;    // 3 channels, 0 where invalid
  Image depth;  // z-depth, 0 where invalid
  Mask valid;   // row-major, 1 = valid
  std::size_t source_frame = 0;
  PoseFamily family = PoseFamily::helix;

  std::size_t valid_count() const;
};

/// Forward-splats every source pixel with positive depth into the destination
/// camera (nearest pixel, smallest depth wins).
PseudoLabel warp(const Image& src_rgb, const Image& src_depth, const Pose& src_pose, const Pose& dst_pose,
                 const CameraIntrinsics& K);

/// Rays with targets. Depth targets are distances along the unit ray, the
/// quantity the renderer estimates.
struct SupervisionBatch {
  std::vector<Ray> rays;
  Tensor rgb;    // [N, 3]
  Tensor depth;  // [N, 1]
  Mask valid;    // N entries
  PoseFamily family = PoseFamily::original;

  std::size_t size() const { return rays.size(); }
};

struct DensifyStats {
  /// Spin draws that asked for more rays than the pool held.
  int spin_pool_clamps = 0;
  /// Depth-loss evaluations with no valid pixel.
  int degenerate_depth_batches = 0;
};

/// All valid rays of one frame warped into its spin grid.
class RayPool {
 public:
  struct Entry {
    std::uint16_t pose;
    std::uint16_t x;
    std::uint16_t y;
    std::array<float, 3> rgb;
    float depth;  // z-depth
  };

  RayPool() = default;
  RayPool(std::vector<Pose> poses, CameraIntrinsics K, std::size_t source_frame);

  void add(const Entry& e) { entries_.push_back(e); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Pose>& poses() const { return poses_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const CameraIntrinsics& intrinsics() const { return K_; }
  std::size_t source_frame() const { return source_frame_; }

 private:
  std::vector<Pose> poses_;
  CameraIntrinsics K_;
  std::size_t source_frame_ = 0;
  std::vector<Entry> entries_;
};

/// Default spin angles in degrees.
inline const std::vector<double> kSpinAngles{5.0, 2.5, 1.25};

RayPool build_spin_pool(const Frame& frame, const CameraIntrinsics& K,
                        const std::vector<double>& angles_deg = kSpinAngles);

/// Uniform draw of min(count, pool size) distinct rays.
SupervisionBatch sample_spin_rays(const RayPool& pool, std::size_t count, Rng& rng, double near, double far,
                                  DensifyStats* stats = nullptr);

/// n labels at helix_poses(a, b, n), each warped from the nearer frame by
/// translation distance (ties go to `a`).
std::vector<PseudoLabel> build_helix_labels(const Frame& a, const Frame& b, int n, const CameraIntrinsics& K);

/// Mean per-pixel depth step of a depth map: the average over pixels of the
/// larger absolute forward difference along x and y. Used as the depth
/// resolution of a nearest-pixel warp.
double depth_quantization(const Image& depth);

}  // namespace tubenerf
