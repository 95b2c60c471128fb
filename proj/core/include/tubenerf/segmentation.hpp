#pragma once

// Division of a camera trajectory into overlapping blocks at bends.

#include "tubenerf/geometry.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace tubenerf {

struct TrajectoryFrame {
  std::size_t id = 0;
  Pose pose;
};

/// Ordered frames; ids unique and strictly increasing.
using Trajectory = std::vector<TrajectoryFrame>;

void validate_trajectory(const Trajectory& traj);

/// Ranges are half-open positions into the trajectory.
struct Block {
  std::size_t index = 0;
  std::size_t start = 0;  // first frame including the leading margin
  std::size_t end = 0;    // one past the last frame including the trailing margin
  std::size_t core_start = 0;
  std::size_t core_end = 0;
  Vec3 center = Vec3::Zero();

  std::size_t size() const { return end - start; }
  std::size_t core_size() const { return core_end - core_start; }
  std::size_t leading_margin() const { return core_start - start; }
  std::size_t trailing_margin() const { return end - core_end; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
};

struct DivideConfig {
  double angle_threshold_deg = 25.0;
  std::size_t min_block = 20;
  double overlap = 0.30;
  int smoothing_window = 5;

  void validate() const;
};

void to_json(nlohmann::json& j, const DivideConfig& c);
void from_json(const nlohmann::json& j, DivideConfig& c);

struct Division {
  std::vector<Block> blocks;
  /// Positions where a new core range starts (after merging).
  std::vector<std::size_t> cuts;
  /// Angle between the smoothed heading and its direction at the previous raw cut, degrees.
  std::vector<double> cumulative_turn_deg;
  /// Cut positions before short blocks were merged.
  std::vector<std::size_t> raw_cuts;
};

Division divide(const Trajectory& traj, const DivideConfig& config = {});

/// Mean of the camera positions over the block's core range.
Vec3 block_center(const Block& block, const Trajectory& traj);

/// Block manifest: blocks with ranges, frame ids and centers plus diagnostics.
nlohmann::json division_to_json(const Division& d, const Trajectory& traj, const DivideConfig& config);
std::vector<Block> blocks_from_json(const nlohmann::json& manifest);

}  // namespace tubenerf
