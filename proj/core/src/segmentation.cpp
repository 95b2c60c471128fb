#include "tubenerf/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tubenerf {

void validate_trajectory(const Trajectory& traj) {
  if (traj.size() < 2) throw std::invalid_argument("trajectory needs at least 2 frames");
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (traj[i].id <= traj[i - 1].id) throw std::invalid_argument("trajectory ids must be strictly increasing");
  }
}

void DivideConfig::validate() const {
  if (!(angle_threshold_deg > 0.0)) throw std::invalid_argument("divide: angle threshold must be positive");
  if (min_block < 1) throw std::invalid_argument("divide: min_block must be positive");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw std::invalid_argument("divide: overlap must lie in [0, 1]");
  if (smoothing_window < 1) throw std::invalid_argument("divide: smoothing window must be positive");
}

void to_json(nlohmann::json& j, const DivideConfig& c) {
  j = {{"angle_threshold_deg", c.angle_threshold_deg},
       {"min_block", c.min_block},
       {"overlap", c.overlap},
       {"smoothing_window", c.smoothing_window}};
}

void from_json(const nlohmann::json& j, DivideConfig& c) {
  c.angle_threshold_deg = j.value("angle_threshold_deg", c.angle_threshold_deg);
  c.min_block = j.value("min_block", c.min_block);
  c.overlap = j.value("overlap", c.overlap);
  c.smoothing_window = j.value("smoothing_window", c.smoothing_window);
}

Vec3 block_center(const Block& block, const Trajectory& traj) {
  if (block.core_end <= block.core_start || block.core_end > traj.size()) {
    throw std::invalid_argument("block_center: empty or out-of-range core");
  }
  Vec3 sum = Vec3::Zero();
  for (std::size_t i = block.core_start; i < block.core_end; ++i) sum += traj[i].pose.translation;
  return sum / static_cast<double>(block.core_size());
}

namespace {

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

Division divide(const Trajectory& traj, const DivideConfig& config) {
  validate_trajectory(traj);
  config.validate();
  const std::size_t n = traj.size();
  Division out;
  out.cumulative_turn_deg.assign(n, 0.0);

  // Core ranges as [begin, end) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> cores;
  if (n < config.min_block) {
    cores.emplace_back(0, n);
  } else {
    std::vector<Vec3> heading(n);
    const int half = config.smoothing_window / 2;
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 sum = Vec3::Zero();
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - half);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, static_cast<std::ptrdiff_t>(i) + half);
      for (std::ptrdiff_t k = lo; k <= hi; ++k) sum += traj[static_cast<std::size_t>(k)].pose.forward();
      heading[i] = sum.norm() > 1e-12 ? sum.normalized() : traj[i].pose.forward();
    }
    // Turn is measured against the heading at the last cut, so sideways
    // wobble of the camera does not add up along straight stretches.
    const double threshold = config.angle_threshold_deg * std::numbers::pi / 180.0;
    std::size_t begin = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const double turn = angle_between(heading[begin], heading[i]);
      out.cumulative_turn_deg[i] = turn * 180.0 / std::numbers::pi;
      if (turn > threshold) {
        out.raw_cuts.push_back(i);
        cores.emplace_back(begin, i);
        begin = i;
      }
    }
    cores.emplace_back(begin, n);

    // Merge short blocks into their shorter neighbour until all are long enough.
    for (;;) {
      if (cores.size() < 2) break;
      std::size_t victim = cores.size();
      for (std::size_t b = 0; b < cores.size(); ++b) {
        const std::size_t len = cores[b].second - cores[b].first;
        if (len < config.min_block &&
            (victim == cores.size() || len < cores[victim].second - cores[victim].first)) {
          victim = b;
        }
      }
      if (victim == cores.size()) break;
      std::size_t into;
      if (victim == 0) {
        into = 1;
      } else if (victim + 1 == cores.size()) {
        into = victim - 1;
      } else {
        const std::size_t prev = cores[victim - 1].second - cores[victim - 1].first;
        const std::size_t next = cores[victim + 1].second - cores[victim + 1].first;
        into = next < prev ? victim + 1 : victim - 1;
      }
      const std::size_t a = std::min(victim, into);
      cores[a] = {cores[a].first, cores[a + 1].second};
      cores.erase(cores.begin() + static_cast<std::ptrdiff_t>(a) + 1);
    }
  }

  for (std::size_t b = 0; b < cores.size(); ++b) {
    Block blk;
    blk.index = b;
    blk.core_start = blk.start = cores[b].first;
    blk.core_end = blk.end = cores[b].second;
    out.blocks.push_back(blk);
    if (b > 0) out.cuts.push_back(cores[b].first);
  }
  // Each adjacent pair shares m = round(overlap * smaller core) frames: the
  // left block reaches ceil(m/2) frames to the right, the right block floor(m/2) to the left.
  for (std::size_t b = 0; b + 1 < out.blocks.size(); ++b) {
    Block& left = out.blocks[b];
    Block& right = out.blocks[b + 1];
    const auto m = static_cast<std::size_t>(
        std::llround(config.overlap * static_cast<double>(std::min(left.core_size(), right.core_size()))));
    left.end = std::min(right.core_end, left.core_end + (m + 1) / 2);
    right.start = right.core_start - std::min(m / 2, left.core_size());
  }
  for (auto& blk : out.blocks) blk.center = block_center(blk, traj);
  return out;
}

nlohmann::json division_to_json(const Division& d, const Trajectory& traj, const DivideConfig& config) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : d.blocks) {
    std::vector<std::size_t> ids;
    for (std::size_t i = b.start; i < b.end; ++i) ids.push_back(traj[i].id);
    blocks.push_back({{"index", b.index},
                      {"start", b.start},
                      {"end", b.end},
                      {"core_start", b.core_start},
                      {"core_end", b.core_end},
                      {"center", {b.center.x(), b.center.y(), b.center.z()}},
                      {"frame_ids", ids}});
  }
  return {{"blocks", blocks},
          {"cuts", d.cuts},
          {"raw_cuts", d.raw_cuts},
          {"cumulative_turn_deg", d.cumulative_turn_deg},
          {"config", config}};
}

std::vector<Block> blocks_from_json(const nlohmann::json& manifest) {
  std::vector<Block> out;
  for (const auto& j : manifest.at("blocks")) {
    Block b;
    b.index = j.at("index").get<std::size_t>();
    b.start = j.at("start").get<std::size_t>();
    b.end = j.at("end").get<std::size_t>();
    b.core_start = j.at("core_start").get<std::size_t>();
    b.core_end = j.at("core_end").get<std::size_t>();
    const auto c = j.at("center").get<std::vector<double>>();
    if (c.size() != 3) throw std::invalid_argument("block manifest: center needs 3 values");
    b.center = Vec3(c[0], c[1], c[2]);
    if (!(b.start <= b.core_start && b.core_start < b.core_end && b.core_end <= b.end)) {
      throw std::invalid_argument("block manifest: inconsistent ranges for block " + std::to_string(b.index));
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace tubenerf
