#pragma once

// Per-block staged training and the whole-trajectory pipeline around it.

#include "tubenerf/dataset.hpp"
#include "tubenerf/densify.hpp"
#include "tubenerf/features.hpp"
#include "tubenerf/field.hpp"
#include "tubenerf/integration.hpp"
#include "tubenerf/losses.hpp"
#include "tubenerf/metrics.hpp"
#include "tubenerf/optim.hpp"
#include "tubenerf/renderer.hpp"
#include "tubenerf/segmentation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tubenerf {

struct TrainConfig {
  int stages = 3;
  int iterations_per_stage = 5000;
  /// 1: original views only; 2: + helix poses; 3: + spin grid.
  int views = 3;

  std::size_t rays_per_batch = 1024;
  int patch_size = 8;
  int patches_per_batch = 1;
  std::size_t spin_rays = 3136;
  std::vector<double> spin_angles{5.0, 2.5, 1.25};
  /// Iterations between rebuilds of the spin ray pool from a new random frame.
  int spin_pool_refresh = 50;
  std::size_t helix_rays = 256;
  int helix_poses = 3;
  /// Side of the square window rendered for the feature loss (0 disables it).
  int vit_window = 16;
  ExtractorSpec extractor;
  /// Sample points per iteration supervising the visibility head.
  std::size_t trans_samples = 1024;
  TransTarget trans_target = TransTarget::transmittance;

  LossWeights weights;
  double smooth_l1_beta = 1.0;
  double learning_rate = 5e-4;
  /// Learning rate decays exponentially to learning_rate * lr_final_ratio over all iterations.
  double lr_final_ratio = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  FieldConfig field;
  RenderConfig render;
  /// Derive render.far from the depth maps and field center/extent from the cameras.
  bool auto_bounds = true;
  SplitSpec split;
  DivideConfig divide;
  /// When false the whole trajectory is one block.
  bool divide_blocks = true;
  IntegrationConfig integration;
  int jobs = 1;

  void validate() const;
  bool helix_enabled() const { return views >= 2; }
  bool spin_enabled() const { return views >= 3; }
  long total_iterations() const { return static_cast<long>(stages) * iterations_per_stage; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
/// Applies a JSON object of overrides on top of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Loss terms of one iteration, split by pose family.
struct LossTerms {
  double ori_patch = 0.0;
  double ori_rand = 0.0;
  double depth_helix = 0.0;
  double depth_spin = 0.0;
  double vit_original = 0.0;
  double vit_helix = 0.0;
  double vit_spin = 0.0;
  double trans = 0.0;

  LossComponents components() const;
};

struct IterationRecord {
  long iteration = 0;  // global, 1-based
  int stage = 1;
  LossTerms terms;
  LossComponents components;
  double total = 0.0;
};

struct TrainState {
  int stage = 1;
  long stage_iteration = 0;
  long iteration = 0;
  std::vector<double> loss_history;
  std::optional<std::size_t> spin_pool_frame;  // position into the block's training frames
  long spin_pool_built_at = 0;
};

/// Trains one block's field on `frames` (positions into `data.frames`).
class BlockTrainer {
 public:
  BlockTrainer(const Dataset& data, std::vector<std::size_t> frames, TrainConfig config);

  /// Restores a state written by save_state.
  static BlockTrainer resume(const Dataset& data, std::vector<std::size_t> frames, const Checkpoint& state);

  bool done() const;
  /// One optimizer iteration (adding a stage first when the current one is complete).
  IterationRecord step();

  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  const MultiLevelField& field() const { return *field_; }
  MultiLevelField& field() { return *field_; }
  const DensifyStats& stats() const { return stats_; }
  /// Training frame positions (into data.frames) used in `stage`.
  std::vector<std::size_t> stage_frames(int stage) const;

  Checkpoint save_state() const;

 private:
  struct Window {
    std::vector<Ray> rays;
    Tensor target_features;
  };

  void begin_stage_if_needed();
  void ensure_spin_pool(const std::vector<std::size_t>& frames);
  Ray pixel_ray(const Pose& pose, int x, int y) const;
  std::optional<Window> feature_window(const Frame& source, const Pose& render_pose);

  const Dataset& data_;
  std::vector<std::size_t> frames_;
  TrainConfig config_;
  std::unique_ptr<MultiLevelField> field_;
  AdamState adam_;
  Rng rng_;
  TrainState state_;
  DensifyStats stats_;
  FeatureExtractor extractor_;
  RayPool pool_;
};

/// Fills render.far and field center/extent from the data when auto_bounds is set.
TrainConfig resolve_bounds(const TrainConfig& config, const Dataset& data, const std::vector<std::size_t>& frames);

struct BlockResult {
  std::size_t block = 0;
  std::filesystem::path checkpoint;
  std::vector<std::size_t> frames;
  std::vector<IterationRecord> history;
  bool ok = true;
  std::string error;
};

using ProgressFn = std::function<void(std::size_t block, const IterationRecord&)>;

/// Trains a block and writes stage checkpoints, final.ckpt, train_state.ckpt and losses.csv into `out_dir`.
BlockResult train_block(const Dataset& data, const std::vector<std::size_t>& frames, const TrainConfig& config,
                        const std::filesystem::path& out_dir, std::size_t block_index = 0,
                        const ProgressFn& progress = {});

/// Continues an interrupted run from out_dir/train_state.ckpt.
BlockResult resume_block(const Dataset& data, const std::vector<std::size_t>& frames,
                         const std::filesystem::path& out_dir, std::size_t block_index = 0,
                         const ProgressFn& progress = {});

struct TrainAllResult {
  nlohmann::json manifest;
  std::vector<BlockResult> blocks;
  bool ok() const;
};

/// Split, divide, train every block, write manifest.json into `out_dir`.
TrainAllResult train_all(const Dataset& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                         const ProgressFn& progress = {});

Trajectory trajectory_of(const Dataset& data);

/// A trained multi-block model loaded from a manifest.
class TrainedModel {
 public:
  static TrainedModel load(const std::filesystem::path& manifest_path);

  RenderedImage render(const Pose& pose, const CameraIntrinsics& K, BlockSelection* selection = nullptr) const;

  const RenderConfig& render_config() const { return render_; }
  const IntegrationConfig& integration() const { return integration_; }
  std::size_t block_count() const { return fields_.size(); }
  const MultiLevelField& field(std::size_t i) const { return *fields_[i]; }
  const nlohmann::json& manifest() const { return manifest_; }
  void set_jobs(int jobs);

 private:
  void rebuild_models();

  nlohmann::json manifest_;
  std::vector<std::unique_ptr<MultiLevelField>> fields_;
  std::vector<Vec3> centers_;
  std::vector<BlockModel> models_;
  RenderConfig render_;
  std::vector<RenderConfig> block_render_;
  IntegrationConfig integration_;
  int jobs_ = 1;
};

/// Renders `frames` (positions into data.frames) and scores them against ground truth.
EvalReport evaluate(const TrainedModel& model, const Dataset& data, const std::vector<std::size_t>& frames,
                    const nlohmann::json& config_for_hash = nullptr);

}  // namespace tubenerf
