#pragma once

// Multi-stage radiance field. Each stage is an MLP producing raw colour and
// density logits; stage outputs are fused by summing logits and applying a
// single activation (sigmoid for density, softplus for colour in the default
// mode). A small visibility head predicts per-point transmittance.

#include "tubenerf/autodiff.hpp"
#include "tubenerf/checkpoint.hpp"
#include "tubenerf/geometry.hpp"
#include "tubenerf/random.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace tubenerf {

struct EncodingConfig {
  int position_bands = 10;
  int direction_bands = 4;
  bool include_input = true;

  std::size_t encoded_length(int bands) const { return 3 * ((include_input ? 1 : 0) + 2 * bands); }
};

/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)].
std::vector<double> encode(const Vec3& x, int bands, bool include_input = true);
/// Row-per-point encoding, [N, encoded_length].
Tensor encode_batch(std::span<const Vec3> xs, int bands, bool include_input = true);

enum class ActivationMode {
  /// density = sigmoid(sum), colour = min(softplus(sum), 1)
  paper,
  /// density = softplus(sum), colour = sigmoid(sum)
  conventional,
};

struct FieldConfig {
  EncodingConfig encoding;
  int trunk_layers = 4;
  int hidden = 128;
  int color_hidden = 64;
  int visibility_layers = 2;
  int visibility_hidden = 64;
  ActivationMode activation = ActivationMode::paper;
  /// World-space density is density_scale * density; density itself lies in (0, 1).
  double density_scale = 40.0;
  /// Initial bias of every density head.
  double density_bias_init = -2.0;
  /// When set, parameters of earlier stages stop training once a stage is added.
  bool freeze_previous_stages = false;
  /// Positions are mapped to (x - center) / extent before encoding.
  Vec3 center = Vec3::Zero();
  double extent = 1.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const FieldConfig& c);
void from_json(const nlohmann::json& j, FieldConfig& c);

struct FieldSample {
  std::array<double, 3> rgb{};
  double density = 0.0;
};

class MultiLevelField {
 public:
  struct Outputs {
    Var density;  // [N, 1], in (0, 1)
    Var color;    // [N, 3], in [0, 1]
  };

  explicit MultiLevelField(FieldConfig config, int initial_stages = 1);

  const FieldConfig& config() const { return config_; }
  int stage_count() const { return stage_count_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Appends a stage whose parameters are copies of the current last stage.
  void add_stage();

  FieldSample query(const Vec3& x, const Vec3& d, int active_stages) const;
  double visibility(const Vec3& x, const Vec3& d) const;

  Outputs forward(Tape& tape, std::span<const Vec3> positions, std::span<const Vec3> directions,
                  int active_stages);
  /// Fusion of pre-computed logit sums; exposed for tests of the activation rule.
  Outputs fuse(Var density_logit_sum, Var color_logit_sum) const;
  /// Raw logits of one stage (0-based) for encoded inputs.
  std::pair<Var, Var> stage_logits(Tape& tape, int stage, Var encoded_positions, Var encoded_directions);
  Var forward_visibility(Tape& tape, std::span<const Vec3> positions, std::span<const Vec3> directions);

  Tensor encode_positions(std::span<const Vec3> positions) const;
  Tensor encode_directions(std::span<const Vec3> directions) const;

  Checkpoint to_checkpoint() const;
  static MultiLevelField from_checkpoint(const Checkpoint& checkpoint);

 private:
  void build_stage(int stage, Rng& rng);
  void build_visibility(Rng& rng);
  Var linear(Tape& tape, const std::string& prefix, Var x);

  FieldConfig config_;
  ParameterSet params_;
  int stage_count_ = 0;
};

/// Frame subsampling per stage: stride 2^(S - i) for 1-based stage i.
struct StageSchedule {
  std::size_t total_frames = 0;
  int stage_count = 3;

  std::size_t stride(int stage) const;
};

/// Positions (0-based, into the block's training frames) used by `stage` (1-based).
std::vector<std::size_t> schedule_frames(const StageSchedule& schedule, int stage);

}  // namespace tubenerf
