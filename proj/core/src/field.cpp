#include "tubenerf/field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tubenerf {

namespace {

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage) + "."; }

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor w = Tensor::matrix(fan_in, fan_out);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.values()) v = uniform(rng, -bound, bound);
  return w;
}

const char* activation_name(ActivationMode m) {
  return m == ActivationMode::paper ? "paper" : "conventional";
}

}  // namespace

std::vector<double> encode(const Vec3& x, int bands, bool include_input) {
  std::vector<double> out;
  out.reserve(3 * ((include_input ? 1 : 0) + 2 * bands));
  if (include_input) {
    out.insert(out.end(), {x.x(), x.y(), x.z()});
  }
  double freq = std::numbers::pi;
  for (int b = 0; b < bands; ++b) {
    for (int c = 0; c < 3; ++c) out.push_back(std::sin(freq * x[c]));
    for (int c = 0; c < 3; ++c) out.push_back(std::cos(freq * x[c]));
    freq *= 2.0;
  }
  return out;
}

Tensor encode_batch(std::span<const Vec3> xs, int bands, bool include_input) {
  const std::size_t len = 3 * ((include_input ? 1 : 0) + 2 * bands);
  Tensor out = Tensor::matrix(xs.size(), len);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto row = encode(xs[i], bands, include_input);
    std::copy(row.begin(), row.end(), out.data() + i * len);
  }
  return out;
}

void to_json(nlohmann::json& j, const FieldConfig& c) {
  j = {{"position_bands", c.encoding.position_bands},
       {"direction_bands", c.encoding.direction_bands},
       {"include_input", c.encoding.include_input},
       {"trunk_layers", c.trunk_layers},
       {"hidden", c.hidden},
       {"color_hidden", c.color_hidden},
       {"visibility_layers", c.visibility_layers},
       {"visibility_hidden", c.visibility_hidden},
       {"activation", activation_name(c.activation)},
       {"density_scale", c.density_scale},
       {"density_bias_init", c.density_bias_init},
       {"freeze_previous_stages", c.freeze_previous_stages},
       {"center", {c.center.x(), c.center.y(), c.center.z()}},
       {"extent", c.extent},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FieldConfig& c) {
  c.encoding.position_bands = j.value("position_bands", c.encoding.position_bands);
  c.encoding.direction_bands = j.value("direction_bands", c.encoding.direction_bands);
  c.encoding.include_input = j.value("include_input", c.encoding.include_input);
  c.trunk_layers = j.value("trunk_layers", c.trunk_layers);
  c.hidden = j.value("hidden", c.hidden);
  c.color_hidden = j.value("color_hidden", c.color_hidden);
  c.visibility_layers = j.value("visibility_layers", c.visibility_layers);
  c.visibility_hidden = j.value("visibility_hidden", c.visibility_hidden);
  if (j.contains("activation")) {
    const auto a = j.at("activation").get<std::string>();
    if (a == "paper") {
      c.activation = ActivationMode::paper;
    } else if (a == "conventional") {
      c.activation = ActivationMode::conventional;
    } else {
      throw std::invalid_argument("unknown activation mode: " + a);
    }
  }
  c.density_scale = j.value("density_scale", c.density_scale);
  c.density_bias_init = j.value("density_bias_init", c.density_bias_init);
  c.freeze_previous_stages = j.value("freeze_previous_stages", c.freeze_previous_stages);
  if (j.contains("center")) {
    const auto v = j.at("center").get<std::vector<double>>();
    if (v.size() != 3) throw std::invalid_argument("field center must have 3 components");
    c.center = Vec3(v[0], v[1], v[2]);
  }
  c.extent = j.value("extent", c.extent);
  c.seed = j.value("seed", c.seed);
}

MultiLevelField::MultiLevelField(FieldConfig config, int initial_stages) : config_(std::move(config)) {
  if (initial_stages < 1) throw std::invalid_argument("MultiLevelField: need at least one stage");
  if (config_.trunk_layers < 1 || config_.hidden < 1 || config_.color_hidden < 1 ||
      config_.visibility_layers < 1 || config_.visibility_hidden < 1) {
    throw std::invalid_argument("MultiLevelField: layer counts and widths must be positive");
  }
  if (!(config_.extent > 0.0) || !(config_.density_scale > 0.0)) {
    throw std::invalid_argument("MultiLevelField: extent and density_scale must be positive");
  }
  Rng rng(config_.seed);
  build_stage(0, rng);
  build_visibility(rng);
  stage_count_ = 1;
  for (int i = 1; i < initial_stages; ++i) add_stage();
}

void MultiLevelField::build_stage(int stage, Rng& rng) {
  const std::string p = stage_prefix(stage);
  std::size_t in = config_.encoding.encoded_length(config_.encoding.position_bands);
  const std::size_t h = static_cast<std::size_t>(config_.hidden);
  for (int l = 0; l < config_.trunk_layers; ++l) {
    params_.add(p + "trunk" + std::to_string(l) + ".weight", glorot(in, h, rng));
    params_.add(p + "trunk" + std::to_string(l) + ".bias", Tensor::matrix(1, h));
    in = h;
  }
  params_.add(p + "density.weight", glorot(h, 1, rng));
  params_.add(p + "density.bias", Tensor::matrix(1, 1, config_.density_bias_init));
  const std::size_t dir_len = config_.encoding.encoded_length(config_.encoding.direction_bands);
  const std::size_t ch = static_cast<std::size_t>(config_.color_hidden);
  params_.add(p + "color0.weight", glorot(h + dir_len, ch, rng));
  params_.add(p + "color0.bias", Tensor::matrix(1, ch));
  params_.add(p + "color1.weight", glorot(ch, 3, rng));
  params_.add(p + "color1.bias", Tensor::matrix(1, 3));
}

void MultiLevelField::build_visibility(Rng& rng) {
  std::size_t in = config_.encoding.encoded_length(config_.encoding.position_bands) +
                   config_.encoding.encoded_length(config_.encoding.direction_bands);
  const std::size_t h = static_cast<std::size_t>(config_.visibility_hidden);
  for (int l = 0; l < config_.visibility_layers; ++l) {
    params_.add("visibility.layer" + std::to_string(l) + ".weight", glorot(in, h, rng));
    params_.add("visibility.layer" + std::to_string(l) + ".bias", Tensor::matrix(1, h));
    in = h;
  }
  params_.add("visibility.out.weight", glorot(h, 1, rng));
  params_.add("visibility.out.bias", Tensor::matrix(1, 1));
}

void MultiLevelField::add_stage() {
  const std::string src = stage_prefix(stage_count_ - 1);
  const std::string dst = stage_prefix(stage_count_);
  std::vector<std::pair<std::string, Tensor>> copies;
  for (const auto& p : params_) {
    if (p.name.rfind(src, 0) == 0) copies.emplace_back(dst + p.name.substr(src.size()), p.value);
  }
  if (config_.freeze_previous_stages) {
    for (auto& p : params_) {
      if (p.name.rfind("stage", 0) == 0) p.trainable = false;
    }
  }
  for (auto& [name, value] : copies) params_.add(name, std::move(value));
  ++stage_count_;
}

Var MultiLevelField::linear(Tape& tape, const std::string& prefix, Var x) {
  Var w = tape.parameter(params_.get(prefix + ".weight"));
  Var b = tape.parameter(params_.get(prefix + ".bias"));
  return ad::linear(x, w, b);
}

Tensor MultiLevelField::encode_positions(std::span<const Vec3> positions) const {
  std::vector<Vec3> normalized(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    normalized[i] = (positions[i] - config_.center) / config_.extent;
  }
  return encode_batch(normalized, config_.encoding.position_bands, config_.encoding.include_input);
}

Tensor MultiLevelField::encode_directions(std::span<const Vec3> directions) const {
  return encode_batch(directions, config_.encoding.direction_bands, config_.encoding.include_input);
}

std::pair<Var, Var> MultiLevelField::stage_logits(Tape& tape, int stage, Var encoded_positions,
                                                  Var encoded_directions) {
  if (stage < 0 || stage >= stage_count_) throw std::out_of_range("stage_logits: stage out of range");
  const std::string p = stage_prefix(stage);
  Var h = encoded_positions;
  for (int l = 0; l < config_.trunk_layers; ++l) {
    h = ad::relu(linear(tape, p + "trunk" + std::to_string(l), h));
  }
  Var sigma = linear(tape, p + "density", h);
  Var c = ad::relu(linear(tape, p + "color0", ad::concat({h, encoded_directions}, 1)));
  Var color = linear(tape, p + "color1", c);
  return {sigma, color};
}

MultiLevelField::Outputs MultiLevelField::fuse(Var density_logit_sum, Var color_logit_sum) const {
  if (config_.activation == ActivationMode::paper) {
    return {ad::sigmoid(density_logit_sum), ad::clamp_max(ad::softplus(color_logit_sum), 1.0)};
  }
  return {ad::softplus(density_logit_sum), ad::sigmoid(color_logit_sum)};
}

MultiLevelField::Outputs MultiLevelField::forward(Tape& tape, std::span<const Vec3> positions,
                                                  std::span<const Vec3> directions, int active_stages) {
  if (active_stages < 1 || active_stages > stage_count_) {
    throw std::out_of_range("MultiLevelField: active stage count " + std::to_string(active_stages) +
                            " outside [1, " + std::to_string(stage_count_) + "]");
  }
  if (positions.size() != directions.size()) {
    throw std::invalid_argument("MultiLevelField: positions/directions size mismatch");
  }
  Var enc_pos = tape.constant(encode_positions(positions));
  Var enc_dir = tape.constant(encode_directions(directions));
  Var sigma_sum;
  Var color_sum;
  for (int s = 0; s < active_stages; ++s) {
    auto [sigma, color] = stage_logits(tape, s, enc_pos, enc_dir);
    sigma_sum = s == 0 ? sigma : ad::add(sigma_sum, sigma);
    color_sum = s == 0 ? color : ad::add(color_sum, color);
  }
  return fuse(sigma_sum, color_sum);
}

Var MultiLevelField::forward_visibility(Tape& tape, std::span<const Vec3> positions,
                                        std::span<const Vec3> directions) {
  Var h = ad::concat({tape.constant(encode_positions(positions)), tape.constant(encode_directions(directions))}, 1);
  for (int l = 0; l < config_.visibility_layers; ++l) {
    h = ad::relu(linear(tape, "visibility.layer" + std::to_string(l), h));
  }
  return ad::sigmoid(linear(tape, "visibility.out", h));
}

FieldSample MultiLevelField::query(const Vec3& x, const Vec3& d, int active_stages) const {
  Tape tape(false);
  auto& self = const_cast<MultiLevelField&>(*this);
  const Vec3 xs[1] = {x};
  const Vec3 ds[1] = {d};
  const Outputs out = self.forward(tape, xs, ds, active_stages);
  FieldSample s;
  s.density = out.density.value()[0];
  for (int c = 0; c < 3; ++c) s.rgb[c] = out.color.value()[c];
  return s;
}

double MultiLevelField::visibility(const Vec3& x, const Vec3& d) const {
  Tape tape(false);
  auto& self = const_cast<MultiLevelField&>(*this);
  const Vec3 xs[1] = {x};
  const Vec3 ds[1] = {d};
  return self.forward_visibility(tape, xs, ds).value()[0];
}

Checkpoint MultiLevelField::to_checkpoint() const {
  Checkpoint ck;
  ck.header["kind"] = "multi_level_field";
  ck.header["stage_count"] = stage_count_;
  ck.header["field_config"] = config_;
  nlohmann::json frozen = nlohmann::json::array();
  for (const auto& p : params_) {
    if (!p.trainable) frozen.push_back(p.name);
  }
  ck.header["frozen"] = frozen;
  append_parameters(ck, params_);
  return ck;
}

MultiLevelField MultiLevelField::from_checkpoint(const Checkpoint& checkpoint) {
  const auto config = checkpoint.header.at("field_config").get<FieldConfig>();
  const int stages = checkpoint.header.at("stage_count").get<int>();
  FieldConfig build = config;
  build.freeze_previous_stages = false;
  MultiLevelField field(build, stages);
  field.config_ = config;
  load_parameters(checkpoint, field.params_);
  if (checkpoint.header.contains("frozen")) {
    for (const auto& name : checkpoint.header.at("frozen")) field.params_.get(name.get<std::string>()).trainable = false;
  }
  return field;
}

std::size_t StageSchedule::stride(int stage) const {
  if (stage < 1 || stage > stage_count) throw std::out_of_range("StageSchedule: stage out of range");
  return std::size_t{1} << (stage_count - stage);
}

std::vector<std::size_t> schedule_frames(const StageSchedule& schedule, int stage) {
  const std::size_t step = schedule.stride(stage);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < schedule.total_frames; i += step) out.push_back(i);
  return out;
}

}  // namespace tubenerf
