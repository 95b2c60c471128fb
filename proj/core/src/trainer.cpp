#include "tubenerf/trainer.hpp"

#include "tubenerf/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tubenerf {

namespace fs = std::filesystem;

// --- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("train: stages must be >= 1");
  if (iterations_per_stage < 0) throw std::invalid_argument("train: iterations_per_stage must be >= 0");
  if (views < 1 || views > 3) throw std::invalid_argument("train: views must be 1, 2 or 3");
  if (rays_per_batch < 1) throw std::invalid_argument("train: rays_per_batch must be positive");
  if (patch_size < 1 || patches_per_batch < 0) throw std::invalid_argument("train: bad patch settings");
  if (spin_enabled() && (spin_rays < 1 || spin_angles.empty() || spin_pool_refresh < 1)) {
    throw std::invalid_argument("train: bad spin settings");
  }
  if (helix_enabled() && (helix_rays < 1 || helix_poses < 1)) throw std::invalid_argument("train: bad helix settings");
  if (vit_window < 0) throw std::invalid_argument("train: vit_window must be >= 0");
  if (vit_window > 0 && vit_window < extractor.stride) {
    throw std::invalid_argument("train: vit_window must be at least the extractor stride");
  }
  if (!(learning_rate > 0.0) || !(lr_final_ratio > 0.0)) throw std::invalid_argument("train: bad learning rate");
  if (!(smooth_l1_beta > 0.0)) throw std::invalid_argument("train: smooth_l1_beta must be positive");
  if (jobs < 1) throw std::invalid_argument("train: jobs must be >= 1");
  weights.validate();
  render.validate();
  split.validate();
  divide.validate();
  integration.validate();
}

namespace {

const char* trans_target_name(TransTarget t) { return t == TransTarget::alpha ? "alpha" : "transmittance"; }

nlohmann::json extractor_json(const ExtractorSpec& e) {
  return {{"kind", e.kind == ExtractorKind::external_precomputed ? "external_precomputed" : "builtin_random_conv"},
          {"seed", e.seed},
          {"channels", e.channels},
          {"stride", e.stride},
          {"external_dir", e.external_dir.string()}};
}

void extractor_from_json(const nlohmann::json& j, ExtractorSpec& e) {
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "builtin_random_conv") {
      e.kind = ExtractorKind::builtin_random_conv;
    } else if (k == "external_precomputed") {
      e.kind = ExtractorKind::external_precomputed;
    } else {
      throw std::invalid_argument("unknown extractor kind: " + k);
    }
  }
  e.seed = j.value("seed", e.seed);
  e.channels = j.value("channels", e.channels);
  e.stride = j.value("stride", e.stride);
  if (j.contains("external_dir")) e.external_dir = j.at("external_dir").get<std::string>();
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stages", c.stages},
       {"iterations_per_stage", c.iterations_per_stage},
       {"views", c.views},
       {"rays_per_batch", c.rays_per_batch},
       {"patch_size", c.patch_size},
       {"patches_per_batch", c.patches_per_batch},
       {"spin_rays", c.spin_rays},
       {"spin_angles", c.spin_angles},
       {"spin_pool_refresh", c.spin_pool_refresh},
       {"helix_rays", c.helix_rays},
       {"helix_poses", c.helix_poses},
       {"vit_window", c.vit_window},
       {"extractor", extractor_json(c.extractor)},
       {"trans_samples", c.trans_samples},
       {"trans_target", trans_target_name(c.trans_target)},
       {"weights", c.weights},
       {"smooth_l1_beta", c.smooth_l1_beta},
       {"learning_rate", c.learning_rate},
       {"lr_final_ratio", c.lr_final_ratio},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed},
       {"field", c.field},
       {"render", c.render},
       {"auto_bounds", c.auto_bounds},
       {"split", c.split},
       {"divide", c.divide},
       {"divide_blocks", c.divide_blocks},
       {"integration", c.integration}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) { c = train_config_from_json(j, c); }

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  static const char* known[] = {"stages",        "iterations_per_stage", "views",          "rays_per_batch",
                                "patch_size",    "patches_per_batch",    "spin_rays",      "spin_angles",
                                "spin_pool_refresh", "helix_rays",       "helix_poses",    "vit_window",
                                "extractor",     "trans_samples",        "trans_target",   "weights",
                                "smooth_l1_beta", "learning_rate",       "lr_final_ratio", "adam_beta1",
                                "adam_beta2",    "adam_eps",             "seed",           "field",
                                "render",        "auto_bounds",          "split",          "divide",
                                "divide_blocks", "integration",          "jobs"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw std::invalid_argument("unknown train config key: " + key);
    }
  }
  c.stages = j.value("stages", c.stages);
  c.iterations_per_stage = j.value("iterations_per_stage", c.iterations_per_stage);
  c.views = j.value("views", c.views);
  c.rays_per_batch = j.value("rays_per_batch", c.rays_per_batch);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.patches_per_batch = j.value("patches_per_batch", c.patches_per_batch);
  c.spin_rays = j.value("spin_rays", c.spin_rays);
  c.spin_angles = j.value("spin_angles", c.spin_angles);
  c.spin_pool_refresh = j.value("spin_pool_refresh", c.spin_pool_refresh);
  c.helix_rays = j.value("helix_rays", c.helix_rays);
  c.helix_poses = j.value("helix_poses", c.helix_poses);
  c.vit_window = j.value("vit_window", c.vit_window);
  if (j.contains("extractor")) extractor_from_json(j.at("extractor"), c.extractor);
  c.trans_samples = j.value("trans_samples", c.trans_samples);
  if (j.contains("trans_target")) {
    const auto t = j.at("trans_target").get<std::string>();
    if (t == "transmittance") {
      c.trans_target = TransTarget::transmittance;
    } else if (t == "alpha") {
      c.trans_target = TransTarget::alpha;
    } else {
      throw std::invalid_argument("unknown trans_target: " + t);
    }
  }
  if (j.contains("weights")) from_json(j.at("weights"), c.weights);
  c.smooth_l1_beta = j.value("smooth_l1_beta", c.smooth_l1_beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_final_ratio = j.value("lr_final_ratio", c.lr_final_ratio);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("field")) from_json(j.at("field"), c.field);
  if (j.contains("render")) from_json(j.at("render"), c.render);
  c.auto_bounds = j.value("auto_bounds", c.auto_bounds);
  if (j.contains("split")) from_json(j.at("split"), c.split);
  if (j.contains("divide")) from_json(j.at("divide"), c.divide);
  c.divide_blocks = j.value("divide_blocks", c.divide_blocks);
  if (j.contains("integration")) from_json(j.at("integration"), c.integration);
  c.jobs = j.value("jobs", c.jobs);
  return c;
}

LossComponents LossTerms::components() const {
  LossComponents c;
  c.depth = depth_helix + depth_spin;
  c.ori = ori_patch + ori_rand;
  c.vit = vit_original + vit_helix + vit_spin;
  c.trans = trans;
  return c;
}

TrainConfig resolve_bounds(const TrainConfig& config, const Dataset& data, const std::vector<std::size_t>& frames) {
  TrainConfig c = config;
  if (!c.auto_bounds) return c;
  if (frames.empty()) throw std::invalid_argument("resolve_bounds: no frames");
  double far = 0.0;
  Vec3 center = Vec3::Zero();
  for (const auto f : frames) {
    const Frame& fr = data.frames.at(f);
    center += fr.pose.translation;
    for (int y = 0; y < fr.depth.height(); ++y) {
      for (int x = 0; x < fr.depth.width(); ++x) {
        far = std::max(far, fr.depth.at(x, y) * ray_length_per_depth(pixel_center(x, y), data.intrinsics));
      }
    }
  }
  center /= static_cast<double>(frames.size());
  double spread = 0.0;
  for (const auto f : frames) spread = std::max(spread, (data.frames[f].pose.translation - center).norm());
  c.render.far = std::max(1.05 * far, c.render.near * 2.0);
  c.field.center = center;
  c.field.extent = spread + c.render.far;
  return c;
}

// --- block trainer -----------------------------------------------------------

BlockTrainer::BlockTrainer(const Dataset& data, std::vector<std::size_t> frames, TrainConfig config)
    : data_(data),
      frames_(std::move(frames)),
      config_(std::move(config)),
      field_(std::make_unique<MultiLevelField>(config_.field, 1)),
      rng_(config_.seed),
      extractor_(config_.extractor) {
  config_.validate();
  if (frames_.empty()) throw std::invalid_argument("BlockTrainer: no training frames");
  for (const auto f : frames_) {
    if (f >= data_.frames.size()) throw std::out_of_range("BlockTrainer: frame position out of range");
  }
  adam_.learning_rate = config_.learning_rate;
  adam_.beta1 = config_.adam_beta1;
  adam_.beta2 = config_.adam_beta2;
  adam_.eps = config_.adam_eps;
}

std::vector<std::size_t> BlockTrainer::stage_frames(int stage) const {
  const auto positions = schedule_frames(StageSchedule{frames_.size(), config_.stages}, stage);
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (const auto p : positions) out.push_back(frames_[p]);
  return out;
}

bool BlockTrainer::done() const {
  if (config_.iterations_per_stage == 0) return true;
  return state_.stage >= config_.stages && state_.stage_iteration >= config_.iterations_per_stage;
}

void BlockTrainer::begin_stage_if_needed() {
  while (state_.stage < config_.stages && state_.stage_iteration >= config_.iterations_per_stage) {
    field_->add_stage();
    ++state_.stage;
    state_.stage_iteration = 0;
  }
}

Ray BlockTrainer::pixel_ray(const Pose& pose, int x, int y) const {
  Ray r;
  r.origin = pose.translation;
  r.direction = pose.rotation.rotate(pixel_bearing(pixel_center(x, y), data_.intrinsics));
  r.near = config_.render.near;
  r.far = config_.render.far;
  return r;
}

void BlockTrainer::ensure_spin_pool(const std::vector<std::size_t>& frames) {
  const bool stale = !state_.spin_pool_frame || state_.iteration - state_.spin_pool_built_at >= config_.spin_pool_refresh;
  if (stale) {
    state_.spin_pool_frame = frames[uniform_index(rng_, frames.size())];
    state_.spin_pool_built_at = state_.iteration;
  } else if (!pool_.empty()) {
    return;
  }
  pool_ = build_spin_pool(data_.frames[*state_.spin_pool_frame], data_.intrinsics, config_.spin_angles);
}

std::optional<BlockTrainer::Window> BlockTrainer::feature_window(const Frame& source, const Pose& render_pose) {
  const auto& K = data_.intrinsics;
  const int P = config_.vit_window;
  if (P <= 0 || P > K.width || P > K.height) return std::nullopt;
  const int x0 = static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(K.width - P + 1)));
  const int y0 = static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(K.height - P + 1)));
  int rx = x0;
  int ry = y0;
  // Align the rendered window with where the source window's center lands.
  const int cx = x0 + P / 2;
  const int cy = y0 + P / 2;
  const double d = source.depth.at(cx, cy);
  if (d > 0.0) {
    const Vec3 world = source.pose.apply(backproject(pixel_center(cx, cy), d, K));
    const Projection proj = project(inverse(render_pose).apply(world), K);
    if (proj.in_frustum) {
      rx = std::clamp(static_cast<int>(std::floor(proj.u - P / 2.0)), 0, K.width - P);
      ry = std::clamp(static_cast<int>(std::floor(proj.v - P / 2.0)), 0, K.height - P);
    }
  }
  Window w;
  for (int y = ry; y < ry + P; ++y) {
    for (int x = rx; x < rx + P; ++x) w.rays.push_back(pixel_ray(render_pose, x, y));
  }
  w.target_features = extractor_.extract(source.rgb.crop(x0, y0, P, P), frame_name(source.id)).tensor();
  return w;
}

IterationRecord BlockTrainer::step() {
  if (done()) throw std::logic_error("BlockTrainer::step: training already finished");
  begin_stage_if_needed();
  const int stage = state_.stage;
  const auto frames = stage_frames(stage);
  const auto& K = data_.intrinsics;
  const auto W = static_cast<std::uint64_t>(K.width);
  const auto H = static_cast<std::uint64_t>(K.height);

  std::vector<Ray> rays;
  auto depth_target = [&](const Frame& f, int x, int y) {
    return f.depth.at(x, y) * ray_length_per_depth(pixel_center(x, y), K);
  };

  // Original rays: random pixels, then patches.
  const std::size_t R = config_.rays_per_batch;
  Tensor rand_rgb = Tensor::matrix(R, 3);
  Tensor rand_depth = Tensor::matrix(R, 1);
  for (std::size_t i = 0; i < R; ++i) {
    const Frame& f = data_.frames[frames[uniform_index(rng_, frames.size())]];
    const int x = static_cast<int>(uniform_index(rng_, W));
    const int y = static_cast<int>(uniform_index(rng_, H));
    rays.push_back(pixel_ray(f.pose, x, y));
    for (int ch = 0; ch < 3; ++ch) rand_rgb[i * 3 + ch] = f.rgb.at(x, y, ch);
    rand_depth[i] = depth_target(f, x, y);
  }
  const int P = std::min({config_.patch_size, K.width, K.height});
  const std::size_t patch_rays = static_cast<std::size_t>(config_.patches_per_batch) * P * P;
  Tensor patch_rgb = Tensor::matrix(std::max<std::size_t>(patch_rays, 1), 3);
  Tensor patch_depth = Tensor::matrix(std::max<std::size_t>(patch_rays, 1), 1);
  for (int p = 0, k = 0; p < config_.patches_per_batch; ++p) {
    const Frame& f = data_.frames[frames[uniform_index(rng_, frames.size())]];
    const int x0 = static_cast<int>(uniform_index(rng_, W - P + 1));
    const int y0 = static_cast<int>(uniform_index(rng_, H - P + 1));
    for (int y = y0; y < y0 + P; ++y) {
      for (int x = x0; x < x0 + P; ++x, ++k) {
        rays.push_back(pixel_ray(f.pose, x, y));
        for (int ch = 0; ch < 3; ++ch) patch_rgb[static_cast<std::size_t>(k) * 3 + ch] = f.rgb.at(x, y, ch);
        patch_depth[static_cast<std::size_t>(k)] = depth_target(f, x, y);
      }
    }
  }

  // Helix pseudo-label rays.
  std::size_t helix_begin = rays.size();
  Tensor helix_depth;
  std::optional<Pose> helix_pose;
  const Frame* helix_source = nullptr;
  if (config_.helix_enabled() && frames.size() >= 2) {
    const std::size_t a = uniform_index(rng_, frames.size() - 1);
    const int k = static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(config_.helix_poses)));
    const Frame& fa = data_.frames[frames[a]];
    const Frame& fb = data_.frames[frames[a + 1]];
    const Pose pose = helix_poses(fa.pose, fb.pose, config_.helix_poses)[static_cast<std::size_t>(k)];
    const bool use_b = translation_distance(pose, fb.pose) < translation_distance(pose, fa.pose);
    const Frame& src = use_b ? fb : fa;
    const PseudoLabel label = warp(src.rgb, src.depth, src.pose, pose, K);
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < label.valid.size(); ++i) {
      if (label.valid[i]) valid.push_back(i);
    }
    if (valid.empty()) {
      ++stats_.degenerate_depth_batches;
    } else {
      const auto picks = sample_without_replacement(rng_, valid.size(), config_.helix_rays);
      helix_depth = Tensor::matrix(picks.size(), 1);
      for (std::size_t i = 0; i < picks.size(); ++i) {
        const std::size_t pix = valid[picks[i]];
        const int x = static_cast<int>(pix % W);
        const int y = static_cast<int>(pix / W);
        rays.push_back(pixel_ray(pose, x, y));
        helix_depth[i] = label.depth.at(x, y) * ray_length_per_depth(pixel_center(x, y), K);
      }
      helix_pose = pose;
      helix_source = &src;
    }
  }
  const std::size_t helix_end = rays.size();

  // Spin-grid rays.
  const std::size_t spin_begin = rays.size();
  SupervisionBatch spin;
  if (config_.spin_enabled()) {
    ensure_spin_pool(frames);
    spin = sample_spin_rays(pool_, config_.spin_rays, rng_, config_.render.near, config_.render.far, &stats_);
    rays.insert(rays.end(), spin.rays.begin(), spin.rays.end());
  }
  const std::size_t spin_end = rays.size();

  // Feature windows, one per enabled family.
  struct PlacedWindow {
    Window window;
    std::size_t begin;
    double* term;
  };
  LossTerms terms;
  std::vector<PlacedWindow> windows;
  auto place = [&](std::optional<Window> w, double* term) {
    if (!w) return;
    const std::size_t begin = rays.size();
    rays.insert(rays.end(), w->rays.begin(), w->rays.end());
    windows.push_back({std::move(*w), begin, term});
  };
  if (config_.vit_window > 0 && config_.weights.vit > 0.0) {
    const Frame& f = data_.frames[frames[uniform_index(rng_, frames.size())]];
    place(feature_window(f, f.pose), &terms.vit_original);
    if (helix_pose) place(feature_window(*helix_source, *helix_pose), &terms.vit_helix);
    if (config_.spin_enabled()) {
      const Pose& sp = pool_.poses()[uniform_index(rng_, pool_.poses().size())];
      place(feature_window(data_.frames[*state_.spin_pool_frame], sp), &terms.vit_spin);
    }
  }

  // One differentiable render for everything.
  Tape tape;
  Rng* jitter = config_.render.stratified_jitter ? &rng_ : nullptr;
  const RayBatchRender rr = render_rays(tape, *field_, rays, config_.render, stage, jitter);
  const Var& rgb = rr.composite.rgb;
  const Var& depth = rr.composite.depth;
  auto rows = [](Var v, std::size_t b, std::size_t e) { return ad::slice(v, 0, b, e); };

  const OriTerms ori =
      ori_loss(patch_rays ? rows(rgb, R, R + patch_rays) : Var(), patch_rgb,
               patch_rays ? rows(depth, R, R + patch_rays) : Var(), patch_depth, rows(rgb, 0, R), rand_rgb,
               rows(depth, 0, R), rand_depth);

  Var helix_pred = helix_end > helix_begin ? rows(depth, helix_begin, helix_end) : Var();
  Var spin_pred = spin_end > spin_begin ? rows(depth, spin_begin, spin_end) : Var();
  const Mask helix_valid(helix_end - helix_begin, 1);
  const Mask spin_valid(spin_end - spin_begin, 1);
  Var depth_h = masked_smooth_l1(tape, helix_pred, helix_depth, helix_valid, config_.smooth_l1_beta,
                                 &stats_.degenerate_depth_batches);
  Var depth_s = masked_smooth_l1(tape, spin_pred, spin.depth, spin_valid, config_.smooth_l1_beta,
                                 &stats_.degenerate_depth_batches);
  Var depth_total = ad::add(depth_h, depth_s);

  Var vit_total = tape.constant(Tensor::scalar(0.0));
  std::vector<std::pair<Var, double*>> vit_parts;
  for (auto& w : windows) {
    const int side = config_.vit_window;
    Var features = extractor_.extract(tape, rows(rgb, w.begin, w.begin + w.window.rays.size()), side, side);
    Var term = vit_loss(features, w.window.target_features);
    vit_parts.emplace_back(term, w.term);
    vit_total = ad::add(vit_total, term);
  }

  Var trans_term = tape.constant(Tensor::scalar(0.0));
  if (config_.trans_samples > 0 && config_.weights.trans > 0.0) {
    const std::size_t S = static_cast<std::size_t>(config_.render.samples_per_ray);
    const auto picks = sample_without_replacement(rng_, R * S, config_.trans_samples);
    const Tensor all_targets = batch_transmittance_targets(rr, config_.trans_target);
    std::vector<Vec3> pos;
    std::vector<Vec3> dirs;
    Tensor targets = Tensor::matrix(picks.size(), 1);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      pos.push_back(rr.positions[picks[i]]);
      dirs.push_back(rr.directions[picks[i]]);
      targets[i] = all_targets[picks[i]];
    }
    trans_term = trans_loss(field_->forward_visibility(tape, pos, dirs), targets);
  }

  Var total = total_loss(tape, depth_total, ori.total, vit_total, trans_term, config_.weights);

  terms.ori_patch = ori.patch.item();
  terms.ori_rand = ori.rand.item();
  terms.depth_helix = depth_h.item();
  terms.depth_spin = depth_s.item();
  for (const auto& [v, slot] : vit_parts) *slot = v.item();
  terms.trans = trans_term.item();

  tape.backward(total);
  const double progress =
      config_.total_iterations() > 0 ? static_cast<double>(state_.iteration) / config_.total_iterations() : 0.0;
  adam_.learning_rate = config_.learning_rate * std::pow(config_.lr_final_ratio, progress);
  adam_step(field_->parameters(), adam_);

  ++state_.iteration;
  ++state_.stage_iteration;
  IterationRecord rec;
  rec.iteration = state_.iteration;
  rec.stage = stage;
  rec.terms = terms;
  rec.components = terms.components();
  rec.total = total.item();
  state_.loss_history.push_back(rec.total);
  return rec;
}

Checkpoint BlockTrainer::save_state() const {
  Checkpoint ck;
  const Checkpoint field_ck = field_->to_checkpoint();
  ck.header["kind"] = "train_state";
  ck.header["train_config"] = config_;
  ck.header["field"] = field_ck.header;
  ck.header["state"] = {{"stage", state_.stage},
                        {"stage_iteration", state_.stage_iteration},
                        {"iteration", state_.iteration},
                        {"loss_history", state_.loss_history},
                        {"spin_pool_frame", state_.spin_pool_frame ? nlohmann::json(*state_.spin_pool_frame)
                                                                   : nlohmann::json(nullptr)},
                        {"spin_pool_built_at", state_.spin_pool_built_at}};
  ck.header["rng"] = rng_state(rng_);
  ck.header["adam"] = {{"step", adam_.step}, {"param_steps", adam_.param_steps}};
  ck.header["stats"] = {{"spin_pool_clamps", stats_.spin_pool_clamps},
                        {"degenerate_depth_batches", stats_.degenerate_depth_batches}};
  for (const auto& [name, t] : field_ck.tensors) ck.tensors.emplace_back("field/" + name, t);
  const auto& params = field_->parameters();
  for (std::size_t i = 0; i < adam_.first_moment.size(); ++i) {
    ck.tensors.emplace_back("adam.m/" + params[i].name, adam_.first_moment[i]);
    ck.tensors.emplace_back("adam.v/" + params[i].name, adam_.second_moment[i]);
  }
  return ck;
}

BlockTrainer BlockTrainer::resume(const Dataset& data, std::vector<std::size_t> frames, const Checkpoint& state) {
  if (state.header.value("kind", "") != "train_state") {
    throw std::invalid_argument("resume: checkpoint is not a training state");
  }
  BlockTrainer t(data, std::move(frames), train_config_from_json(state.header.at("train_config")));
  Checkpoint fc;
  fc.header = state.header.at("field");
  for (const auto& [name, tensor] : state.tensors) {
    if (name.rfind("field/", 0) == 0) fc.tensors.emplace_back(name.substr(6), tensor);
  }
  t.field_ = std::make_unique<MultiLevelField>(MultiLevelField::from_checkpoint(fc));
  const auto& s = state.header.at("state");
  t.state_.stage = s.at("stage").get<int>();
  t.state_.stage_iteration = s.at("stage_iteration").get<long>();
  t.state_.iteration = s.at("iteration").get<long>();
  t.state_.loss_history = s.at("loss_history").get<std::vector<double>>();
  if (!s.at("spin_pool_frame").is_null()) t.state_.spin_pool_frame = s.at("spin_pool_frame").get<std::size_t>();
  t.state_.spin_pool_built_at = s.at("spin_pool_built_at").get<long>();
  restore_rng_state(t.rng_, state.header.at("rng").get<std::string>());
  t.adam_.step = state.header.at("adam").at("step").get<std::int64_t>();
  t.adam_.param_steps = state.header.at("adam").at("param_steps").get<std::vector<std::int64_t>>();
  const auto& params = t.field_->parameters();
  for (std::size_t i = 0; i < t.adam_.param_steps.size(); ++i) {
    t.adam_.first_moment.push_back(state.at("adam.m/" + params[i].name));
    t.adam_.second_moment.push_back(state.at("adam.v/" + params[i].name));
  }
  t.stats_.spin_pool_clamps = state.header.at("stats").at("spin_pool_clamps").get<int>();
  t.stats_.degenerate_depth_batches = state.header.at("stats").at("degenerate_depth_batches").get<int>();
  return t;
}

// --- block / pipeline --------------------------------------------------------

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

BlockResult run_block(BlockTrainer& trainer, const fs::path& out_dir, std::size_t block_index,
                      const ProgressFn& progress, bool append_log) {
  BlockResult res;
  res.block = block_index;
  LossLogger logger(out_dir / "losses.csv", trainer.config().weights, append_log);
  const long per_stage = trainer.config().iterations_per_stage;
  while (!trainer.done()) {
    const IterationRecord rec = trainer.step();
    logger.log(rec.iteration, rec.components, rec.total);
    res.history.push_back(rec);
    if (progress) progress(block_index, rec);
    if (trainer.state().stage_iteration == per_stage) {
      write_checkpoint(out_dir / ("stage" + std::to_string(rec.stage) + ".ckpt"), trainer.field().to_checkpoint());
      write_checkpoint(out_dir / "train_state.ckpt", trainer.save_state());
    }
  }
  // Stages with zero iterations still exist in the final model.
  while (trainer.field().stage_count() < trainer.config().stages) trainer.field().add_stage();
  res.checkpoint = out_dir / "final.ckpt";
  Checkpoint final_ck = trainer.field().to_checkpoint();
  final_ck.header["render"] = trainer.config().render;
  write_checkpoint(res.checkpoint, final_ck);
  write_checkpoint(out_dir / "train_state.ckpt", trainer.save_state());
  write_json(out_dir / "stats.json", {{"spin_pool_clamps", trainer.stats().spin_pool_clamps},
                                      {"degenerate_depth_batches", trainer.stats().degenerate_depth_batches},
                                      {"iterations", trainer.state().iteration}});
  return res;
}

}  // namespace

BlockResult train_block(const Dataset& data, const std::vector<std::size_t>& frames, const TrainConfig& config,
                        const fs::path& out_dir, std::size_t block_index, const ProgressFn& progress) {
  fs::create_directories(out_dir);
  const TrainConfig resolved = resolve_bounds(config, data, frames);
  BlockTrainer trainer(data, frames, resolved);
  write_json(out_dir / "config.json", resolved);
  BlockResult res = run_block(trainer, out_dir, block_index, progress, false);
  res.frames = frames;
  return res;
}

BlockResult resume_block(const Dataset& data, const std::vector<std::size_t>& frames, const fs::path& out_dir,
                         std::size_t block_index, const ProgressFn& progress) {
  BlockTrainer trainer = BlockTrainer::resume(data, frames, read_checkpoint(out_dir / "train_state.ckpt"));
  BlockResult res = run_block(trainer, out_dir, block_index, progress, true);
  res.frames = frames;
  return res;
}

Trajectory trajectory_of(const Dataset& data) {
  Trajectory t;
  for (const auto& f : data.frames) t.push_back({f.id, f.pose});
  return t;
}

bool TrainAllResult::ok() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const BlockResult& b) { return b.ok; });
}

TrainAllResult train_all(const Dataset& data, const TrainConfig& config, const fs::path& out_dir,
                         const ProgressFn& progress) {
  config.validate();
  fs::create_directories(out_dir);
  const Split sp = split(data.frames.size(), config.split);
  const Trajectory traj = trajectory_of(data);
  Division division;
  if (config.divide_blocks) {
    division = divide(traj, config.divide);
  } else {
    Block b;
    b.core_end = b.end = traj.size();
    b.center = block_center(b, traj);
    division.blocks.push_back(b);
    division.cumulative_turn_deg.assign(traj.size(), 0.0);
  }
  TrainAllResult result;
  result.manifest = division_to_json(division, traj, config.divide);
  result.manifest["train_config"] = config;
  result.manifest["split"] = {{"train", sp.train}, {"test", sp.test}};
  for (std::size_t b = 0; b < division.blocks.size(); ++b) {
    const Block& blk = division.blocks[b];
    std::vector<std::size_t> frames;
    for (const auto t : sp.train) {
      if (blk.contains(t)) frames.push_back(t);
    }
    char name[32];
    std::snprintf(name, sizeof name, "block_%02zu", b);
    BlockResult br;
    br.block = b;
    auto& entry = result.manifest["blocks"][b];
    try {
      if (frames.empty()) throw std::runtime_error("block has no training frames");
      TrainConfig bc = config;
      bc.seed = config.seed + b;
      br = train_block(data, frames, bc, out_dir / name, b, progress);
      const TrainConfig resolved = resolve_bounds(bc, data, frames);
      entry["checkpoint"] = std::string(name) + "/final.ckpt";
      entry["render"] = resolved.render;
      entry["status"] = "ok";
      if (!br.history.empty()) entry["final_loss"] = br.history.back().total;
    } catch (const std::exception& e) {
      br.ok = false;
      br.error = e.what();
      entry["status"] = "failed";
      entry["error"] = e.what();
    }
    entry["train_frames"] = frames;
    result.blocks.push_back(std::move(br));
  }
  write_json(out_dir / "manifest.json", result.manifest);
  return result;
}

// --- trained model -----------------------------------------------------------

TrainedModel TrainedModel::load(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  TrainedModel m;
  m.manifest_ = nlohmann::json::parse(in);
  const fs::path dir = manifest_path.parent_path();
  if (m.manifest_.contains("train_config") && m.manifest_.at("train_config").contains("integration")) {
    from_json(m.manifest_.at("train_config").at("integration"), m.integration_);
  }
  std::vector<RenderConfig> configs;
  for (const auto& b : m.manifest_.at("blocks")) {
    if (b.value("status", "ok") != "ok") continue;
    const auto ck = read_checkpoint(dir / b.at("checkpoint").get<std::string>());
    m.fields_.push_back(std::make_unique<MultiLevelField>(MultiLevelField::from_checkpoint(ck)));
    const auto c = b.at("center").get<std::vector<double>>();
    m.centers_.emplace_back(c[0], c[1], c[2]);
    RenderConfig rc;
    from_json(b.at("render"), rc);
    configs.push_back(rc);
  }
  if (m.fields_.empty()) throw std::runtime_error("manifest lists no trained blocks");
  m.render_ = configs.front();
  m.block_render_ = std::move(configs);
  m.rebuild_models();
  return m;
}

void TrainedModel::set_jobs(int jobs) {
  jobs_ = std::max(1, jobs);
  rebuild_models();
}

void TrainedModel::rebuild_models() {
  models_.clear();
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    RenderConfig rc = block_render_[i];
    rc.stratified_jitter = false;
    models_.push_back(make_block_model(i, centers_[i], *fields_[i], rc, fields_[i]->stage_count(), jobs_));
  }
}

RenderedImage TrainedModel::render(const Pose& pose, const CameraIntrinsics& K, BlockSelection* selection) const {
  IntegratedRender r = render_integrated(models_, pose, K, integration_);
  if (selection) *selection = r.selection;
  return std::move(r.image);
}

EvalReport evaluate(const TrainedModel& model, const Dataset& data, const std::vector<std::size_t>& frames,
                    const nlohmann::json& config_for_hash) {
  EvalReport report;
  for (const auto f : frames) {
    const Frame& fr = data.frames.at(f);
    const RenderedImage img = model.render(fr.pose, data.intrinsics);
    report.frames.push_back(evaluate_frame(fr.id, img.rgb, fr.rgb, img.depth, fr.depth, &report.warnings));
  }
  report.finalize();
  report.config_hash = config_hash(config_for_hash.is_null() ? model.manifest() : config_for_hash);
  return report;
}

}  // namespace tubenerf
