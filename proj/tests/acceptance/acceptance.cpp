// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance --criteria 1,2,3 --work-dir DIR [--reuse] [--jobs N]
//
// Criteria 7 and 8 train real models and take a long time on small
// machines; --reuse skips a training run whose output directory already
// holds a manifest with the identical configuration.

#include "gradient_cases.hpp"
#include "test_support.hpp"
#include "trajectories.hpp"

#include "tubenerf/checkpoint.hpp"
#include "tubenerf/densify.hpp"
#include "tubenerf/geometry.hpp"
#include "tubenerf/integration.hpp"
#include "tubenerf/losses.hpp"
#include "tubenerf/renderer.hpp"
#include "tubenerf/segmentation.hpp"
#include "tubenerf/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace tubenerf;
using namespace tubenerf::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kPrimitiveGradTol = 1e-4;
constexpr double kLossGradTol = 1e-3;
constexpr double kGradSuiteSeconds = 60.0;
constexpr double kRenderTol = 1e-3;
constexpr double kUnityTol = 1e-6;
constexpr double kOrderRatio = 2.0;
constexpr double kReprojectPx = 1e-6;
constexpr double kSlerpTol = 1e-9;
constexpr double kWarpRgb = 0.05;
constexpr double kWarpDepthQuanta = 2.0;
constexpr int kCutSlack = 5;
constexpr double kOverlapSlack = 1.0;
constexpr double kIdwTol = 1e-9;
constexpr double kSeamTol = 1e-6;
constexpr double kPsnrTarget = 22.0;
constexpr double kDepthMseTarget = 1e-2;
constexpr double kAblationPsnrGap = 3.0;
constexpr double kAblationDepthRatio = 2.0;
constexpr double kTrendSlack = 0.1;
// Full-scale budget: 45 minutes on 8 cores, compared as core-minutes.
constexpr double kBudgetCoreMinutes = 45.0 * 8.0;

// Frozen regression values from the reference run of criterion 7 (see
// e2e_config). A run must stay within the tolerances below of them.
constexpr double kFrozenPsnr = 28.275;
constexpr double kFrozenDepthMse = 0.00746;
constexpr double kFrozenAblationPsnr = 21.329;
constexpr double kFrozenAblationDepthMse = 0.03484;
constexpr double kRegressionPsnrSlack = 0.5;
constexpr double kRegressionDepthFactor = 1.5;

struct Options {
  fs::path work_dir;
  bool reuse = false;
  int jobs = 1;
};

class Criterion {
 public:
  explicit Criterion(int id) : id_(id) {}

  bool check(bool ok, const std::string& what) {
    std::printf("  [%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
    std::fflush(stdout);
    pass_ = pass_ && ok;
    return ok;
  }
  void note(const std::string& what) {
    std::printf("  [..] %s\n", what.c_str());
    std::fflush(stdout);
  }
  bool finish(double seconds) const {
    std::printf("criterion %d: %s (%.1fs)\n", id_, pass_ ? "PASS" : "FAIL", seconds);
    std::fflush(stdout);
    return pass_;
  }

 private:
  int id_;
  bool pass_ = true;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- shared data ---------------------------------------------------------

TubePhantomConfig desk_phantom() {
  TubePhantomConfig c = TubePhantomConfig::preset_named("curved-tube");
  c.frame_count = 120;
  c.width = 96;
  c.height = 96;
  return c;
}

const Dataset& desk_data(const Options& opt) {
  static std::optional<Dataset> data;
  if (!data) data = generate_phantom(desk_phantom(), opt.jobs);
  return *data;
}

AnalyticField homogeneous(double sigma, std::array<double, 3> c) {
  return [sigma, c](const Vec3&, const Vec3&) {
    FieldSample s;
    s.density = sigma;
    s.rgb = c;
    return s;
  };
}

Ray unit_ray() {
  Ray r;
  r.near = 0.0;
  r.far = 1.0;
  return r;
}

// --- 1: gradients --------------------------------------------------------

void criterion_gradients(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_p = 0.0;
  std::string worst_p_name;
  std::size_t fails = 0;
  const auto prims = primitive_cases();
  for (const auto& g : prims) {
    const double e = gradient_error(g.fn, g.inputs);
    if (!(e < kPrimitiveGradTol)) {
      ++fails;
      c.check(false, fmt("primitive %s relative error %.3g", g.name.c_str(), e));
    }
    if (e > worst_p) {
      worst_p = e;
      worst_p_name = g.name;
    }
  }
  c.check(fails == 0, fmt("%zu primitives within %.0e (worst %s %.2e)", prims.size(), kPrimitiveGradTol,
                          worst_p_name.c_str(), worst_p));
  double worst_l = 0.0;
  std::string worst_l_name;
  fails = 0;
  const auto losses = loss_cases();
  for (const auto& g : losses) {
    const double e = gradient_error(g.fn, g.inputs);
    if (!(e < kLossGradTol)) {
      ++fails;
      c.check(false, fmt("loss %s relative error %.3g", g.name.c_str(), e));
    }
    if (e > worst_l) {
      worst_l = e;
      worst_l_name = g.name;
    }
  }
  c.check(fails == 0, fmt("%zu losses within %.0e (worst %s %.2e)", losses.size(), kLossGradTol,
                          worst_l_name.c_str(), worst_l));
  const double secs = seconds_since(t0);
  c.check(secs < kGradSuiteSeconds, fmt("suite runtime %.2fs < %.0fs", secs, kGradSuiteSeconds));
}

// --- 2: rendering ---------------------------------------------------------

void criterion_rendering(Criterion& c) {
  const double sigma = 2.0;
  const std::array<double, 3> col{0.3, 0.6, 0.9};
  RenderConfig rc;
  rc.near = 0.0;
  rc.far = 1.0;
  rc.samples_per_ray = 256;
  const RenderOutput out = render_ray(homogeneous(sigma, col), unit_ray(), rc);
  const double t_exact = std::exp(-sigma);
  c.check(std::abs(out.final_transmittance - t_exact) < kRenderTol,
          fmt("T(far) %.6f vs exp(-2) %.6f", out.final_transmittance, t_exact));
  double color_err = 0.0;
  for (int k = 0; k < 3; ++k) color_err = std::max(color_err, std::abs(out.color[k] - col[k] * (1.0 - t_exact)));
  c.check(color_err < kRenderTol, fmt("colour error %.2e vs c(1 - exp(-2))", color_err));
  const auto targets = ray_transmittance_targets(out);
  const double h = 1.0 / rc.samples_per_ray;
  double t_err = 0.0;
  for (int j = 0; j < rc.samples_per_ray; ++j)
    t_err = std::max(t_err, std::abs(targets[j] - std::exp(-sigma * (out.tvals[j] - 0.5 * h))));
  c.check(t_err < kRenderTol, fmt("per-sample transmittance error %.2e", t_err));

  // Partition of unity over random piecewise media and a random network field.
  Rng rng(11);
  double unity_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> sig(64);
    for (auto& s : sig) s = uniform01(rng) < 0.3 ? uniform(rng, 0.0, 80.0) : 0.0;
    const AnalyticField f = [&sig](const Vec3& x, const Vec3&) {
      FieldSample s;
      s.density = sig[std::min<std::size_t>(63, static_cast<std::size_t>(std::max(0.0, x.z()) * 64))];
      s.rgb = {0.5, 0.5, 0.5};
      return s;
    };
    RenderConfig r2;
    r2.near = 0.0;
    r2.samples_per_ray = 16 + trial % 100;
    Rng jitter(trial);
    const RenderOutput o = render_ray(f, unit_ray(), r2, &jitter);
    double sum = o.final_transmittance;
    for (double w : o.weights) sum += w;
    unity_err = std::max(unity_err, std::abs(sum - 1.0));
  }
  FieldConfig fc;
  fc.hidden = 32;
  fc.trunk_layers = 2;
  fc.color_hidden = 16;
  fc.seed = 4;
  const MultiLevelField field(fc, 2);
  for (int trial = 0; trial < 50; ++trial) {
    Ray r;
    r.origin = Vec3(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    r.direction = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
    r.near = 0.05;
    r.far = 2.0;
    RenderConfig r3;
    r3.near = r.near;
    r3.far = r.far;
    r3.samples_per_ray = 48;
    const RenderOutput o = render_ray(field, r, r3, 2);
    double sum = o.final_transmittance;
    for (double w : o.weights) sum += w;
    unity_err = std::max(unity_err, std::abs(sum - 1.0));
  }
  c.check(unity_err < kUnityTol, fmt("sum(w) + T_final - 1 worst %.2e over 250 rays", unity_err));

  auto err_at = [&](int n) {
    RenderConfig r4;
    r4.near = 0.0;
    r4.samples_per_ray = n;
    return std::abs(render_ray(homogeneous(sigma, col), unit_ray(), r4).final_transmittance - t_exact);
  };
  const double e64 = err_at(64);
  const double e128 = err_at(128);
  const double e256 = err_at(256);
  c.check(e64 / e128 >= kOrderRatio && e128 / e256 >= kOrderRatio,
          fmt("error ratios 64/128 %.4f, 128/256 %.4f (first order, >= %.1f)", e64 / e128, e128 / e256,
              kOrderRatio));
}

// --- 3: geometry -------------------------------------------------------------

void criterion_geometry(Criterion& c, const Options& opt) {
  const auto K = CameraIntrinsics::from_fov(96, 96, 80.0);
  Rng rng(3);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const PixelCoord px{uniform(rng, 0, K.width), uniform(rng, 0, K.height)};
    const Projection p = project(backproject(px, uniform(rng, 0.05, 20.0), K), K);
    worst = std::max({worst, std::abs(p.u - px.u), std::abs(p.v - px.v)});
  }
  c.check(worst < kReprojectPx, fmt("project(backproject) worst %.2e px over 10000 pixels", worst));

  const Pose base{Quaternion::from_axis_angle(Vec3(0.2, 1, 0.1).normalized(), 0.7), Vec3(1, 2, 3)};
  const std::vector<double> angles{5.0, 2.5, 1.25};
  const auto grid = spin_pose_grid(base, angles);
  std::set<std::array<long long, 4>> distinct;
  for (const auto& p : grid) {
    const Quaternion& q = p.rotation;
    const double s = q.w() < 0 ? -1.0 : 1.0;
    distinct.insert({std::llround(s * q.w() * 1e9), std::llround(s * q.x() * 1e9), std::llround(s * q.y() * 1e9),
                     std::llround(s * q.z() * 1e9)});
  }
  c.check(grid.size() == 216 && distinct.size() == 216,
          fmt("spin grid for (5, 2.5, 1.25) deg: %zu poses, %zu distinct", grid.size(), distinct.size()));

  const Dataset& d = desk_data(opt);
  const RayPool pool = build_spin_pool(d.frames[60], d.intrinsics);
  Rng draw(5);
  DensifyStats stats;
  const TrainConfig defaults;
  const SupervisionBatch batch = sample_spin_rays(pool, defaults.spin_rays, draw, 0.05, 10.0, &stats);
  c.check(defaults.spin_rays == 3136 && batch.size() == 3136 && stats.spin_pool_clamps == 0,
          fmt("spin ray draws per iteration: %zu (pool of %zu)", batch.size(), pool.size()));

  double slerp_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Quaternion q0 = Quaternion::from_axis_angle(
        Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized(), uniform(rng, 0, 3));
    const Vec3 axis = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
    const double theta = uniform(rng, 0.01, 3.0);
    const Quaternion q1 = q0 * Quaternion::from_axis_angle(axis, theta);
    slerp_err = std::max(slerp_err, 1.0 - std::abs(slerp(q0, q1, 0.0).dot(q0)));
    slerp_err = std::max(slerp_err, 1.0 - std::abs(slerp(q0, q1, 1.0).dot(q1)));
    // Midpoint: half the relative rotation.
    const Quaternion mid = q0 * Quaternion::from_axis_angle(axis, theta / 2.0);
    const Quaternion got = slerp(q0, q1, 0.5);
    const double sgn = got.dot(mid) < 0 ? -1.0 : 1.0;
    slerp_err = std::max({slerp_err, std::abs(got.w() - sgn * mid.w()), std::abs(got.x() - sgn * mid.x()),
                          std::abs(got.y() - sgn * mid.y()), std::abs(got.z() - sgn * mid.z())});
  }
  const Quaternion half =
      slerp(Quaternion::identity(), Quaternion::from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 2), 0.5);
  slerp_err = std::max({slerp_err, std::abs(half.w() - std::cos(std::numbers::pi / 8)),
                        std::abs(half.z() - std::sin(std::numbers::pi / 8)), std::abs(half.x()), std::abs(half.y())});
  c.check(slerp_err < kSlerpTol, fmt("slerp endpoints and midpoints worst %.2e", slerp_err));
}

// --- 4: warp ---------------------------------------------------------------

void criterion_warp(Criterion& c, const Options& opt) {
  const Dataset& d = desk_data(opt);
  const auto& K = d.intrinsics;
  bool identity_exact = true;
  std::size_t identity_valid = 0;
  for (std::size_t f : {0u, 59u, 119u}) {
    const Frame& fr = d.frames[f];
    const PseudoLabel l = warp(fr.rgb, fr.depth, fr.pose, fr.pose, K);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        if (!l.valid[y * K.width + x]) continue;
        ++identity_valid;
        for (int ch = 0; ch < 3; ++ch) identity_exact = identity_exact && l.rgb.at(x, y, ch) == fr.rgb.at(x, y, ch);
        identity_exact = identity_exact && std::abs(l.depth.at(x, y) - fr.depth.at(x, y)) <= 1e-9 * fr.depth.at(x, y);
      }
  }
  c.check(identity_exact && identity_valid == 3 * K.pixel_count(),
          fmt("identity warp reproduces source on %zu/%zu valid pixels", identity_valid, 3 * K.pixel_count()));

  double worst_rgb = 0.0;
  double worst_depth_ratio = 0.0;
  double min_valid = 1.0;
  for (std::size_t i = 0; i + 1 < d.frames.size(); ++i) {
    for (int dir = 0; dir < 2; ++dir) {
      const Frame& a = d.frames[dir ? i + 1 : i];
      const Frame& b = d.frames[dir ? i : i + 1];
      const PseudoLabel l = warp(a.rgb, a.depth, a.pose, b.pose, K);
      double rgb = 0.0;
      double dep = 0.0;
      std::size_t n = 0;
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
          if (!l.valid[y * K.width + x]) continue;
          for (int ch = 0; ch < 3; ++ch) rgb += std::abs(l.rgb.at(x, y, ch) - b.rgb.at(x, y, ch)) / 3.0;
          dep += std::abs(l.depth.at(x, y) - b.depth.at(x, y));
          ++n;
        }
      min_valid = std::min(min_valid, static_cast<double>(n) / K.pixel_count());
      if (n == 0) continue;
      worst_rgb = std::max(worst_rgb, rgb / n);
      worst_depth_ratio = std::max(worst_depth_ratio, dep / n / depth_quantization(b.depth));
    }
  }
  c.check(min_valid > 0.5, fmt("adjacent warps keep >= %.1f%% valid pixels", 100.0 * min_valid));
  c.check(worst_rgb < kWarpRgb, fmt("238 adjacent warps: worst mean |dRGB| %.4f < %.2f", worst_rgb, kWarpRgb));
  c.check(worst_depth_ratio < kWarpDepthQuanta,
          fmt("worst mean depth error %.3f quanta < %.1f", worst_depth_ratio, kWarpDepthQuanta));
}

// --- 5: division and integration ------------------------------------------

bool check_two_blocks(Criterion& c, const std::string& name, const Trajectory& traj, std::size_t apex) {
  const Division div = divide(traj);
  if (!c.check(div.blocks.size() == 2, fmt("%s: %zu blocks", name.c_str(), div.blocks.size()))) return false;
  const Block& a = div.blocks[0];
  const Block& b = div.blocks[1];
  const long cut = static_cast<long>(b.core_start);
  c.check(std::abs(cut - static_cast<long>(apex)) <= kCutSlack,
          fmt("%s: cut at frame %ld, bend apex %zu", name.c_str(), cut, apex));
  const double shared = static_cast<double>(a.end) - static_cast<double>(b.start);
  const double expect = 0.3 * static_cast<double>(std::min(a.core_size(), b.core_size()));
  c.check(std::abs(shared - expect) <= kOverlapSlack,
          fmt("%s: %g shared frames vs 30%% of %zu = %.1f", name.c_str(), shared,
              std::min(a.core_size(), b.core_size()), expect));
  c.check(a.start == 0 && b.end == traj.size() && a.end > b.start,
          fmt("%s: blocks cover all %zu frames", name.c_str(), traj.size()));
  return true;
}

void criterion_division(Criterion& c) {
  check_two_blocks(c, "synthetic L (2 x 100 frames)", l_trajectory(100), 100);

  // Camera path of the L-shaped phantom; the apex is the frame nearest the corner.
  const TubePhantomConfig pc = TubePhantomConfig::preset_named("l-tube");
  const TubePhantom ph(pc);
  Trajectory traj;
  std::size_t apex = 0;
  double best = 1e300;
  Vec3 corner = pc.control_points.front();
  for (std::size_t i = 1; i + 1 < pc.control_points.size(); ++i) {
    const Vec3 in = pc.control_points[i] - pc.control_points[i - 1];
    const Vec3 out = pc.control_points[i + 1] - pc.control_points[i];
    if (in.normalized().dot(out.normalized()) < 0.5) corner = pc.control_points[i];
  }
  for (int f = 0; f < pc.frame_count; ++f) {
    const double u = static_cast<double>(f) / (pc.frame_count - 1);
    const double s = ph.length() * (pc.path_start + (pc.path_end - pc.path_start) * u);
    traj.push_back({static_cast<std::size_t>(f), ph.camera_pose(s)});
    const double dist = (ph.centerline(s) - corner).norm();
    if (dist < best) {
      best = dist;
      apex = static_cast<std::size_t>(f);
    }
  }
  check_two_blocks(c, fmt("l-tube phantom (%d frames)", pc.frame_count), traj, apex);

  // IDW weights.
  Rng rng(21);
  double sum_err = 0.0;
  bool in_range = true;
  for (int t = 0; t < 1000; ++t) {
    std::vector<Vec3> centers(1 + t % 5);
    for (auto& v : centers) v = Vec3(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5));
    const Vec3 p(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5));
    const auto w = idw_weights(p, centers, uniform(rng, 0.5, 8.0));
    double s = 0.0;
    for (double x : w) {
      s += x;
      in_range = in_range && x >= 0.0 && x <= 1.0;
    }
    sum_err = std::max(sum_err, std::abs(s - 1.0));
  }
  c.check(sum_err < kIdwTol && in_range, fmt("IDW weights sum to 1, worst %.2e over 1000 draws", sum_err));
  double sym_err = 0.0;
  for (double eps : {0.5, 1.0, 2.0, 7.0}) {
    const std::vector<Vec3> centers{Vec3(-1, 0, 0), Vec3(1, 0, 0)};
    const auto w = idw_weights(Vec3(0, 2, 0), centers, eps);
    sym_err = std::max({sym_err, std::abs(w[0] - 0.5), std::abs(w[1] - 0.5)});
  }
  c.check(sym_err < kIdwTol, fmt("equidistant centers give 0.5/0.5 (error %.2e)", sym_err));
  {
    const std::vector<Vec3> centers{Vec3(1, 0, 0), Vec3(-2, 0, 0)};
    const auto w = idw_weights(Vec3::Zero(), centers, 1.0);
    c.check(std::abs(w[0] - 2.0 / 3.0) < kIdwTol && std::abs(w[1] - 1.0 / 3.0) < kIdwTol,
            fmt("distances (1, 2), eps 1 -> (%.12f, %.12f)", w[0], w[1]));
  }

  // Seam continuity: two blocks reconstruct the straight phantom with
  // slightly different density and sampling; the camera moves along the axis
  // through the overlap between their centers. The per-step change of an
  // image is its largest pixel change.
  TubePhantomConfig sc = TubePhantomConfig::preset_named("straight-tube");
  sc.width = 32;
  sc.height = 32;
  const TubePhantom tube(sc);
  const auto K = tube.intrinsics();
  const double L = tube.length();
  auto block = [&](std::size_t index, double s_center, double sigma, int samples, double tint) {
    RenderConfig rc;
    rc.near = 0.02;
    rc.far = 4.0 * tube.max_radius();
    rc.samples_per_ray = samples;
    const AnalyticField base = phantom_density_field(tube, sigma);
    const AnalyticField f = [base, tint](const Vec3& x, const Vec3& d) {
      FieldSample fs = base(x, d);
      for (double& v : fs.rgb) v *= tint;
      return fs;
    };
    BlockModel m;
    m.index = index;
    m.center = tube.centerline(s_center);
    m.render = [f, rc](const Pose& pose, const CameraIntrinsics& k) { return render_image(f, pose, k, rc); };
    m.visibility = [](const Vec3&, const Vec3&) { return 1.0; };
    return m;
  };
  struct SeamExcess {
    double max_norm = -1e300;
    double mean_norm = -1e300;
    double per_pixel = -1e300;
    std::size_t both_used = 0;
  };
  const int steps = 41;
  auto walk = [&](const std::vector<BlockModel>& models, const IntegrationConfig& ic) {
    SeamExcess ex;
    std::optional<RenderedImage> prev_a, prev_b, prev_mix;
    for (int k = 0; k < steps; ++k) {
      const double s = L * (0.25 + 0.5 * k / (steps - 1));
      const Vec3 eye = tube.centerline(s);
      const Pose pose = look_at(eye, eye + tube.tangent(s), tube.normal(s));
      const RenderedImage a = models[0].render(pose, K);
      const RenderedImage b = models[1].render(pose, K);
      const IntegratedRender mix = render_integrated(models, pose, K, ic);
      if (mix.selection.blocks.size() == 2) ++ex.both_used;
      if (prev_mix) {
        const auto& A = a.rgb.data();
        const auto& B = b.rgb.data();
        const auto& M = mix.image.rgb.data();
        double inf_a = 0, inf_b = 0, inf_m = 0, sum_a = 0, sum_b = 0, sum_m = 0;
        for (std::size_t i = 0; i < M.size(); ++i) {
          const double da = std::abs(A[i] - prev_a->rgb.data()[i]);
          const double db = std::abs(B[i] - prev_b->rgb.data()[i]);
          const double dm = std::abs(M[i] - prev_mix->rgb.data()[i]);
          inf_a = std::max(inf_a, da);
          inf_b = std::max(inf_b, db);
          inf_m = std::max(inf_m, dm);
          sum_a += da;
          sum_b += db;
          sum_m += dm;
          ex.per_pixel = std::max(ex.per_pixel, dm - std::max(da, db));
        }
        const double n = static_cast<double>(M.size());
        ex.max_norm = std::max(ex.max_norm, inf_m - std::max(inf_a, inf_b));
        ex.mean_norm = std::max(ex.mean_norm, (sum_m - std::max(sum_a, sum_b)) / n);
      }
      prev_a = a;
      prev_b = b;
      prev_mix = mix.image;
    }
    return ex;
  };
  const IntegrationConfig ic;
  const SeamExcess smooth = walk({block(0, 0.3 * L, 60.0, 64, 1.0), block(1, 0.7 * L, 80.0, 96, 1.0)}, ic);
  c.check(smooth.both_used == static_cast<std::size_t>(steps),
          fmt("both blocks blended at %zu/%d steps", smooth.both_used, steps));
  c.check(smooth.max_norm <= kSeamTol,
          fmt("blended per-step change minus max block change: worst %.3g (<= %.0e)", smooth.max_norm, kSeamTol));
  c.note(fmt("same walk, mean-abs norm excess %.3g, per-pixel excess %.3g (weight drift times block disagreement)",
             smooth.mean_norm, smooth.per_pixel));
  // Control: a hard switch between visibly different blocks must be caught.
  IntegrationConfig hard = ic;
  hard.epsilon = 64.0;
  const SeamExcess seam = walk({block(0, 0.3 * L, 60.0, 64, 1.0), block(1, 0.7 * L, 80.0, 96, 0.9)}, hard);
  c.check(seam.max_norm > 100.0 * kSeamTol,
          fmt("control: near-hard switch to a 10%% darker block is detected (excess %.3g)", seam.max_norm));
}

// --- 6: loss wiring ----------------------------------------------------------

void criterion_losses(Criterion& c) {
  LossComponents ones;
  ones.depth = ones.ori = ones.vit = ones.trans = 1.0;
  const LossWeights w;
  const double total = total_loss(ones, w);
  c.check(total == 20.0, fmt("total with unit components = %.17g (weights %g, %g, %g, %g)", total, w.depth, w.ori,
                             w.vit, w.trans));
  {
    Tape tape;
    const Var one = tape.constant(Tensor::scalar(1.0));
    const double tv = total_loss(tape, one, one, one, one, w).item();
    c.check(tv == 20.0, fmt("tape total = %.17g", tv));
  }

  const Dataset d = generate_phantom(tiny_phantom("curved-tube", 12, 24));
  std::vector<std::size_t> frames(d.frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = i;
  auto first_terms = [&](int views) {
    TrainConfig cfg = tiny_train_config();
    cfg.views = views;
    BlockTrainer t(d, frames, cfg);
    return t.step().terms;
  };
  const LossTerms v1 = first_terms(1);
  const LossTerms v2 = first_terms(2);
  const LossTerms v3 = first_terms(3);
  auto positive_original = [](const LossTerms& t) {
    return t.ori_patch > 0 && t.ori_rand > 0 && t.vit_original > 0 && t.trans > 0;
  };
  c.check(positive_original(v1) && positive_original(v2) && positive_original(v3),
          "original-view and transmittance terms active for 1, 2 and 3 views");
  c.check(v1.depth_helix == 0 && v1.vit_helix == 0 && v1.depth_spin == 0 && v1.vit_spin == 0,
          "1 view: helix and spin terms exactly 0");
  c.check(v2.depth_helix > 0 && v2.vit_helix > 0 && v2.depth_spin == 0 && v2.vit_spin == 0,
          "2 views: helix terms active, spin terms exactly 0");
  c.check(v3.depth_helix > 0 && v3.vit_helix > 0 && v3.depth_spin > 0 && v3.vit_spin > 0,
          "3 views: helix and spin terms active");
}

// --- 9: determinism ----------------------------------------------------------

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism(Criterion& c, const Options& opt) {
  const Dataset d = generate_phantom(tiny_phantom("curved-tube", 24, 32));
  TrainConfig cfg = tiny_train_config();
  cfg.stages = 3;
  cfg.iterations_per_stage = 8;
  cfg.divide_blocks = false;
  cfg.jobs = opt.jobs;
  const fs::path root = opt.work_dir / "determinism";
  fs::remove_all(root);
  std::vector<std::string> reports;
  for (const char* run : {"a", "b"}) {
    const TrainAllResult r = train_all(d, cfg, root / run);
    if (!c.check(r.ok(), fmt("run %s trained", run))) return;
    const Split sp = split(d.frames.size(), cfg.split);
    TrainedModel model = TrainedModel::load(root / run / "manifest.json");
    model.set_jobs(std::string(run) == "a" ? 1 : std::max(2, opt.jobs));
    reports.push_back(report_to_json(evaluate(model, d, sp.test)).dump(2));
  }
  c.check(slurp(root / "a/block_00/losses.csv") == slurp(root / "b/block_00/losses.csv"),
          "loss traces byte-identical");
  c.check(slurp(root / "a/block_00/final.ckpt") == slurp(root / "b/block_00/final.ckpt"),
          "final checkpoints byte-identical");
  c.check(reports[0] == reports[1], "evaluation reports byte-identical (render jobs 1 vs 2)");

  // Interrupt inside stage 2, resume from the saved state.
  const Split sp = split(d.frames.size(), cfg.split);
  const fs::path part = root / "resume";
  fs::create_directories(part);
  BlockTrainer t(d, sp.train, resolve_bounds(cfg, d, sp.train));
  for (int i = 0; i < 11; ++i) t.step();
  write_checkpoint(part / "train_state.ckpt", t.save_state());
  const BlockResult r = resume_block(d, sp.train, part);
  c.check(r.ok, "resume finished");
  c.check(slurp(part / "final.ckpt") == slurp(root / "a/block_00/final.ckpt"),
          "resume after 11 of 24 iterations gives a byte-identical final checkpoint");
}

// --- 7 and 8: end-to-end --------------------------------------------------------

// Desk configuration of the full pipeline. The network, batch sizes and
// iteration counts are scaled down from the library defaults so the run fits a
// small CPU budget.
TrainConfig e2e_config(const Options& opt) {
  TrainConfig c;
  c.stages = 3;
  c.iterations_per_stage = 1000;
  c.views = 3;
  c.rays_per_batch = 192;
  c.patch_size = 8;
  c.spin_rays = 64;
  c.helix_rays = 64;
  c.vit_window = 8;
  c.extractor.stride = 4;
  c.extractor.channels = 16;
  c.trans_samples = 256;
  c.field.hidden = 64;
  c.field.trunk_layers = 3;
  c.field.color_hidden = 32;
  c.field.visibility_hidden = 32;
  c.field.encoding.position_bands = 6;
  c.render.samples_per_ray = 32;
  c.learning_rate = 5e-3;
  c.divide_blocks = false;
  c.jobs = opt.jobs;
  return c;
}

struct RunResult {
  EvalReport report;
  EvalReport coarse;  // stage-1 checkpoint of the same run
  double train_seconds = 0.0;
};

EvalReport evaluate_manifest(const fs::path& manifest, const Dataset& d, const std::vector<std::size_t>& test,
                             int jobs) {
  TrainedModel model = TrainedModel::load(manifest);
  model.set_jobs(jobs);
  return evaluate(model, d, test);
}

RunResult train_and_evaluate(const std::string& name, const Dataset& d, const TrainConfig& cfg, const Options& opt,
                             Criterion& c) {
  const fs::path dir = opt.work_dir / name;
  const fs::path manifest = dir / "manifest.json";
  RunResult res;
  bool reused = false;
  if (opt.reuse && fs::exists(manifest)) {
    std::ifstream in(manifest);
    const auto j = nlohmann::json::parse(in);
    reused = j.value("train_config", nlohmann::json()) == nlohmann::json(cfg);
  }
  if (!reused) {
    fs::remove_all(dir);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainAllResult r = train_all(d, cfg, dir, [&](std::size_t, const IterationRecord& rec) {
      if (rec.iteration % 500 == 0) c.note(fmt("%s: iteration %ld, loss %.4f", name.c_str(), rec.iteration, rec.total));
    });
    res.train_seconds = seconds_since(t0);
    if (!r.ok()) throw std::runtime_error(name + ": training failed");
  } else {
    c.note(fmt("%s: reusing trained model in %s", name.c_str(), dir.c_str()));
  }
  const Split sp = split(d.frames.size(), cfg.split);
  res.report = evaluate_manifest(manifest, d, sp.test, opt.jobs);
  write_json(dir / "report.json", report_to_json(res.report));
  if (cfg.stages > 1) {
    std::ifstream in(manifest);
    auto j = nlohmann::json::parse(in);
    j["blocks"][0]["checkpoint"] = "block_00/stage1.ckpt";
    write_json(dir / "manifest_stage1.json", j);
    res.coarse = evaluate_manifest(dir / "manifest_stage1.json", d, sp.test, opt.jobs);
  }
  c.note(fmt("%s: PSNR %.3f dB, SSIM %.4f, depth MSE %.5f over %zu test frames%s", name.c_str(),
             res.report.mean_psnr, res.report.mean_ssim, res.report.mean_depth_mse, res.report.frames.size(),
             reused ? "" : fmt(", trained in %.0fs", res.train_seconds).c_str()));
  return res;
}

void criterion_end_to_end(Criterion& c, const Options& opt) {
  const Dataset& d = desk_data(opt);
  const TrainConfig full = e2e_config(opt);
  TrainConfig ablation = full;
  ablation.stages = 1;
  ablation.views = 1;
  const Split sp = split(d.frames.size(), full.split);
  c.note(fmt("curved tube, %zu frames at %dx%d, %zu train / %zu test, %d stages x %d iterations",
             d.frames.size(), d.intrinsics.width, d.intrinsics.height, sp.train.size(), sp.test.size(), full.stages,
             full.iterations_per_stage));
  const RunResult a = train_and_evaluate("e2e_full", d, full, opt, c);
  const RunResult b = train_and_evaluate("e2e_ablation", d, ablation, opt, c);
  c.check(a.report.mean_psnr >= kPsnrTarget, fmt("held-out PSNR %.3f >= %.1f dB", a.report.mean_psnr, kPsnrTarget));
  c.check(a.report.mean_depth_mse <= kDepthMseTarget,
          fmt("held-out depth MSE %.5f <= %.0e", a.report.mean_depth_mse, kDepthMseTarget));
  c.check(a.report.mean_psnr - b.report.mean_psnr >= kAblationPsnrGap,
          fmt("PSNR gain over single-stage, no-densification ablation %.3f >= %.1f dB (ablation %.3f)",
              a.report.mean_psnr - b.report.mean_psnr, kAblationPsnrGap, b.report.mean_psnr));
  c.check(b.report.mean_depth_mse >= kAblationDepthRatio * a.report.mean_depth_mse,
          fmt("depth MSE improvement %.2fx >= %.0fx (ablation %.5f)",
              b.report.mean_depth_mse / std::max(a.report.mean_depth_mse, 1e-300), kAblationDepthRatio,
              b.report.mean_depth_mse));
  c.check(a.report.mean_psnr >= kFrozenPsnr - kRegressionPsnrSlack &&
              a.report.mean_depth_mse <= kRegressionDepthFactor * kFrozenDepthMse,
          fmt("regression: PSNR %.3f vs frozen %.3f, depth MSE %.5f vs frozen %.5f", a.report.mean_psnr, kFrozenPsnr,
              a.report.mean_depth_mse, kFrozenDepthMse));
  c.check(b.report.mean_psnr >= kFrozenAblationPsnr - kRegressionPsnrSlack &&
              b.report.mean_depth_mse <= kRegressionDepthFactor * kFrozenAblationDepthMse,
          fmt("regression (ablation): PSNR %.3f vs frozen %.3f, depth MSE %.5f vs frozen %.5f", b.report.mean_psnr,
              kFrozenAblationPsnr, b.report.mean_depth_mse, kFrozenAblationDepthMse));
  if (a.train_seconds > 0.0) {
    const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
    const double core_minutes = a.train_seconds / 60.0 * std::min<unsigned>(cores, static_cast<unsigned>(opt.jobs));
    c.check(core_minutes <= kBudgetCoreMinutes,
            fmt("training used %.1f core-minutes <= %.0f (45 min x 8 cores)", core_minutes, kBudgetCoreMinutes));
  }
}

void criterion_ablation_trend(Criterion& c, const Options& opt) {
  const Dataset& d = desk_data(opt);
  TrainConfig base = e2e_config(opt);
  base.split.sparse = true;
  const Split sp = split(d.frames.size(), base.split);
  c.note(fmt("sparse protocol: %zu train / %zu test frames", sp.train.size(), sp.test.size()));
  std::map<int, RunResult> runs;
  for (int views : {3, 2, 1}) {
    TrainConfig cfg = base;
    cfg.views = views;
    runs[views] = train_and_evaluate(fmt("sparse_views%d", views), d, cfg, opt, c);
  }
  const double p3 = runs[3].report.mean_psnr;
  const double p2 = runs[2].report.mean_psnr;
  const double p1 = runs[1].report.mean_psnr;
  c.check(p3 >= p2 - kTrendSlack, fmt("3 views %.3f >= 2 views %.3f - %.1f", p3, p2, kTrendSlack));
  c.check(p2 >= p1 - kTrendSlack, fmt("2 views %.3f >= 1 view %.3f - %.1f", p2, p1, kTrendSlack));
  const double coarse = runs[3].coarse.mean_psnr;
  c.check(p3 >= coarse - kTrendSlack, fmt("3 stages %.3f >= coarse only %.3f - %.1f", p3, coarse, kTrendSlack));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string criteria = "1,2,3,4,5,6,7,8,9";
  Options opt;
  std::string work = (fs::temp_directory_path() / "tubenerf_acceptance").string();
  opt.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--criteria", criteria, "Comma-separated criterion numbers");
  app.add_option("--work-dir", work, "Scratch directory for datasets and models");
  app.add_flag("--reuse", opt.reuse, "Reuse trained end-to-end models with an identical configuration");
  app.add_option("--jobs", opt.jobs, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  opt.work_dir = work;
  fs::create_directories(opt.work_dir);

  std::vector<int> ids;
  std::stringstream ss(criteria);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      const int id = std::stoi(tok);
      if (id < 1 || id > 9) throw std::out_of_range(tok);
      ids.push_back(id);
    } catch (const std::exception&) {
      std::fprintf(stderr, "bad criterion '%s'\n", tok.c_str());
      return 2;
    }
  }

  int failed = 0;
  for (int id : ids) {
    Criterion c(id);
    std::printf("criterion %d\n", id);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (id) {
        case 1: criterion_gradients(c); break;
        case 2: criterion_rendering(c); break;
        case 3: criterion_geometry(c, opt); break;
        case 4: criterion_warp(c, opt); break;
        case 5: criterion_division(c); break;
        case 6: criterion_losses(c); break;
        case 7: criterion_end_to_end(c, opt); break;
        case 8: criterion_ablation_trend(c, opt); break;
        case 9: criterion_determinism(c, opt); break;
      }
    } catch (const std::exception& e) {
      c.check(false, std::string("exception: ") + e.what());
    }
    if (!c.finish(seconds_since(t0))) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
