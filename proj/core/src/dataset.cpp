#include "tubenerf/dataset.hpp"

#include "tubenerf/parallel.hpp"
#include "tubenerf/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>

namespace tubenerf {

namespace fs = std::filesystem;

std::string frame_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", id);
  return buf;
}

double Dataset::max_ray_distance() const {
  double best = 0.0;
  for (const auto& f : frames) {
    for (int y = 0; y < f.depth.height(); ++y) {
      for (int x = 0; x < f.depth.width(); ++x) {
        best = std::max(best, f.depth.at(x, y) * ray_length_per_depth(pixel_center(x, y), intrinsics));
      }
    }
  }
  return best;
}

// --- config -----------------------------------------------------------------

void TubePhantomConfig::validate() const {
  if (control_points.size() < 2) throw std::invalid_argument("phantom: need at least 2 control points");
  if (samples_per_span < 1) throw std::invalid_argument("phantom: samples_per_span must be positive");
  if (!(base_radius > 0.0)) throw std::invalid_argument("phantom: base_radius must be positive");
  if (!(fold_amplitude >= 0.0 && fold_amplitude < 0.5)) {
    throw std::invalid_argument("phantom: fold_amplitude must lie in [0, 0.5)");
  }
  if (!(camera_offset >= 0.0 && camera_offset < 0.8)) {
    throw std::invalid_argument("phantom: camera_offset must lie in [0, 0.8)");
  }
  if (!(look_ahead > 0.0)) throw std::invalid_argument("phantom: look_ahead must be positive");
  if (!(0.0 <= path_start && path_start <= path_end && path_end <= 1.0)) {
    throw std::invalid_argument("phantom: need 0 <= path_start <= path_end <= 1");
  }
  if (frame_count < 1) throw std::invalid_argument("phantom: frame_count must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("phantom: image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 170.0)) throw std::invalid_argument("phantom: fov_deg out of range");
}

TubePhantomConfig TubePhantomConfig::preset_named(const std::string& name) {
  TubePhantomConfig c;
  c.preset = name;
  if (name == "straight-tube") {
    c.control_points = {{0, 0, 0}, {0, 0, 10}};
  } else if (name == "curved-tube") {
    // Quarter-circle-ish bend of radius 5 followed by a short straight run.
    const double R = 5.0;
    for (int i = 0; i <= 6; ++i) {
      const double a = (std::numbers::pi / 2.0) * i / 6.0;
      c.control_points.emplace_back(R * (1.0 - std::cos(a)), 0.0, R * std::sin(a));
    }
    c.control_points.emplace_back(R + 3.0, 0.0, R);
    c.path_end = 0.72;
  } else if (name == "l-tube") {
    for (int i = 0; i <= 8; ++i) c.control_points.emplace_back(0.0, 0.0, 1.25 * i);
    for (int i = 1; i <= 8; ++i) c.control_points.emplace_back(1.25 * i, 0.0, 10.0);
    // Two legs of about 100 frames each around the corner.
    c.path_start = 0.025;
    c.path_end = 0.975;
    c.frame_count = 200;
  } else {
    throw std::invalid_argument("unknown phantom preset: " + name);
  }
  return c;
}

void to_json(nlohmann::json& j, const TubePhantomConfig& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.control_points) pts.push_back({p.x(), p.y(), p.z()});
  j = {{"preset", c.preset},
       {"control_points", pts},
       {"samples_per_span", c.samples_per_span},
       {"base_radius", c.base_radius},
       {"fold_amplitude", c.fold_amplitude},
       {"fold_frequency", c.fold_frequency},
       {"fold_phase", c.fold_phase},
       {"texture_seed", c.texture_seed},
       {"texture_components", c.texture_components},
       {"camera_offset", c.camera_offset},
       {"look_ahead", c.look_ahead},
       {"path_start", c.path_start},
       {"path_end", c.path_end},
       {"frame_count", c.frame_count},
       {"width", c.width},
       {"height", c.height},
       {"fov_deg", c.fov_deg}};
}

void from_json(const nlohmann::json& j, TubePhantomConfig& c) {
  if (j.contains("preset") && j.at("preset").get<std::string>() != "custom" && !j.contains("control_points")) {
    c = TubePhantomConfig::preset_named(j.at("preset").get<std::string>());
  }
  c.preset = j.value("preset", c.preset);
  if (j.contains("control_points")) {
    c.control_points.clear();
    for (const auto& p : j.at("control_points")) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw std::invalid_argument("phantom: control points need 3 components");
      c.control_points.emplace_back(v[0], v[1], v[2]);
    }
  }
  c.samples_per_span = j.value("samples_per_span", c.samples_per_span);
  c.base_radius = j.value("base_radius", c.base_radius);
  c.fold_amplitude = j.value("fold_amplitude", c.fold_amplitude);
  c.fold_frequency = j.value("fold_frequency", c.fold_frequency);
  c.fold_phase = j.value("fold_phase", c.fold_phase);
  c.texture_seed = j.value("texture_seed", c.texture_seed);
  c.texture_components = j.value("texture_components", c.texture_components);
  c.camera_offset = j.value("camera_offset", c.camera_offset);
  c.look_ahead = j.value("look_ahead", c.look_ahead);
  c.path_start = j.value("path_start", c.path_start);
  c.path_end = j.value("path_end", c.path_end);
  c.frame_count = j.value("frame_count", c.frame_count);
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.fov_deg = j.value("fov_deg", c.fov_deg);
}

// --- phantom ----------------------------------------------------------------

namespace {

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

Vec3 any_perpendicular(const Vec3& t) {
  const Vec3 axis = std::abs(t.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (axis - axis.dot(t) * t).normalized();
}

}  // namespace

TubePhantom::TubePhantom(TubePhantomConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& cp = config_.control_points;
  const int m = static_cast<int>(cp.size());
  auto at = [&](int i) { return cp[static_cast<std::size_t>(std::clamp(i, 0, m - 1))]; };
  for (int i = 0; i + 1 < m; ++i) {
    for (int k = 0; k < config_.samples_per_span; ++k) {
      points_.push_back(catmull_rom(at(i - 1), at(i), at(i + 1), at(i + 2),
                                    static_cast<double>(k) / config_.samples_per_span));
    }
  }
  points_.push_back(cp.back());
  // Drop zero-length segments.
  std::vector<Vec3> unique{points_.front()};
  for (std::size_t i = 1; i < points_.size(); ++i) {
    if ((points_[i] - unique.back()).norm() > 1e-9) unique.push_back(points_[i]);
  }
  points_ = std::move(unique);
  if (points_.size() < 2) throw std::invalid_argument("phantom: degenerate centerline");

  cumulative_.assign(1, 0.0);
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Vec3 d = points_[i + 1] - points_[i];
    cumulative_.push_back(cumulative_.back() + d.norm());
    tangents_.push_back(d.normalized());
  }
  normals_.push_back(any_perpendicular(tangents_.front()));
  for (std::size_t i = 1; i < tangents_.size(); ++i) {
    const Vec3 n = normals_.back() - normals_.back().dot(tangents_[i]) * tangents_[i];
    normals_.push_back(n.norm() > 1e-9 ? n.normalized() : any_perpendicular(tangents_[i]));
  }

  Rng rng(config_.texture_seed);
  for (int k = 0; k < config_.texture_components; ++k) {
    TextureWave w;
    w.freq_s = uniform(rng, 0.2, 1.2);
    w.freq_theta = 1 + static_cast<int>(uniform_index(rng, 4));
    w.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (auto& a : w.amplitude) a = uniform(rng, 0.03, 0.09);
    waves_.push_back(w);
  }
  build_grid();
}

double TubePhantom::max_radius() const { return config_.base_radius * (1.0 + config_.fold_amplitude); }

void TubePhantom::build_grid() {
  const double margin = 1.5 * max_radius() + 0.1;
  Vec3 lo = points_.front();
  Vec3 hi = points_.front();
  for (const auto& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.array() -= margin;
  hi.array() += margin;
  cell_ = max_radius();
  grid_min_ = lo;
  for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / cell_)));
  cells_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], {});
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    Vec3 a = points_[i].cwiseMin(points_[i + 1]);
    Vec3 b = points_[i].cwiseMax(points_[i + 1]);
    a.array() -= margin;
    b.array() += margin;
    int c0[3];
    int c1[3];
    for (int k = 0; k < 3; ++k) {
      c0[k] = std::clamp(static_cast<int>(std::floor((a[k] - grid_min_[k]) / cell_)), 0, dims_[k] - 1);
      c1[k] = std::clamp(static_cast<int>(std::floor((b[k] - grid_min_[k]) / cell_)), 0, dims_[k] - 1);
    }
    for (int z = c0[2]; z <= c1[2]; ++z) {
      for (int y = c0[1]; y <= c1[1]; ++y) {
        for (int x = c0[0]; x <= c1[0]; ++x) {
          cells_[(static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x].push_back(
              static_cast<std::uint32_t>(i));
        }
      }
    }
  }
}

TubePhantom::Closest TubePhantom::closest(const Vec3& x) const {
  Closest best;
  int c[3];
  for (int k = 0; k < 3; ++k) {
    const double f = std::floor((x[k] - grid_min_[k]) / cell_);
    if (f < 0 || f >= dims_[k]) return best;
    c[k] = static_cast<int>(f);
  }
  const auto& cand = cells_[(static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0]];
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_t = 0.0;
  for (const std::uint32_t i : cand) {
    const Vec3& a = points_[i];
    const double len = cumulative_[i + 1] - cumulative_[i];
    const double t = std::clamp((x - a).dot(tangents_[i]) / len, 0.0, 1.0);
    const Vec3 p = a + (t * len) * tangents_[i];
    const double d2 = (x - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.segment = i;
      best.point = p;
      best_t = t;
    }
  }
  if (cand.empty()) return best;
  best.found = true;
  best.distance = std::sqrt(best_d2);
  const std::size_t i = best.segment;
  const double len = cumulative_[i + 1] - cumulative_[i];
  best.s = cumulative_[i] + best_t * len;
  best.s_raw = best.s;
  if (i == 0 && best_t == 0.0) best.s_raw = (x - points_.front()).dot(tangents_.front());
  if (i + 1 == tangents_.size() && best_t == 1.0) {
    best.s_raw = length() + (x - points_.back()).dot(tangents_.back());
  }
  return best;
}

double TubePhantom::radius(double s) const {
  return config_.base_radius *
         (1.0 + config_.fold_amplitude *
                    std::sin(2.0 * std::numbers::pi * config_.fold_frequency * s + config_.fold_phase));
}

double TubePhantom::wall(const Vec3& x) const {
  const Closest c = closest(x);
  if (!c.found) return 1.0;
  return std::max({c.distance - radius(c.s), -c.s_raw, c.s_raw - length()});
}

std::array<double, 3> TubePhantom::texture(const Vec3& x) const {
  const Closest c = closest(x);
  const std::size_t i = c.found ? c.segment : 0;
  const Vec3& t = tangents_[i];
  const Vec3& n = normals_[i];
  const Vec3 b = t.cross(n);
  const Vec3 v = x - c.point;
  const double theta = std::atan2(v.dot(b), v.dot(n));
  const double s = c.found ? c.s : 0.0;
  std::array<double, 3> rgb{0.78, 0.46, 0.40};
  for (const auto& w : waves_) {
    const double phase = 2.0 * std::numbers::pi * w.freq_s * s + w.freq_theta * theta + w.phase;
    const double v0 = std::sin(phase);
    for (int ch = 0; ch < 3; ++ch) rgb[ch] += w.amplitude[ch] * v0;
  }
  // Fold crests are slightly darker.
  const double fold =
      std::sin(2.0 * std::numbers::pi * config_.fold_frequency * s + config_.fold_phase);
  for (auto& ch : rgb) ch = std::clamp(ch * (0.9 - 0.1 * fold), 0.0, 1.0);
  return rgb;
}

std::size_t TubePhantom::segment_at(double s, double* local) const {
  s = std::clamp(s, 0.0, length());
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t i = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  i = std::min(i, tangents_.size() - 1);
  if (local) *local = s - cumulative_[i];
  return i;
}

Vec3 TubePhantom::centerline(double s) const {
  double local = 0.0;
  const std::size_t i = segment_at(s, &local);
  return points_[i] + local * tangents_[i];
}

Vec3 TubePhantom::tangent(double s) const { return tangents_[segment_at(s, nullptr)]; }

Vec3 TubePhantom::normal(double s) const { return normals_[segment_at(s, nullptr)]; }

std::optional<double> TubePhantom::intersect(const Vec3& origin, const Vec3& direction, double max_distance) const {
  if (wall(origin) >= 0.0) return std::nullopt;
  double lo = 0.0;
  double t = 0.0;
  for (;;) {
    const double f = wall(origin + t * direction);
    if (f >= 0.0) break;
    lo = t;
    t += std::max(0.8 * -f, 1e-3);
    if (t > max_distance) return std::nullopt;
  }
  // Illinois false position on the bracket [lo, hi].
  double hi = t;
  double flo = wall(origin + lo * direction);
  double fhi = wall(origin + hi * direction);
  int side = 0;
  for (int it = 0; it < 100 && hi - lo > 1e-7; ++it) {
    double mid = (lo * fhi - hi * flo) / (fhi - flo);
    if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
    const double fm = wall(origin + mid * direction);
    if (std::abs(fm) < 1e-10) return mid;
    if (fm >= 0.0) {
      hi = mid;
      fhi = fm;
      if (side == -1) flo *= 0.5;
      side = -1;
    } else {
      lo = mid;
      flo = fm;
      if (side == 1) fhi *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

Pose TubePhantom::camera_pose(double s) const {
  const Vec3 eye = centerline(s) + config_.camera_offset * radius(s) * normal(s);
  const Vec3 target = centerline(std::min(s + config_.look_ahead, length()));
  return look_at(eye, target, normal(s));
}

CameraIntrinsics TubePhantom::intrinsics() const {
  return CameraIntrinsics::from_fov(config_.width, config_.height, config_.fov_deg);
}

Dataset generate_phantom(const TubePhantomConfig& config, int jobs) {
  const TubePhantom phantom(config);
  Dataset data;
  data.intrinsics = phantom.intrinsics();
  data.provenance = config;
  const auto& K = data.intrinsics;
  const int F = config.frame_count;
  data.frames.resize(static_cast<std::size_t>(F));
  parallel_for(static_cast<std::size_t>(F), jobs, [&](std::size_t f) {
    const double u = F == 1 ? 0.0 : static_cast<double>(f) / (F - 1);
    const double s = phantom.length() * (config.path_start + (config.path_end - config.path_start) * u);
    Frame& frame = data.frames[f];
    frame.id = f;
    frame.pose = phantom.camera_pose(s);
    if (phantom.wall(frame.pose.translation) > -0.05 * config.base_radius) {
      throw std::runtime_error("phantom: camera of frame " + frame_name(f) + " is not inside the tube");
    }
    frame.rgb = Image(K.width, K.height, 3);
    frame.depth = Image(K.width, K.height, 1);
    for (int y = 0; y < K.height; ++y) {
      for (int x = 0; x < K.width; ++x) {
        const PixelCoord px = pixel_center(x, y);
        const Vec3 dir = frame.pose.rotation.rotate(pixel_bearing(px, K));
        const auto t = phantom.intersect(frame.pose.translation, dir);
        if (!t) throw std::runtime_error("phantom: ray escaped the tube in frame " + frame_name(f));
        const auto rgb = phantom.texture(frame.pose.translation + *t * dir);
        for (int ch = 0; ch < 3; ++ch) frame.rgb.at(x, y, ch) = rgb[ch];
        frame.depth.at(x, y) = *t / ray_length_per_depth(px, K);
      }
    }
    frame.rgb = quantize_8bit(frame.rgb);
    frame.depth = quantize_f32(frame.depth);
  });
  return data;
}

AnalyticField phantom_density_field(const TubePhantom& phantom, double sigma) {
  return [&phantom, sigma](const Vec3& x, const Vec3&) {
    FieldSample s;
    s.density = phantom.wall(x) >= 0.0 ? sigma : 0.0;
    s.rgb = phantom.texture(x);
    return s;
  };
}

// --- I/O ---------------------------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  const auto& K = data.intrinsics;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : data.frames) {
    const std::string name = frame_name(f.id);
    write_png_rgb(dir / "rgb" / (name + ".png"), f.rgb);
    write_pfm(dir / "depth" / (name + ".pfm"), f.depth);
    const Mat4 m = f.pose.to_matrix();
    std::vector<double> c2w;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) c2w.push_back(m(r, c));
    }
    const auto& q = f.pose.rotation;
    frames.push_back({{"id", f.id},
                      {"c2w", c2w},
                      {"quaternion", {q.w(), q.x(), q.y(), q.z()}},
                      {"translation", {f.pose.translation.x(), f.pose.translation.y(), f.pose.translation.z()}},
                      {"rgb", "rgb/" + name + ".png"},
                      {"depth", "depth/" + name + ".pfm"}});
  }
  const nlohmann::json doc = {
      {"format", "tubenerf-dataset"},
      {"version", 1},
      {"intrinsics",
       {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}}},
      {"frames", frames}};
  std::ofstream(dir / "poses.json") << doc.dump(2) << '\n';
  if (!data.provenance.is_null()) std::ofstream(dir / "phantom.json") << data.provenance.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path poses_path = dir / "poses.json";
  std::ifstream in(poses_path);
  if (!in) throw std::runtime_error("cannot open " + poses_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt " + poses_path.string() + ": " + e.what());
  }
  Dataset data;
  try {
    const auto& k = doc.at("intrinsics");
    data.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(),  k.at("cx").get<double>(),
                       k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    data.intrinsics.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error("bad intrinsics in " + poses_path.string() + ": " + e.what());
  }
  const double depth_scale = doc.value("depth_scale", 0.001);
  const auto& entries = doc.at("frames");
  std::set<std::size_t> ids;
  for (const auto& e : entries) {
    Frame f;
    f.id = e.at("id").get<std::size_t>();
    if (!ids.insert(f.id).second) throw std::runtime_error("duplicate frame id " + std::to_string(f.id));
    if (e.contains("quaternion") && e.contains("translation")) {
      const auto q = e.at("quaternion").get<std::vector<double>>();
      const auto t = e.at("translation").get<std::vector<double>>();
      if (q.size() != 4 || t.size() != 3) throw std::runtime_error("bad pose for frame " + frame_name(f.id));
      f.pose.rotation = Quaternion(q[0], q[1], q[2], q[3]);
      f.pose.translation = Vec3(t[0], t[1], t[2]);
    } else {
      const auto v = e.at("c2w").get<std::vector<double>>();
      if (v.size() != 16) throw std::runtime_error("c2w of frame " + frame_name(f.id) + " needs 16 values");
      Mat4 m;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
      }
      f.pose = Pose::from_matrix(m);
    }
    const fs::path rgb_path = dir / e.value("rgb", "rgb/" + frame_name(f.id) + ".png");
    const fs::path depth_path = dir / e.value("depth", "depth/" + frame_name(f.id) + ".pfm");
    for (const auto& p : {rgb_path, depth_path}) {
      if (!fs::exists(p)) throw std::runtime_error("missing file " + p.string());
    }
    f.rgb = read_png_rgb(rgb_path);
    f.depth = depth_path.extension() == ".png" ? read_png16_depth(depth_path, depth_scale) : read_pfm(depth_path);
    const auto& K = data.intrinsics;
    if (f.rgb.width() != K.width || f.rgb.height() != K.height || f.depth.width() != K.width ||
        f.depth.height() != K.height) {
      throw std::runtime_error("image size of frame " + frame_name(f.id) + " does not match intrinsics");
    }
    data.frames.push_back(std::move(f));
  }
  std::size_t images = 0;
  if (fs::is_directory(dir / "rgb")) {
    for (const auto& e : fs::directory_iterator(dir / "rgb")) {
      if (e.path().extension() == ".png") ++images;
    }
  }
  if (images != data.frames.size()) {
    throw std::runtime_error(poses_path.string() + " lists " + std::to_string(data.frames.size()) +
                             " poses but rgb/ holds " + std::to_string(images) + " images");
  }
  std::sort(data.frames.begin(), data.frames.end(), [](const Frame& a, const Frame& b) { return a.id < b.id; });
  if (fs::exists(dir / "phantom.json")) data.provenance = nlohmann::json::parse(std::ifstream(dir / "phantom.json"));
  return data;
}

// --- split -------------------------------------------------------------------

void SplitSpec::validate() const {
  if (test_every < 2) throw std::invalid_argument("SplitSpec: test_every must be >= 2");
  if (offset < 0 || offset >= test_every) throw std::invalid_argument("SplitSpec: offset must be in [0, test_every)");
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"test_every", s.test_every}, {"offset", s.offset}, {"sparse", s.sparse}, {"test_indices", s.test_indices}};
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  s.test_every = j.value("test_every", s.test_every);
  s.offset = j.value("offset", s.offset);
  s.sparse = j.value("sparse", s.sparse);
  s.test_indices = j.value("test_indices", s.test_indices);
}

Split split(std::size_t frame_count, const SplitSpec& spec) {
  spec.validate();
  Split out;
  if (!spec.test_indices.empty()) {
    std::vector<std::uint8_t> is_test(frame_count, 0);
    for (const auto i : spec.test_indices) {
      if (i >= frame_count) throw std::out_of_range("split: test index " + std::to_string(i) + " out of range");
      if (is_test[i]) throw std::invalid_argument("split: duplicate test index " + std::to_string(i));
      is_test[i] = 1;
    }
    for (std::size_t i = 0; i < frame_count; ++i) (is_test[i] ? out.test : out.train).push_back(i);
    return out;
  }
  if (frame_count < static_cast<std::size_t>(spec.test_every)) {
    throw std::invalid_argument("split: need at least test_every frames");
  }
  for (std::size_t i = 0; i < frame_count; ++i) {
    const bool marked = i % static_cast<std::size_t>(spec.test_every) == static_cast<std::size_t>(spec.offset);
    (marked != spec.sparse ? out.test : out.train).push_back(i);
  }
  return out;
}

}  // namespace tubenerf
