#include "tubenerf/renderer.hpp"

#include "tubenerf/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tubenerf {

void RenderConfig::validate() const {
  if (samples_per_ray < 2) throw std::invalid_argument("RenderConfig: samples_per_ray must be >= 2");
  if (!(near >= 0.0) || !(far > near)) throw std::invalid_argument("RenderConfig: need 0 <= near < far");
  if (chunk_rays < 1) throw std::invalid_argument("RenderConfig: chunk_rays must be positive");
}

std::array<double, 3> RenderConfig::effective_background() const {
  return white_background ? std::array<double, 3>{1.0, 1.0, 1.0} : background;
}

void to_json(nlohmann::json& j, const RenderConfig& c) {
  j = {{"samples_per_ray", c.samples_per_ray},
       {"stratified_jitter", c.stratified_jitter},
       {"background", c.background},
       {"white_background", c.white_background},
       {"near", c.near},
       {"far", c.far},
       {"chunk_rays", c.chunk_rays}};
}

void from_json(const nlohmann::json& j, RenderConfig& c) {
  c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
  c.stratified_jitter = j.value("stratified_jitter", c.stratified_jitter);
  c.background = j.value("background", c.background);
  c.white_background = j.value("white_background", c.white_background);
  c.near = j.value("near", c.near);
  c.far = j.value("far", c.far);
  c.chunk_rays = j.value("chunk_rays", c.chunk_rays);
}

void sample_along_ray(const Ray& ray, int samples, Rng* jitter, double* tvals, double* deltas) {
  const double h = (ray.far - ray.near) / samples;
  for (int j = 0; j < samples; ++j) {
    const double u = jitter ? uniform01(*jitter) : 0.5;
    tvals[j] = ray.near + (j + u) * h;
  }
  for (int j = 0; j + 1 < samples; ++j) deltas[j] = tvals[j + 1] - tvals[j];
  deltas[samples - 1] = ray.far - tvals[samples - 1];
}

namespace {

RenderOutput unpack_single(const CompositeResult& res, const Tensor& tvals) {
  RenderOutput out;
  for (int c = 0; c < 3; ++c) out.color[c] = res.rgb.value()[c];
  out.depth = res.depth.value()[0];
  out.accumulation = res.acc.value()[0];
  out.tvals = tvals.storage();
  out.transmittance = res.transmittance.storage();
  out.weights = res.weights.storage();
  out.final_transmittance = res.final_transmittance[0];
  return out;
}

struct SampleGrid {
  Tensor tvals;
  Tensor deltas;
  std::vector<Vec3> positions;
  std::vector<Vec3> directions;
};

SampleGrid make_grid(std::span<const Ray> rays, int S, Rng* jitter) {
  SampleGrid g;
  const std::size_t R = rays.size();
  g.tvals = Tensor::matrix(R, S);
  g.deltas = Tensor::matrix(R, S);
  g.positions.resize(R * S);
  g.directions.resize(R * S);
  for (std::size_t r = 0; r < R; ++r) {
    sample_along_ray(rays[r], S, jitter, g.tvals.data() + r * S, g.deltas.data() + r * S);
    for (int j = 0; j < S; ++j) {
      g.positions[r * S + j] = rays[r].origin + g.tvals[r * S + j] * rays[r].direction;
      g.directions[r * S + j] = rays[r].direction;
    }
  }
  return g;
}

// Chunked image rendering shared by learned and analytic fields. `chunk`
// renders a span of rays and writes (r, g, b, ray depth, acc) per ray.
template <typename ChunkFn>
RenderedImage render_raster(const Pose& pose, const CameraIntrinsics& K, const RenderConfig& config, int jobs,
                            ChunkFn&& chunk) {
  K.validate();
  config.validate();
  const std::size_t n = K.pixel_count();
  std::vector<PixelCoord> pixels(n);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) pixels[static_cast<std::size_t>(y) * K.width + x] = pixel_center(x, y);
  }
  const auto rays = generate_rays(pose, K, pixels, config.near, config.far);
  std::vector<double> packed(n * 5);
  const std::size_t per_chunk = static_cast<std::size_t>(config.chunk_rays);
  const std::size_t chunks = (n + per_chunk - 1) / per_chunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t begin = c * per_chunk;
    const std::size_t end = std::min(n, begin + per_chunk);
    chunk(std::span<const Ray>(rays.data() + begin, end - begin), packed.data() + begin * 5);
  });
  RenderedImage img{Image(K.width, K.height, 3), Image(K.width, K.height, 1), Image(K.width, K.height, 1)};
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * K.width + x;
      for (int ch = 0; ch < 3; ++ch) img.rgb.at(x, y, ch) = packed[i * 5 + ch];
      img.depth.at(x, y) = packed[i * 5 + 3] / ray_length_per_depth(pixels[i], K);
      img.accumulation.at(x, y) = packed[i * 5 + 4];
    }
  }
  return img;
}

void write_packed(const CompositeResult& res, std::size_t R, double* out) {
  for (std::size_t r = 0; r < R; ++r) {
    for (int ch = 0; ch < 3; ++ch) out[r * 5 + ch] = res.rgb.value()[r * 3 + ch];
    out[r * 5 + 3] = res.depth.value()[r];
    out[r * 5 + 4] = res.acc.value()[r];
  }
}

CompositeResult composite_analytic(Tape& tape, const AnalyticField& field, const SampleGrid& g, std::size_t R,
                                   int S, const std::array<double, 3>& bg) {
  Tensor sigma = Tensor::matrix(R, S);
  Tensor color = Tensor::matrix(R, 3 * static_cast<std::size_t>(S));
  for (std::size_t k = 0; k < R * S; ++k) {
    const FieldSample s = field(g.positions[k], g.directions[k]);
    sigma[k] = s.density;
    for (int ch = 0; ch < 3; ++ch) color[k * 3 + ch] = s.rgb[ch];
  }
  return ad::composite(tape.constant(std::move(sigma)), tape.constant(std::move(color)), g.tvals, g.deltas,
                       bg.data(), true);
}

}  // namespace

RenderOutput render_ray(const AnalyticField& field, const Ray& ray, const RenderConfig& config, Rng* jitter) {
  config.validate();
  Tape tape(false);
  const Ray rays[1] = {ray};
  const SampleGrid g = make_grid(rays, config.samples_per_ray, jitter);
  const auto res = composite_analytic(tape, field, g, 1, config.samples_per_ray, config.effective_background());
  return unpack_single(res, g.tvals);
}

RenderOutput render_ray(const MultiLevelField& field, const Ray& ray, const RenderConfig& config,
                        int active_stages, Rng* jitter) {
  Tape tape(false);
  const Ray rays[1] = {ray};
  const auto r = render_rays(tape, const_cast<MultiLevelField&>(field), rays, config, active_stages, jitter);
  return unpack_single(r.composite, r.tvals);
}

RayBatchRender render_rays(Tape& tape, MultiLevelField& field, std::span<const Ray> rays,
                           const RenderConfig& config, int active_stages, Rng* jitter) {
  config.validate();
  if (rays.empty()) throw std::invalid_argument("render_rays: empty ray batch");
  const int S = config.samples_per_ray;
  const std::size_t R = rays.size();
  SampleGrid g = make_grid(rays, S, jitter);
  const auto out = field.forward(tape, g.positions, g.directions, active_stages);
  Var sigma = ad::reshape(ad::scale(out.density, field.config().density_scale), {R, static_cast<std::size_t>(S)});
  Var color = ad::reshape(out.color, {R, 3 * static_cast<std::size_t>(S)});
  const auto bg = config.effective_background();
  RayBatchRender r;
  r.composite = ad::composite(sigma, color, g.tvals, g.deltas, bg.data(), true);
  r.density = out.density;
  r.positions = std::move(g.positions);
  r.directions = std::move(g.directions);
  r.tvals = std::move(g.tvals);
  r.deltas = std::move(g.deltas);
  return r;
}

RenderedImage render_image(const MultiLevelField& field, const Pose& pose, const CameraIntrinsics& K,
                           const RenderConfig& config, int active_stages, int jobs) {
  RenderConfig cfg = config;
  cfg.stratified_jitter = false;
  return render_raster(pose, K, cfg, jobs, [&](std::span<const Ray> rays, double* out) {
    Tape tape(false);
    const auto r = render_rays(tape, const_cast<MultiLevelField&>(field), rays, cfg, active_stages, nullptr);
    write_packed(r.composite, rays.size(), out);
  });
}

RenderedImage render_image(const AnalyticField& field, const Pose& pose, const CameraIntrinsics& K,
                           const RenderConfig& config, int jobs) {
  return render_raster(pose, K, config, jobs, [&](std::span<const Ray> rays, double* out) {
    Tape tape(false);
    const SampleGrid g = make_grid(rays, config.samples_per_ray, nullptr);
    const auto res =
        composite_analytic(tape, field, g, rays.size(), config.samples_per_ray, config.effective_background());
    write_packed(res, rays.size(), out);
  });
}

namespace {

double alpha_of(double T, double w) { return T > 1e-300 ? std::clamp(w / T, 0.0, 1.0) : 1.0; }

}  // namespace

std::vector<double> ray_transmittance_targets(const RenderOutput& output, TransTarget target) {
  if (target == TransTarget::transmittance) return output.transmittance;
  std::vector<double> a(output.weights.size());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = alpha_of(output.transmittance[j], output.weights[j]);
  return a;
}

Tensor batch_transmittance_targets(const RayBatchRender& render, TransTarget target) {
  const Tensor& T = render.composite.transmittance;
  Tensor out = Tensor::matrix(T.size(), 1);
  for (std::size_t k = 0; k < T.size(); ++k) {
    out[k] = target == TransTarget::transmittance ? T[k] : alpha_of(T[k], render.composite.weights[k]);
  }
  return out;
}

}  // namespace tubenerf
