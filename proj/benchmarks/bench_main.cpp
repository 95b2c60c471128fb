#include "tubenerf/dataset.hpp"
#include "tubenerf/densify.hpp"
#include "tubenerf/field.hpp"
#include "tubenerf/renderer.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace tubenerf;

namespace {

FieldConfig bench_field() {
  FieldConfig c;
  c.hidden = 64;
  c.trunk_layers = 3;
  c.color_hidden = 32;
  c.visibility_hidden = 32;
  c.encoding.position_bands = 6;
  return c;
}

std::vector<Vec3> points(std::size_t n) {
  Rng rng(1);
  std::vector<Vec3> p(n);
  for (auto& x : p) x = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  return p;
}

TubePhantomConfig small_config() {
  TubePhantomConfig c = TubePhantomConfig::preset_named("curved-tube");
  c.frame_count = 8;
  c.width = 64;
  c.height = 64;
  return c;
}

std::vector<Ray> frame_rays(const Pose& pose, const CameraIntrinsics& K, double near, double far) {
  std::vector<PixelCoord> px;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) px.push_back(pixel_center(x, y));
  return generate_rays(pose, K, px, near, far);
}

const Dataset& small_phantom() {
  static const Dataset d = generate_phantom(small_config());
  return d;
}

void BM_FieldForwardBackward(benchmark::State& state) {
  const int stages = static_cast<int>(state.range(1));
  MultiLevelField field(bench_field(), stages);
  const auto pos = points(static_cast<std::size_t>(state.range(0)));
  std::vector<Vec3> dirs(pos.size(), Vec3::UnitZ());
  for (auto _ : state) {
    Tape tape;
    const auto out = field.forward(tape, pos, dirs, stages);
    Var loss = ad::add(ad::sum(out.density), ad::sum(out.color));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FieldForwardBackward)->Args({6144, 1})->Args({6144, 3})->Unit(benchmark::kMillisecond);

void BM_FieldQuery(benchmark::State& state) {
  const MultiLevelField field(bench_field(), 3);
  const auto pos = points(256);
  for (auto _ : state) {
    for (const auto& p : pos) benchmark::DoNotOptimize(field.query(p, Vec3::UnitZ(), 3).density);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FieldQuery);

void BM_RenderRayAnalytic(benchmark::State& state) {
  const TubePhantom phantom(small_config());
  const AnalyticField f = phantom_density_field(phantom, 60.0);
  const Frame& fr = small_phantom().frames[3];
  RenderConfig rc;
  rc.samples_per_ray = static_cast<int>(state.range(0));
  rc.far = 4.0;
  const auto rays = frame_rays(fr.pose, small_phantom().intrinsics, rc.near, rc.far);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_ray(f, rays[i++ % rays.size()], rc).depth);
  }
}
BENCHMARK(BM_RenderRayAnalytic)->Arg(64)->Arg(256);

void BM_RenderRaysBatch(benchmark::State& state) {
  MultiLevelField field(bench_field(), 1);
  const Dataset& d = small_phantom();
  RenderConfig rc;
  rc.samples_per_ray = 32;
  rc.far = 4.0;
  auto rays = frame_rays(d.frames[2].pose, d.intrinsics, rc.near, rc.far);
  rays.resize(192);
  for (auto _ : state) {
    Tape tape;
    const RayBatchRender r = render_rays(tape, field, rays, rc, 1);
    Var loss = ad::sum(r.composite.rgb);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_RenderRaysBatch)->Unit(benchmark::kMillisecond);

void BM_Warp(benchmark::State& state) {
  const Dataset& d = small_phantom();
  const Frame& a = d.frames[3];
  const Frame& b = d.frames[4];
  for (auto _ : state) {
    const PseudoLabel l = warp(a.rgb, a.depth, a.pose, b.pose, d.intrinsics);
    benchmark::DoNotOptimize(l.valid.data());
  }
  state.SetItemsProcessed(state.iterations() * d.intrinsics.pixel_count());
}
BENCHMARK(BM_Warp);

void BM_SpinPool(benchmark::State& state) {
  const Dataset& d = small_phantom();
  for (auto _ : state) {
    const RayPool pool = build_spin_pool(d.frames[3], d.intrinsics);
    benchmark::DoNotOptimize(pool.size());
  }
}
BENCHMARK(BM_SpinPool)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
