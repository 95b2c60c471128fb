#include "test_support.hpp"

#include "tubenerf/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace tubenerf;
using namespace tubenerf::testing;

namespace {

Image pattern(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        // Blocky binary pattern: no mid-gray values.
        const bool on = ((x / 4 + y / 4 + c) % 2 == 0) != (uniform01(rng) < 0.1);
        img.at(x, y, c) = on ? 0.9 : 0.1;
      }
  return img;
}

Image negative(const Image& a) {
  Image b = a;
  for (double& v : b.data()) v = 1.0 - v;
  return b;
}

}  // namespace

TEST(Psnr, Values) {
  const Image a = pattern(16, 16, 1);
  EXPECT_EQ(psnr(a, a), 120.0);
  Image b = a;
  for (double& v : b.data()) v += 0.1;
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_NEAR(psnr(b, a), psnr(a, b), 1e-15);
  EXPECT_THROW(psnr(a, pattern(16, 8, 1)), std::invalid_argument);
}

TEST(Ssim, IdenticalAndNegative) {
  const Image a = pattern(64, 64, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  EXPECT_LT(ssim(a, negative(a)), 0.2);
  const Image b = pattern(64, 64, 3);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 1.0);
}

TEST(Ssim, ConstantImagesBrightnessTerm) {
  // With zero variance only the luminance term remains: (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const Image a(32, 32, 3, 0.2);
  const Image b(32, 32, 3, 0.6);
  const double c1 = 0.01 * 0.01;
  EXPECT_NEAR(ssim(a, b), (2 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1), 1e-9);
}

TEST(MsSsim, IdenticalNegativeAndScaleReduction) {
  const Image a = pattern(192, 192, 4);
  const MsSsimResult same = ms_ssim(a, a);
  EXPECT_NEAR(same.value, 1.0, 1e-9);
  EXPECT_EQ(same.scales_used, 5);
  EXPECT_TRUE(same.warning.empty());
  EXPECT_LT(ms_ssim(a, negative(a)).value, 0.2);

  const Image small = pattern(48, 48, 5);
  const MsSsimResult reduced = ms_ssim(small, pattern(48, 48, 6));
  EXPECT_LT(reduced.scales_used, 5);
  EXPECT_GE(reduced.scales_used, 1);
  EXPECT_FALSE(reduced.warning.empty());
}

TEST(DepthMse, Values) {
  const Image a(8, 8, 1, 2.0);
  EXPECT_EQ(depth_mse(a, a), 0.0);
  const Image b(8, 8, 1, 2.3);
  EXPECT_NEAR(depth_mse(a, b), 0.09, 1e-12);
  Mask m(64, 0);
  m[5] = 1;
  EXPECT_NEAR(depth_mse(a, b, m), 0.09, 1e-12);
  EXPECT_THROW(depth_mse(a, b, Mask(64, 0)), std::invalid_argument);
}

TEST(Report, AggregatesAndSerializes) {
  EvalReport r;
  const Image a = pattern(32, 32, 7);
  const Image z(32, 32, 1, 1.0);
  r.frames.push_back(evaluate_frame(2, a, a, z, z));
  Image b = a;
  for (double& v : b.data()) v += 0.1;
  r.frames.push_back(evaluate_frame(6, b, a, z, Image(32, 32, 1, 1.3)));
  r.finalize();
  EXPECT_NEAR(r.mean_psnr, 70.0, 1e-9);
  EXPECT_NEAR(r.mean_depth_mse, 0.045, 1e-12);
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("frames").size(), 2u);
  const auto dir = scratch_dir("report");
  write_report_csv(dir / "r.csv", r);
  std::ifstream in(dir / "r.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_GE(lines, 3);
}

TEST(ConfigHash, StableAndSensitive) {
  const nlohmann::json a = {{"x", 1}, {"y", {1, 2}}};
  const nlohmann::json b = nlohmann::json::parse(R"({"y":[1,2],"x":1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash({{"x", 2}, {"y", {1, 2}}}));
}
