#pragma once

#include "tubenerf/image.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tubenerf {

/// PSNR in dB of images in [0, 1]; 120 dB when MSE < 1e-12.
double psnr(const Image& a, const Image& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.
double ssim(const Image& a, const Image& b);

struct MsSsimResult {
  double value = 0.0;
  int scales_used = 0;
  /// Non-empty when the image was too small for the requested scale count.
  std::string warning;
};

/// Multi-scale SSIM with the canonical five scale weights (renormalized when
/// fewer scales fit). Per-scale terms are clamped at 0 before the weighted
/// product, so the value lies in [0, 1].
MsSsimResult ms_ssim(const Image& a, const Image& b, int scales = 5);

/// Masked mean squared depth error. An empty mask means "all pixels".
/// Throws when no pixel is selected.
double depth_mse(const Image& a, const Image& b, const Mask& mask = {});

struct FrameMetrics {
  std::size_t frame_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double depth_mse = 0.0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_ms_ssim = 0.0;
  double mean_depth_mse = 0.0;
  std::string config_hash;
  std::vector<std::string> warnings;

  /// Recomputes the means from `frames`.
  void finalize();
};

FrameMetrics evaluate_frame(std::size_t frame_id, const Image& rgb, const Image& gt_rgb, const Image& depth,
                            const Image& gt_depth, std::vector<std::string>* warnings = nullptr);

nlohmann::json report_to_json(const EvalReport& r);
void write_report_csv(const std::filesystem::path& path, const EvalReport& r);

/// FNV-1a 64-bit hash of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace tubenerf
