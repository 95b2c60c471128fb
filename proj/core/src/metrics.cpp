#include "tubenerf/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace tubenerf {

namespace {

void require_same(const char* what, const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.empty()) {
    throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.width()) + "x" +
                                std::to_string(a.height()) + "x" + std::to_string(a.channels()) + " vs " +
                                std::to_string(b.width()) + "x" + std::to_string(b.height()) + "x" +
                                std::to_string(b.channels()) + ")");
  }
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::array<double, kWindow> gaussian_kernel() {
  std::array<double, kWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Single-channel plane.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel(const Image& img, int c) {
  Plane p{img.width(), img.height(), std::vector<double>(img.pixel_count())};
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) p.v[static_cast<std::size_t>(y) * p.w + x] = img.at(x, y, c);
  }
  return p;
}

// Separable "valid" Gaussian filtering.
Plane filter(const Plane& in) {
  static const auto k = gaussian_kernel();
  const int ow = in.w - kWindow + 1;
  const int oh = in.h - kWindow + 1;
  Plane tmp{ow, in.h, std::vector<double>(static_cast<std::size_t>(ow) * in.h)};
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * in.at(x + i, y);
      tmp.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  Plane out{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * tmp.at(x, y + i);
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane p = a;
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] *= b.v[i];
  return p;
}

// Mean SSIM and mean contrast-structure term of one channel.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b) {
  if (a.w < kWindow || a.h < kWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const Plane mu_a = filter(a);
  const Plane mu_b = filter(b);
  const Plane aa = filter(product(a, a));
  const Plane bb = filter(product(b, b));
  const Plane ab = filter(product(a, b));
  double s = 0.0;
  double cs = 0.0;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
    const double ma = mu_a.v[i];
    const double mb = mu_b.v[i];
    const double va = aa.v[i] - ma * ma;
    const double vb = bb.v[i] - mb * mb;
    const double cov = ab.v[i] - ma * mb;
    const double c = (2.0 * cov + kC2) / (va + vb + kC2);
    cs += c;
    s += c * (2.0 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
  }
  const double n = static_cast<double>(mu_a.v.size());
  return {s / n, cs / n};
}

Plane downsample(const Plane& in) {
  Plane out{in.w / 2, in.h / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) + in.at(2 * x, 2 * y + 1) +
                  in.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same("psnr", a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data().size());
  if (mse < 1e-12) return 120.0;
  return -10.0 * std::log10(mse);
}

double ssim(const Image& a, const Image& b) {
  require_same("ssim", a, b);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) total += ssim_terms(channel(a, c), channel(b, c)).first;
  return total / a.channels();
}

MsSsimResult ms_ssim(const Image& a, const Image& b, int scales) {
  require_same("ms_ssim", a, b);
  if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim: scales must be in [1, 5]");
  MsSsimResult res;
  const int min_dim = std::min(a.width(), a.height());
  int usable = scales;
  while (usable > 1 && min_dim < (1 << (usable - 1)) * kWindow) --usable;
  if (min_dim < kWindow) throw std::invalid_argument("ms_ssim: image smaller than the 11x11 window");
  if (usable < scales) {
    res.warning = "ms_ssim: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) + " image fits " +
                  std::to_string(usable) + " of " + std::to_string(scales) + " scales";
  }
  res.scales_used = usable;
  double wsum = 0.0;
  for (int i = 0; i < usable; ++i) wsum += kScaleWeights[static_cast<std::size_t>(i)];
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    Plane pa = channel(a, c);
    Plane pb = channel(b, c);
    double value = 1.0;
    for (int i = 0; i < usable; ++i) {
      const auto [s, cs] = ssim_terms(pa, pb);
      const double term = std::max(i + 1 == usable ? s : cs, 0.0);
      value *= std::pow(term, kScaleWeights[static_cast<std::size_t>(i)] / wsum);
      if (i + 1 < usable) {
        pa = downsample(pa);
        pb = downsample(pb);
      }
    }
    total += value;
  }
  res.value = total / a.channels();
  return res;
}

double depth_mse(const Image& a, const Image& b, const Mask& mask) {
  require_same("depth_mse", a, b);
  if (!mask.empty() && mask.size() != a.pixel_count()) {
    throw std::invalid_argument("depth_mse: mask size does not match the image");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (int c = 0; c < a.channels(); ++c) {
      const double d = a.data()[i * a.channels() + c] - b.data()[i * a.channels() + c];
      sum += d * d;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("depth_mse: empty mask");
  return sum / static_cast<double>(n);
}

void EvalReport::finalize() {
  mean_psnr = mean_ssim = mean_ms_ssim = mean_depth_mse = 0.0;
  if (frames.empty()) return;
  for (const auto& f : frames) {
    mean_psnr += f.psnr;
    mean_ssim += f.ssim;
    mean_ms_ssim += f.ms_ssim;
    mean_depth_mse += f.depth_mse;
  }
  const double n = static_cast<double>(frames.size());
  mean_psnr /= n;
  mean_ssim /= n;
  mean_ms_ssim /= n;
  mean_depth_mse /= n;
}

FrameMetrics evaluate_frame(std::size_t frame_id, const Image& rgb, const Image& gt_rgb, const Image& depth,
                            const Image& gt_depth, std::vector<std::string>* warnings) {
  FrameMetrics m;
  m.frame_id = frame_id;
  m.psnr = psnr(rgb, gt_rgb);
  m.ssim = ssim(rgb, gt_rgb);
  const auto ms = ms_ssim(rgb, gt_rgb);
  m.ms_ssim = ms.value;
  if (warnings && !ms.warning.empty() &&
      std::find(warnings->begin(), warnings->end(), ms.warning) == warnings->end()) {
    warnings->push_back(ms.warning);
  }
  Mask valid(gt_depth.pixel_count(), 0);
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = gt_depth.data()[i] > 0.0 ? 1 : 0;
  m.depth_mse = depth_mse(depth, gt_depth, valid);
  return m;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : r.frames) {
    frames.push_back({{"frame_id", f.frame_id},
                      {"psnr", f.psnr},
                      {"ssim", f.ssim},
                      {"ms_ssim", f.ms_ssim},
                      {"depth_mse", f.depth_mse},
                      {"lpips_vgg", nullptr},
                      {"lpips_alex", nullptr}});
  }
  return {{"frame_count", r.frames.size()},
          {"mean",
           {{"psnr", r.mean_psnr},
            {"ssim", r.mean_ssim},
            {"ms_ssim", r.mean_ms_ssim},
            {"depth_mse", r.mean_depth_mse},
            {"lpips_vgg", nullptr},
            {"lpips_alex", nullptr}}},
          {"frames", frames},
          {"config_hash", r.config_hash},
          {"warnings", r.warnings}};
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "frame_id,psnr,ssim,ms_ssim,depth_mse,lpips_vgg,lpips_alex\n";
  char line[256];
  for (const auto& f : r.frames) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,,\n", f.frame_id, f.psnr, f.ssim, f.ms_ssim,
                  f.depth_mse);
    out << line;
  }
  std::snprintf(line, sizeof line, "mean,%.17g,%.17g,%.17g,%.17g,,\n", r.mean_psnr, r.mean_ssim, r.mean_ms_ssim,
                r.mean_depth_mse);
  out << line;
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tubenerf
