#include "tubenerf/features.hpp"

#include "tubenerf/checkpoint.hpp"
#include "tubenerf/random.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tubenerf {

namespace {

constexpr int kKernel = 3;
constexpr int kPad = 1;

std::vector<int> layer_strides(int stride) {
  if (stride < 1 || stride > 64 || (stride & (stride - 1)) != 0) {
    throw std::invalid_argument("ExtractorSpec: stride must be a power of two in [1, 64], got " +
                                std::to_string(stride));
  }
  std::vector<int> s{1, 1, 1};
  int i = 0;
  for (int rest = stride; rest > 1; rest /= 2) {
    s[i % 3] *= 2;
    ++i;
  }
  return s;
}

}  // namespace

Tensor FeatureMap::tensor() const {
  return Tensor({static_cast<std::size_t>(height) * width, static_cast<std::size_t>(channels)}, data);
}

FeatureExtractor::FeatureExtractor(ExtractorSpec spec) : spec_(std::move(spec)) {
  if (spec_.channels < 1) throw std::invalid_argument("ExtractorSpec: channels must be positive");
  const auto strides = layer_strides(spec_.stride);
  const int widths[4] = {3, 16, 32, spec_.channels};
  Rng rng(spec_.seed);
  for (int l = 0; l < 3; ++l) {
    const std::size_t fan_in = static_cast<std::size_t>(kKernel * kKernel * widths[l]);
    const std::size_t fan_out = static_cast<std::size_t>(widths[l + 1]);
    Layer layer;
    layer.weight = Tensor::matrix(fan_in, fan_out);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : layer.weight.values()) v = uniform(rng, -bound, bound);
    layer.bias = Tensor::matrix(1, fan_out);
    for (double& v : layer.bias.values()) v = uniform(rng, -0.1, 0.1);
    layer.stride = strides[l];
    layers_.push_back(std::move(layer));
  }
}

int FeatureExtractor::output_size(int input) const {
  int n = input;
  for (const auto& l : layers_) n = ad::conv_output_size(n, kKernel, l.stride, kPad);
  return n;
}

Var FeatureExtractor::extract(Tape& tape, Var image, int height, int width) const {
  if (image.rows() != static_cast<std::size_t>(height) * width || image.cols() != 3) {
    throw std::invalid_argument("FeatureExtractor: expected [" + std::to_string(height * width) +
                                ", 3] image, got " + shape_string(image.shape()));
  }
  if (height < spec_.stride || width < spec_.stride) {
    throw std::invalid_argument("FeatureExtractor: image smaller than the stride");
  }
  Var x = image;
  int h = height;
  int w = width;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Var cols = ad::im2col(x, h, w, kKernel, layer.stride, kPad);
    x = ad::linear(cols, tape.constant(layer.weight), tape.constant(layer.bias));
    if (l + 1 < layers_.size()) x = ad::relu(x);
    h = ad::conv_output_size(h, kKernel, layer.stride, kPad);
    w = ad::conv_output_size(w, kKernel, layer.stride, kPad);
  }
  return ad::l2_normalize_rows(x);
}

FeatureMap FeatureExtractor::extract(const Image& rgb, const std::string& frame_id) const {
  if (spec_.kind == ExtractorKind::external_precomputed) {
    return load_external_features(spec_.external_dir, frame_id, output_size(rgb.height()),
                                  output_size(rgb.width()));
  }
  if (rgb.channels() != 3) throw std::invalid_argument("FeatureExtractor: RGB image required");
  Tape tape(false);
  Var f = extract(tape, tape.constant(image_tensor(rgb)), rgb.height(), rgb.width());
  FeatureMap map;
  map.height = output_size(rgb.height());
  map.width = output_size(rgb.width());
  map.channels = spec_.channels;
  map.stride = spec_.stride;
  map.frame_id = frame_id;
  map.data = f.value().storage();
  return map;
}

Tensor image_tensor(const Image& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("image_tensor: RGB image required");
  return Tensor({rgb.pixel_count(), 3}, rgb.data());
}

void write_feature_file(const std::filesystem::path& path, const FeatureMap& map) {
  if (map.data.size() != static_cast<std::size_t>(map.height) * map.width * map.channels) {
    throw std::invalid_argument("write_feature_file: data size does not match dims");
  }
  const nlohmann::json header = {{"h", map.height},
                                 {"w", map.width},
                                 {"c", map.channels},
                                 {"stride", map.stride},
                                 {"frame_id", map.frame_id}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> values(map.data.begin(), map.data.end());
  write_f32_le(out, values);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureMap read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file " + path.string());
  const std::uint64_t len = read_u64_le(in);
  if (len > (1u << 20)) throw std::runtime_error("feature file header too large: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated feature file " + path.string());
  const auto header = nlohmann::json::parse(text);
  FeatureMap map;
  map.height = header.at("h").get<int>();
  map.width = header.at("w").get<int>();
  map.channels = header.at("c").get<int>();
  map.stride = header.at("stride").get<int>();
  map.frame_id = header.at("frame_id").get<std::string>();
  if (map.height < 1 || map.width < 1 || map.channels < 1) {
    throw std::runtime_error("bad feature dims in " + path.string());
  }
  std::vector<float> values(static_cast<std::size_t>(map.height) * map.width * map.channels);
  read_f32_le(in, values);
  if (!in) throw std::runtime_error("truncated feature payload in " + path.string());
  map.data.assign(values.begin(), values.end());
  return map;
}

FeatureMap load_external_features(const std::filesystem::path& dir, const std::string& frame_id,
                                  int expected_height, int expected_width) {
  const auto path = dir / (frame_id + ".feat");
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("external features missing for frame " + frame_id + " (" + path.string() + ")");
  }
  FeatureMap map = read_feature_file(path);
  if (map.height != expected_height || map.width != expected_width) {
    throw std::runtime_error("external features for frame " + frame_id + " are " + std::to_string(map.height) +
                             "x" + std::to_string(map.width) + ", expected " + std::to_string(expected_height) +
                             "x" + std::to_string(expected_width));
  }
  return map;
}

}  // namespace tubenerf
