#pragma once

// Dense semantic features for the feature-matching loss. The builtin
// extractor is a fixed, seeded, untrained strided convolution stack; features
// produced elsewhere (any pretrained backbone) can be supplied as files.

#include "tubenerf/autodiff.hpp"
#include "tubenerf/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tubenerf {

struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;
  std::string frame_id;
  std::vector<double> data;  // [height * width, channels], row-major

  /// As a [height * width, channels] tensor.
  Tensor tensor() const;
};

enum class ExtractorKind { builtin_random_conv, external_precomputed };

struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::builtin_random_conv;
  std::uint64_t seed = 0;
  int channels = 64;
  /// Power of two in [1, 64]; spread over the three layers as factors of 2.
  int stride = 8;
  /// Directory of `<frame id>.feat` files for external features.
  std::filesystem::path external_dir;
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorSpec spec);

  const ExtractorSpec& spec() const { return spec_; }

  /// Builtin features of an RGB image, or the external file for `frame_id`
  /// when the spec names external features.
  FeatureMap extract(const Image& rgb, const std::string& frame_id = "") const;

  /// Differentiable builtin extraction of an image stored as [height * width, 3].
  /// Returns [Ho * Wo, channels].
  Var extract(Tape& tape, Var image, int height, int width) const;

  /// Output grid size for an input size.
  int output_size(int input) const;

 private:
  struct Layer {
    Tensor weight;  // [9 * in, out]
    Tensor bias;    // [1, out]
    int stride = 1;
  };

  ExtractorSpec spec_;
  std::vector<Layer> layers_;
};

/// External feature file: uint64 LE header length, JSON header
/// {"h", "w", "c", "stride", "frame_id"}, then h*w*c little-endian float32.
void write_feature_file(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_file(const std::filesystem::path& path);
/// Reads `<dir>/<frame_id>.feat` and checks its size against the expected grid.
FeatureMap load_external_features(const std::filesystem::path& dir, const std::string& frame_id,
                                  int expected_height, int expected_width);

/// Image as a [height * width, 3] tensor.
Tensor image_tensor(const Image& rgb);

}  // namespace tubenerf
