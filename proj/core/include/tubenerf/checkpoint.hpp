#pragma once

// Checkpoint container:
//   bytes 0..7   ASCII magic "TNCKPT01"
//   bytes 8..15  little-endian uint64 length N of the JSON header
//   N bytes      UTF-8 JSON header
//   payload      little-endian float64 values of every tensor, back to back
// The header lists {"name", "shape", "offset"} per tensor (offset in values),
// plus "format_version" and whatever the caller adds (stage topology, config).

#include "tubenerf/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tubenerf {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Adds every parameter of `params` (in order) to the checkpoint.
void append_parameters(Checkpoint& checkpoint, const ParameterSet& params, const std::string& prefix = "");
/// Copies checkpoint tensors into the existing parameters; throws on a missing
/// name or shape mismatch.
void load_parameters(const Checkpoint& checkpoint, ParameterSet& params, const std::string& prefix = "");

// Little-endian helpers shared with the feature-file reader.
void write_u64_le(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64_le(std::istream& in);
void write_f64_le(std::ostream& out, std::span<const double> values);
void read_f64_le(std::istream& in, std::span<double> values);
void write_f32_le(std::ostream& out, std::span<const float> values);
void read_f32_le(std::istream& in, std::span<float> values);

}  // namespace tubenerf
