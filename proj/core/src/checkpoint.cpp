#include "tubenerf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tubenerf {

namespace {

constexpr char kMagic[8] = {'T', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = (out << 8) | (v & 0xff);
      v >>= 8;
    }
    return out;
  }
}

}  // namespace

void write_u64_le(std::ostream& out, std::uint64_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64_le(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("unexpected end of file");
  return to_little(v);
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  for (double d : values) {
    auto bits = to_little(std::bit_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
}

void read_f64_le(std::istream& in, std::span<double> values) {
  for (double& d : values) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
    d = std::bit_cast<double>(to_little(bits));
  }
  if (!in) throw std::runtime_error("unexpected end of file");
}

void write_f32_le(std::ostream& out, std::span<const float> values) {
  for (float f : values) {
    auto bits = to_little(std::bit_cast<std::uint32_t>(f));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
}

void read_f32_le(std::istream& in, std::span<float> values) {
  for (float& f : values) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
    f = std::bit_cast<float>(to_little(bits));
  }
  if (!in) throw std::runtime_error("unexpected end of file");
}

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::out_of_range("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header = checkpoint.header;
  header["format_version"] = kCheckpointFormatVersion;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : checkpoint.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = entries;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& entry : checkpoint.tensors) write_f64_le(out, entry.second.values());
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a tubenerf checkpoint: " + path.string());
  }
  const std::uint64_t n = read_u64_le(in);
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());

  Checkpoint ck;
  ck.header = nlohmann::json::parse(text);
  if (ck.header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version in " + path.string());
  }
  for (const auto& e : ck.header.at("tensors")) {
    Tensor t(e.at("shape").get<std::vector<std::size_t>>());
    read_f64_le(in, t.values());
    ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  ck.header.erase("tensors");
  return ck;
}

void append_parameters(Checkpoint& checkpoint, const ParameterSet& params, const std::string& prefix) {
  for (const auto& p : params) checkpoint.tensors.emplace_back(prefix + p.name, p.value);
}

void load_parameters(const Checkpoint& checkpoint, ParameterSet& params, const std::string& prefix) {
  for (auto& p : params) {
    const Tensor& t = checkpoint.at(prefix + p.name);
    if (t.shape() != p.value.shape()) {
      throw std::runtime_error("checkpoint tensor " + p.name + " has shape " + shape_string(t.shape()) +
                               ", expected " + shape_string(p.value.shape()));
    }
    p.value = t;
  }
}

}  // namespace tubenerf
