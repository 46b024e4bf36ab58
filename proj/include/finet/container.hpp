#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "finet/tensor.hpp"

namespace finet {

// On-disk container format shared by datasets and checkpoints: a
// directory holding manifest.txt plus one raw little-endian float32
// .bin file per tensor. The manifest's first line is a version string;
// the remaining lines are "meta <key> <value>" or
// "tensor <name> f32 <dim0> <dim1> ...".
inline constexpr const char* kDatasetVersion = "finet-synth/1";
inline constexpr const char* kCheckpointVersion = "finet-ckpt/1";
inline constexpr const char* kResultVersion = "finet-result/1";

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedTensors {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::vector<std::pair<std::string, std::string>> meta;

  void add(const std::string& name, Tensor<float> t) { tensors.emplace_back(name, std::move(t)); }
  void set_meta(const std::string& key, const std::string& value) { meta.emplace_back(key, value); }

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  const Tensor<float>& require(const std::string& name) const {
    const Tensor<float>* t = find(name);
    if (!t) throw IoError("container is missing tensor '" + name + "'");
    return *t;
  }

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

namespace detail {

inline bool valid_entry_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.' || c == '-';
    if (!ok) return false;
  }
  return true;
}

inline void write_f32_le(std::ofstream& out, const float* data, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
    buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void read_f32_le(std::ifstream& in, float* data, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError("tensor file truncated");
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(buf[i * 4 + 0]) |
                               (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                               (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                               (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
    std::memcpy(&data[i], &bits, 4);
  }
}

}  // namespace detail

inline void write_container(const std::filesystem::path& dir, const std::string& version,
                            const NamedTensors& contents) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot open manifest for writing: " + (dir / "manifest.txt").string());
  manifest << version << "\n";
  for (const auto& [k, v] : contents.meta) manifest << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : contents.tensors) {
    if (!detail::valid_entry_name(name)) throw IoError("invalid tensor name '" + name + "'");
    manifest << "tensor " << name << " f32";
    for (int d : t.shape()) manifest << " " << d;
    manifest << "\n";
  }
  manifest.close();
  if (!manifest) throw IoError("failed writing manifest in " + dir.string());

  for (const auto& [name, t] : contents.tensors) {
    const auto path = dir / (name + ".bin");
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot open tensor file for writing: " + path.string());
    detail::write_f32_le(bin, t.data(), t.size());
    bin.close();
    if (!bin) throw IoError("failed writing tensor file " + path.string());
  }
}

inline NamedTensors read_container(const std::filesystem::path& dir, const std::string& expected_version) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open manifest: " + manifest_path.string());

  std::string version;
  if (!std::getline(manifest, version)) throw IoError("empty manifest: " + manifest_path.string());
  if (version != expected_version) {
    throw IoError("version mismatch in " + dir.string() + ": expected '" + expected_version + "', found '" +
                  version + "'");
  }

  NamedTensors out;
  std::string line;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string directive;
    ss >> directive;
    if (directive == "meta") {
      std::string key;
      ss >> key;
      if (key.empty()) throw IoError("malformed meta line " + std::to_string(line_no));
      std::string value;
      std::getline(ss, value);
      if (!value.empty() && value.front() == ' ') value.erase(value.begin());
      out.set_meta(key, value);
    } else if (directive == "tensor") {
      std::string name, dtype;
      ss >> name >> dtype;
      if (!detail::valid_entry_name(name)) {
        throw IoError("invalid tensor name on manifest line " + std::to_string(line_no));
      }
      if (dtype != "f32") throw IoError("unsupported dtype '" + dtype + "' for tensor '" + name + "'");
      if (out.find(name)) throw IoError("duplicate tensor '" + name + "'");
      std::vector<int> shape;
      long long d;
      while (ss >> d) {
        if (d <= 0) throw IoError("non-positive dimension for tensor '" + name + "'");
        shape.push_back(static_cast<int>(d));
      }
      if (shape.empty()) throw IoError("tensor '" + name + "' has no dimensions");

      Tensor<float> t(shape);
      const auto bin_path = dir / (name + ".bin");
      std::ifstream bin(bin_path, std::ios::binary);
      if (!bin) throw IoError("missing tensor file: " + bin_path.string());
      detail::read_f32_le(bin, t.data(), t.size());
      char extra;
      if (bin.read(&extra, 1)) throw IoError("tensor file larger than manifest shape: " + bin_path.string());
      out.add(name, std::move(t));
    } else {
      throw IoError("unknown manifest directive '" + directive + "' on line " + std::to_string(line_no));
    }
  }
  return out;
}

}  // namespace finet
