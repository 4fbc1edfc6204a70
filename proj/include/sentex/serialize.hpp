#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sentex {

inline void write_f64_le(std::ostream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i)
    bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

inline double read_f64_le(std::istream& in) {
  char bytes[8];
  in.read(bytes, 8);
  if (!in) throw std::runtime_error("truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i]))
            << (8 * i);
  return std::bit_cast<double>(bits);
}

/// Self-describing container for model files: a human-readable header
/// (kind line, key/value metadata, tensor manifest) followed by the raw
/// tensor payload as little-endian float64 in manifest order. Save/load
/// round-trips bit-exactly.
struct TensorFile {
  struct Tensor {
    std::string name;
    std::vector<int> dims;
    std::vector<double> data;
  };

  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<Tensor> tensors;

  void add_meta(const std::string& key, const std::string& value) {
    meta[key] = value;
  }
  void add_meta(const std::string& key, long long value) {
    meta[key] = std::to_string(value);
  }

  void add_tensor(std::string name, std::vector<int> dims,
                  std::vector<double> data) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    if (n != data.size())
      throw std::invalid_argument("tensor size does not match dims: " + name);
    tensors.push_back({std::move(name), std::move(dims), std::move(data)});
  }

  const Tensor& tensor(const std::string& name) const {
    for (const Tensor& t : tensors)
      if (t.name == name) return t;
    throw std::runtime_error("missing tensor: " + name);
  }

  std::string meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("missing header field: " + key);
    return it->second;
  }
  long long meta_int(const std::string& key) const {
    return std::stoll(meta_at(key));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "sentex " << kind << " v1\n";
    for (const auto& [k, v] : meta) out << k << ' ' << v << '\n';
    for (const Tensor& t : tensors) {
      out << "tensor " << t.name;
      for (std::size_t i = 0; i < t.dims.size(); ++i)
        out << (i == 0 ? ' ' : 'x') << t.dims[i];
      out << '\n';
    }
    out << "data\n";
    for (const Tensor& t : tensors)
      for (double v : t.data) write_f64_le(out, v);
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }

  static TensorFile load(const std::filesystem::path& path,
                         const std::string& expected_kind = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    TensorFile file;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path.string());
    {
      std::istringstream head(line);
      std::string magic, version;
      head >> magic >> file.kind >> version;
      if (magic != "sentex" || version != "v1")
        throw std::runtime_error("not a sentex model file: " + path.string());
      if (!expected_kind.empty() && file.kind != expected_kind)
        throw std::runtime_error("expected a " + expected_kind + " file, got " +
                                 file.kind + ": " + path.string());
    }
    std::vector<Tensor> manifest;
    while (std::getline(in, line)) {
      if (line == "data") break;
      std::istringstream fields(line);
      std::string key;
      fields >> key;
      if (key == "tensor") {
        Tensor t;
        std::string name, shape;
        fields >> name >> shape;
        t.name = name;
        std::size_t pos = 0;
        while (pos < shape.size()) {
          std::size_t next = shape.find('x', pos);
          if (next == std::string::npos) next = shape.size();
          t.dims.push_back(std::stoi(shape.substr(pos, next - pos)));
          pos = next + 1;
        }
        manifest.push_back(std::move(t));
      } else {
        std::string value;
        std::getline(fields >> std::ws, value);
        file.meta[key] = value;
      }
    }
    for (Tensor& t : manifest) {
      std::size_t n = 1;
      for (int d : t.dims) n *= static_cast<std::size_t>(d);
      t.data.resize(n);
      for (double& v : t.data) v = read_f64_le(in);
      file.tensors.push_back(std::move(t));
    }
    return file;
  }
};

}  // namespace sentex
