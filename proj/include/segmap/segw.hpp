#pragma once

// SEGW tensor container:
//   "SEGW" | u16 version (=1) | u16 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | prod(dims) x f32
//   u32 CRC-32 of every preceding byte
// All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "segmap/error.hpp"

namespace segmap {

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  static std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }
  std::size_t size() const { return element_count(dims); }
};

/// Ordered collection of named tensors. Order is preserved through serialization.
class TensorFile {
 public:
  static constexpr std::uint16_t kVersion = 1;

  void add(Tensor t) {
    if (t.data.size() != t.size()) throw Error(ErrorCode::ShapeMismatch, "tensor '" + t.name + "' data/shape mismatch");
    if (t.name.size() > 0xffff || t.dims.size() > 0xff) throw Error(ErrorCode::InvalidArgument, "tensor header too large");
    if (find(t.name) != nullptr) throw Error(ErrorCode::InvalidArgument, "duplicate tensor '" + t.name + "'");
    tensors_.push_back(std::move(t));
  }

  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
    add(Tensor{std::move(name), std::move(dims), std::move(data)});
  }

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    if (t == nullptr) throw Error(ErrorCode::MissingTensor, "missing tensor '" + std::string(name) + "'");
    return *t;
  }

  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }

  std::vector<std::uint8_t> serialize() const {
    if (tensors_.size() > 0xffff) throw Error(ErrorCode::InvalidArgument, "too many tensors");
    std::vector<std::uint8_t> out{'S', 'E', 'G', 'W'};
    put_u16(out, kVersion);
    put_u16(out, static_cast<std::uint16_t>(tensors_.size()));
    for (const auto& t : tensors_) {
      put_u16(out, static_cast<std::uint16_t>(t.name.size()));
      out.insert(out.end(), t.name.begin(), t.name.end());
      out.push_back(static_cast<std::uint8_t>(t.dims.size()));
      for (auto d : t.dims) put_u32(out, d);
      for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    put_u32(out, crc32_of(out.data(), out.size()));
    return out;
  }

  static TensorFile parse(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "SEGW", 4) != 0) {
      throw Error(ErrorCode::BadMagic, "not a SEGW container");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kVersion) throw Error(ErrorCode::UnsupportedVersion, "SEGW version " + std::to_string(version));
    const std::uint16_t count = r.u16();
    TensorFile file;
    for (std::uint16_t i = 0; i < count; ++i) {
      Tensor t;
      const std::uint16_t name_len = r.u16();
      r.need(name_len);
      t.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
      r.pos += name_len;
      const std::uint8_t rank = r.u8();
      t.dims.resize(rank);
      for (auto& d : t.dims) d = r.u32();
      const std::size_t n = t.size();
      r.need(n * 4);
      t.data.resize(n);
      for (auto& f : t.data) f = std::bit_cast<float>(r.u32());
      file.tensors_.push_back(std::move(t));
    }
    const std::size_t body = r.pos;
    const std::uint32_t stored = r.u32();
    if (r.pos != bytes.size()) throw Error(ErrorCode::TruncatedFile, "trailing bytes after checksum");
    if (stored != crc32_of(bytes.data(), body)) throw Error(ErrorCode::BadChecksum, "SEGW checksum mismatch");
    return file;
  }

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  }

  static TensorFile load(const std::filesystem::path& path) { return parse(read_bytes(path)); }

  static std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  static std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
      crc = ::crc32(crc, data, chunk);
      data += chunk;
      n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
  }

 private:
  struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
      if (bytes.size() < pos || bytes.size() - pos < n) {
        throw Error(ErrorCode::TruncatedFile, "SEGW truncated at offset " + std::to_string(pos));
      }
    }
    std::uint8_t u8() {
      need(1);
      return bytes[pos++];
    }
    std::uint16_t u16() {
      need(2);
      const auto v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
      pos += 2;
      return v;
    }
    std::uint32_t u32() {
      need(4);
      const std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) | (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                              (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
                              (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
      pos += 4;
      return v;
    }
  };

  static void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }

  std::vector<Tensor> tensors_;
};

}  // namespace segmap
