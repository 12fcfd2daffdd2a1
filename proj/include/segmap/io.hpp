#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/segw.hpp"

namespace segmap {

enum class ScanFormat { XyzText, VelodyneBin };

inline ScanFormat scan_format_from_string(std::string_view s) {
  if (s == "xyz-text") return ScanFormat::XyzText;
  if (s == "velodyne-bin") return ScanFormat::VelodyneBin;
  throw Error(ErrorCode::InvalidArgument, "unknown scan format '" + std::string(s) + "'");
}

/// ".bin" is velodyne-bin, anything else xyz-text.
inline ScanFormat scan_format_for(const std::filesystem::path& p) {
  return p.extension() == ".bin" ? ScanFormat::VelodyneBin : ScanFormat::XyzText;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

inline std::string location(const std::filesystem::path& p, std::size_t line) {
  return p.string() + ":" + std::to_string(line);
}

}  // namespace detail

/// xyz-text: "x y z" per line (blank lines and '#' comments skipped).
/// velodyne-bin: little-endian float32 (x, y, z, intensity) records; intensity dropped.
inline PointCloud read_scan(const std::filesystem::path& path, ScanFormat format) {
  PointCloud cloud;
  if (format == ScanFormat::VelodyneBin) {
    const auto bytes = TensorFile::read_bytes(path);
    if (bytes.size() % 16 != 0) {
      throw Error(ErrorCode::TruncatedRecord, path.string() + ": truncated record at byte offset " +
                                                  std::to_string(bytes.size() - bytes.size() % 16));
    }
    cloud.reserve(bytes.size() / 16);
    for (std::size_t off = 0; off < bytes.size(); off += 16) {
      float v[3];
      for (int k = 0; k < 3; ++k) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[off + 4 * k + b]) << (8 * b);
        v[k] = std::bit_cast<float>(u);
      }
      cloud.push_back(Point3(v[0], v[1], v[2]));
    }
    return cloud;
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().starts_with('#')) continue;
    double xyz[3];
    if (toks.size() != 3 || !detail::parse_double(toks[0], xyz[0]) || !detail::parse_double(toks[1], xyz[1]) ||
        !detail::parse_double(toks[2], xyz[2])) {
      throw Error(ErrorCode::MalformedLine, detail::location(path, n) + ": expected three numbers");
    }
    cloud.push_back(Point3(xyz[0], xyz[1], xyz[2]));
  }
  return cloud;
}

inline PointCloud read_scan(const std::filesystem::path& path) { return read_scan(path, scan_format_for(path)); }

inline void write_scan(const PointCloud& cloud, const std::filesystem::path& path, ScanFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  if (format == ScanFormat::VelodyneBin) {
    for (const auto& p : cloud) {
      const float v[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), 0.0f};
      for (float f : v) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) out.put(static_cast<char>((u >> (8 * b)) & 0xff));
      }
    }
  } else {
    out << std::setprecision(9);
    for (const auto& p : cloud) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

struct PoseFile {
  std::vector<SE3Transform> poses;
  /// 1-based line numbers whose rotation drifted more than 1e-6 from orthonormal.
  std::vector<std::size_t> reorthonormalized;
};

inline constexpr double kPoseDriftFlag = 1e-6;
inline constexpr double kPoseDriftReject = 1e-2;

/// Twelve floats per line, row-major [R | t]. Rotations are projected onto SO(3); lines
/// drifting beyond 1e-6 are flagged and gross violations are rejected.
inline PoseFile read_poses(std::istream& in, const std::string& name = "poses") {
  PoseFile out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 12) {
      throw Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": expected 12 values, got " +
                                                std::to_string(toks.size()));
    }
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!detail::parse_double(toks[i], v[i])) {
        throw Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": bad number '" + std::string(toks[i]) + "'");
      }
    }
    Eigen::Matrix3d r;
    Eigen::Vector3d t;
    for (int row = 0; row < 3; ++row) {
      for (int c = 0; c < 3; ++c) r(row, c) = v[4 * row + c];
      t[row] = v[4 * row + 3];
    }
    const double drift = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (drift > kPoseDriftReject || r.determinant() <= 0) {
      throw Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": not a rotation");
    }
    if (drift > kPoseDriftFlag) out.reorthonormalized.push_back(n);
    out.poses.push_back(SE3Transform::orthonormalized(r, t));
  }
  return out;
}

inline PoseFile read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_poses(in, path.string());
}

inline void write_poses(const std::vector<SE3Transform>& poses, std::ostream& out) {
  out << std::setprecision(17);
  for (const auto& p : poses) {
    for (int row = 0; row < 3; ++row) {
      for (int c = 0; c < 3; ++c) out << p.rotation()(row, c) << ' ';
      out << p.translation()[row] << (row == 2 ? '\n' : ' ');
    }
  }
}

inline void write_poses(const std::vector<SE3Transform>& poses, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_poses(poses, out);
}

/// Correspondence CSV: header "segment_a,segment_b,overlap", one pair per row.
struct CorrespondenceRow {
  SegmentId a = 0;
  SegmentId b = 0;
  double overlap = 0.0;
};

inline std::vector<CorrespondenceRow> read_correspondences(std::istream& in, const std::string& name = "pairs") {
  std::vector<CorrespondenceRow> rows;
  std::string line;
  std::size_t n = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "segment_a,segment_b,overlap") {
        throw Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": unexpected header");
      }
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    CorrespondenceRow r;
    const auto bad = [&] { return Error(ErrorCode::MalformedLine, name + ":" + std::to_string(n) + ": bad row"); };
    if (cols.size() != 3) throw bad();
    const auto ia = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), r.a);
    const auto ib = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), r.b);
    if (ia.ec != std::errc() || ia.ptr != cols[0].data() + cols[0].size() || ib.ec != std::errc() ||
        ib.ptr != cols[1].data() + cols[1].size() || !detail::parse_double(cols[2], r.overlap)) {
      throw bad();
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace segmap
