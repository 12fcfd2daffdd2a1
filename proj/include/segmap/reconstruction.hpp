#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "segmap/descriptor.hpp"
#include "segmap/detail/marching_cubes_tables.hpp"
#include "segmap/error.hpp"
#include "segmap/geometry.hpp"
#include "segmap/nn.hpp"
#include "segmap/preprocess.hpp"
#include "segmap/segw.hpp"

namespace segmap {

/// Decoder output: occupancy probabilities on the 32x32x16 input lattice.
struct OccupancyGrid {
  std::vector<double> probs = std::vector<double>(kInputVoxels, 0.0);
  Eigen::Vector3d voxel_sides = Eigen::Vector3d::Constant(kMinVoxelSide);

  double at(int x, int y, int z) const { return probs[grid_offset(x, y, z)]; }
  double& at(int x, int y, int z) { return probs[grid_offset(x, y, z)]; }

  /// Occupied where probability >= threshold.
  std::vector<std::uint8_t> binarize(double threshold = 0.5) const {
    std::vector<std::uint8_t> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
    return out;
  }
};

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const noexcept { return triangles.empty(); }

  double signed_volume() const {
    double v = 0.0;
    for (const auto& t : triangles) v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    return v / 6.0;
  }

  double surface_area() const {
    double a = 0.0;
    for (const auto& t : triangles) a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    return a;
  }
};

/// Decoder forward pass: FC (ReLU) to a 64x4x4x2 seed volume, then three stride-2
/// transposed convolutions (ReLU, ReLU, sigmoid).
inline OccupancyGrid decode(const Descriptor& d, const NetworkWeights& w,
                            const Eigen::Vector3d& voxel_sides = Eigen::Vector3d::Constant(kMinVoxelSide)) {
  if (w.architecture_id() != kArchDecoder) throw Error(ErrorCode::UnknownArchitecture, "decode needs decoder-v1 weights");
  if (!w.finite()) throw Error(ErrorCode::InvalidWeights, "weights contain non-finite values");
  if (d.values.size() != w.input_dim()) throw Error(ErrorCode::ShapeMismatch, "descriptor length does not match decoder input");

  std::vector<double> x(d.values.begin(), d.values.end());
  auto seed = nn::dense(x, w["fc.weight"], w["fc.bias"]);
  nn::relu(seed);
  nn::Volume v(kDecoderChannels, kDecoderSeedDims[0], kDecoderSeedDims[1], kDecoderSeedDims[2]);
  v.data = std::move(seed);
  for (int l = 0; l < 3; ++l) {
    const std::string i = std::to_string(l + 1);
    v = nn::deconv3d_stride2(v, w["deconv" + i + ".weight"], w["deconv" + i + ".bias"], kDecoderFilters[l]);
    if (l < 2) nn::relu(v.data);
  }
  OccupancyGrid out;
  out.voxel_sides = voxel_sides;
  for (std::size_t i = 0; i < kInputVoxels; ++i) out.probs[i] = nn::sigmoid(v.data[i]);
  return out;
}

namespace detail {

/// Fraction of occupied voxels in `from` with an occupied voxel of `to` within Chebyshev distance 1.
inline double directed_correspondence(const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
  std::size_t total = 0, matched = 0;
  for (int x = 0; x < kInputDims[0]; ++x)
    for (int y = 0; y < kInputDims[1]; ++y)
      for (int z = 0; z < kInputDims[2]; ++z) {
        if (!from[grid_offset(x, y, z)]) continue;
        ++total;
        bool found = false;
        for (int dx = -1; dx <= 1 && !found; ++dx)
          for (int dy = -1; dy <= 1 && !found; ++dy)
            for (int dz = -1; dz <= 1 && !found; ++dz) {
              const int nx = x + dx, ny = y + dy, nz = z + dz;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= kInputDims[0] || ny >= kInputDims[1] || nz >= kInputDims[2]) continue;
              found = to[grid_offset(nx, ny, nz)] != 0;
            }
        matched += found;
      }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace detail

/// Symmetric mean of the two directed one-voxel correspondence ratios. Defined as 0 when
/// the reconstruction is empty.
inline double correspondence_ratio(const std::vector<std::uint8_t>& original, const std::vector<std::uint8_t>& recon) {
  if (original.size() != kInputVoxels || recon.size() != kInputVoxels) {
    throw Error(ErrorCode::ShapeMismatch, "grids must be 32x32x16");
  }
  if (std::none_of(original.begin(), original.end(), [](std::uint8_t v) { return v != 0; })) {
    throw Error(ErrorCode::EmptyOriginal, "original grid is empty");
  }
  if (std::none_of(recon.begin(), recon.end(), [](std::uint8_t v) { return v != 0; })) return 0.0;
  return 0.5 * (detail::directed_correspondence(original, recon) + detail::directed_correspondence(recon, original));
}

inline double correspondence_ratio(const VoxelizedInput& original, const OccupancyGrid& recon, double threshold = 0.5) {
  return correspondence_ratio(original.grid, recon.binarize(threshold));
}

/// Iso-surface of the probability grid. Values outside the grid are treated as 0 so the
/// surface is closed. Vertices are in meters, with the grid center at the origin.
inline TriangleMesh marching_cubes(const OccupancyGrid& grid, double iso = 0.5) {
  if (!(iso > 0.0 && iso < 1.0)) throw Error(ErrorCode::InvalidArgument, "iso level must be in (0, 1)");
  const int nx = kInputDims[0], ny = kInputDims[1], nz = kInputDims[2];
  const auto value = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return 0.0;
    return grid.at(x, y, z);
  };
  const auto position = [&](int x, int y, int z) {
    return Point3((x + 0.5 - nx / 2.0) * grid.voxel_sides.x(), (y + 0.5 - ny / 2.0) * grid.voxel_sides.y(),
                  (z + 0.5 - nz / 2.0) * grid.voxel_sides.z());
  };
  // Samples span [-1, n]; each lattice edge is keyed by its lower sample and axis.
  const auto sample_key = [&](int x, int y, int z) {
    return static_cast<std::uint64_t>(((x + 1) * (ny + 2) + (y + 1)) * (nz + 2) + (z + 1));
  };

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  for (int x = -1; x < nx; ++x)
    for (int y = -1; y < ny; ++y)
      for (int z = -1; z < nz; ++z) {
        std::array<double, 8> vals{};
        int case_index = 0;
        for (int k = 0; k < 8; ++k) {
          const auto& c = detail::kCubeCorners[k];
          vals[k] = value(x + c[0], y + c[1], z + c[2]);
          if (vals[k] < iso) case_index |= 1 << k;
        }
        if (case_index == 0 || case_index == 255) continue;
        std::array<std::uint32_t, 12> vert{};
        std::array<bool, 12> have{};
        const auto edge_vert = [&](int e) {
          if (have[e]) return vert[e];
          const auto& [a, b] = detail::kCubeEdges[e];
          const auto& ca = detail::kCubeCorners[a];
          const auto& cb = detail::kCubeCorners[b];
          const int lo = (ca[0] + ca[1] + ca[2] <= cb[0] + cb[1] + cb[2]) ? a : b;
          const auto& cl = detail::kCubeCorners[lo];
          const int axis = ca[0] != cb[0] ? 0 : (ca[1] != cb[1] ? 1 : 2);
          const std::uint64_t key = sample_key(x + cl[0], y + cl[1], z + cl[2]) * 3 + static_cast<std::uint64_t>(axis);
          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const double va = vals[a], vb = vals[b];
            const double t = std::abs(vb - va) < 1e-12 ? 0.5 : (iso - va) / (vb - va);
            const Point3 pa = position(x + ca[0], y + ca[1], z + ca[2]);
            const Point3 pb = position(x + cb[0], y + cb[1], z + cb[2]);
            mesh.vertices.push_back(pa + t * (pb - pa));
            it = edge_vertex.emplace(key, static_cast<std::uint32_t>(mesh.vertices.size() - 1)).first;
          }
          have[e] = true;
          vert[e] = it->second;
          return vert[e];
        };
        const auto& row = detail::kTriangleTable[case_index];
        for (int i = 0; row[i] != -1; i += 3) {
          // With "below iso" corner bits the table winding already faces the low-value side (outward).
          mesh.triangles.push_back({edge_vert(row[i]), edge_vert(row[i + 1]), edge_vert(row[i + 2])});
        }
      }

  // Weld vertices that coincide (iso exactly at a sample) and drop collapsed triangles.
  const double weld = 1e-6 * grid.voxel_sides.minCoeff();
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
  std::vector<std::uint32_t> remap(mesh.vertices.size());
  std::vector<Point3> welded;
  const auto cell_key = [&](const Point3& p) {
    const auto q = [&](double v) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(v / (4 * weld))) & 0x1fffff); };
    return (q(p.x()) << 42) | (q(p.y()) << 21) | q(p.z());
  };
  for (std::uint32_t i = 0; i < mesh.vertices.size(); ++i) {
    const Point3& p = mesh.vertices[i];
    const std::uint64_t key = cell_key(p);
    std::optional<std::uint32_t> found;
    for (int dx = -1; dx <= 1 && !found; ++dx)
      for (int dy = -1; dy <= 1 && !found; ++dy)
        for (int dz = -1; dz <= 1 && !found; ++dz) {
          const Point3 probe = p + Point3(dx, dy, dz) * (4 * weld);
          const auto it = buckets.find(cell_key(probe));
          if (it == buckets.end()) continue;
          for (auto j : it->second) {
            if ((welded[j] - p).norm() <= weld) {
              found = j;
              break;
            }
          }
        }
    if (!found) {
      welded.push_back(p);
      found = static_cast<std::uint32_t>(welded.size() - 1);
      buckets[key].push_back(*found);
    }
    remap[i] = *found;
  }
  std::vector<std::array<std::uint32_t, 3>> tris;
  tris.reserve(mesh.triangles.size());
  for (auto t : mesh.triangles) {
    for (auto& v : t) v = remap[v];
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    const double area2 = (welded[t[1]] - welded[t[0]]).cross(welded[t[2]] - welded[t[0]]).norm();
    if (area2 <= 2e-12) continue;
    tris.push_back(t);
  }
  // Compact away vertices no longer referenced.
  std::vector<std::int64_t> used(welded.size(), -1);
  TriangleMesh out;
  for (auto& t : tris) {
    for (auto& v : t) {
      if (used[v] < 0) {
        used[v] = static_cast<std::int64_t>(out.vertices.size());
        out.vertices.push_back(welded[v]);
      }
      v = static_cast<std::uint32_t>(used[v]);
    }
    out.triangles.push_back(t);
  }
  return out;
}

/// ASCII OBJ with 1-based face indices.
inline void write_obj(const TriangleMesh& mesh, std::ostream& out) {
  out << std::setprecision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_obj(mesh, out);
}

/// Grid export as a single-tensor SEGW container named "occupancy" with dims [32, 32, 16].
inline TensorFile grid_to_tensor_file(const OccupancyGrid& grid) {
  TensorFile file;
  std::vector<float> data(grid.probs.begin(), grid.probs.end());
  file.add("occupancy", {32, 32, 16}, std::move(data));
  return file;
}

}  // namespace segmap
