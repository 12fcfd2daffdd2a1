#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "segmap/error.hpp"

// Inference-only layer primitives. Activations are double precision; parameters are the
// float32 tensors read from SEGW files.

namespace segmap::nn {

/// Channel-major activation volume: data[((c * nx + x) * ny + y) * nz + z].
struct Volume {
  int channels = 0, nx = 0, ny = 0, nz = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int c, int x, int y, int z)
      : channels(c), nx(x), ny(y), nz(z), data(static_cast<std::size_t>(c) * x * y * z, 0.0) {}

  std::size_t offset(int c, int x, int y, int z) const {
    return ((static_cast<std::size_t>(c) * nx + x) * ny + y) * nz + z;
  }
  double& at(int c, int x, int y, int z) { return data[offset(c, x, y, z)]; }
  double at(int c, int x, int y, int z) const { return data[offset(c, x, y, z)]; }
};

/// 3x3x3 convolution, stride 1, zero "same" padding. weight shape [out, in, 3, 3, 3].
inline Volume conv3d_same(const Volume& in, std::span<const float> weight, std::span<const float> bias,
                          int out_channels) {
  Volume out(out_channels, in.nx, in.ny, in.nz);
  const int cin = in.channels;
  for (int co = 0; co < out_channels; ++co) {
    double* out_c = out.data.data() + out.offset(co, 0, 0, 0);
    std::fill(out_c, out_c + static_cast<std::size_t>(in.nx) * in.ny * in.nz, static_cast<double>(bias[co]));
    for (int ci = 0; ci < cin; ++ci) {
      const float* w = weight.data() + (static_cast<std::size_t>(co) * cin + ci) * 27;
      for (int kx = 0; kx < 3; ++kx) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kz = 0; kz < 3; ++kz) {
            const double wv = w[(kx * 3 + ky) * 3 + kz];
            if (wv == 0.0) continue;
            const int dx = kx - 1, dy = ky - 1, dz = kz - 1;
            const int x0 = std::max(0, -dx), x1 = std::min(in.nx, in.nx - dx);
            const int y0 = std::max(0, -dy), y1 = std::min(in.ny, in.ny - dy);
            const int z0 = std::max(0, -dz), z1 = std::min(in.nz, in.nz - dz);
            for (int x = x0; x < x1; ++x) {
              for (int y = y0; y < y1; ++y) {
                double* dst = out_c + (static_cast<std::size_t>(x) * in.ny + y) * in.nz;
                const double* src = in.data.data() + in.offset(ci, x + dx, y + dy, 0);
                for (int z = z0; z < z1; ++z) dst[z] += wv * src[z + dz];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/// Transposed 3x3x3 convolution with stride 2: input voxel i contributes to output 2i + k - 1.
/// weight shape [in, out, 3, 3, 3]; output dims are twice the input dims.
inline Volume deconv3d_stride2(const Volume& in, std::span<const float> weight, std::span<const float> bias,
                               int out_channels) {
  Volume out(out_channels, 2 * in.nx, 2 * in.ny, 2 * in.nz);
  for (int co = 0; co < out_channels; ++co) {
    double* out_c = out.data.data() + out.offset(co, 0, 0, 0);
    std::fill(out_c, out_c + static_cast<std::size_t>(out.nx) * out.ny * out.nz, static_cast<double>(bias[co]));
  }
  for (int ci = 0; ci < in.channels; ++ci) {
    for (int co = 0; co < out_channels; ++co) {
      const float* w = weight.data() + (static_cast<std::size_t>(ci) * out_channels + co) * 27;
      for (int kx = 0; kx < 3; ++kx) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kz = 0; kz < 3; ++kz) {
            const double wv = w[(kx * 3 + ky) * 3 + kz];
            if (wv == 0.0) continue;
            for (int x = 0; x < in.nx; ++x) {
              const int ox = 2 * x + kx - 1;
              if (ox < 0 || ox >= out.nx) continue;
              for (int y = 0; y < in.ny; ++y) {
                const int oy = 2 * y + ky - 1;
                if (oy < 0 || oy >= out.ny) continue;
                const double* src = in.data.data() + in.offset(ci, x, y, 0);
                for (int z = 0; z < in.nz; ++z) {
                  const int oz = 2 * z + kz - 1;
                  if (oz < 0 || oz >= out.nz) continue;
                  out.at(co, ox, oy, oz) += wv * src[z];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline constexpr double kBatchNormEpsilon = 1e-3;

/// Inference-mode batch normalization with stored statistics.
inline void batch_norm(Volume& v, std::span<const float> gamma, std::span<const float> beta,
                       std::span<const float> mean, std::span<const float> var) {
  const std::size_t per_channel = static_cast<std::size_t>(v.nx) * v.ny * v.nz;
  for (int c = 0; c < v.channels; ++c) {
    const double scale = gamma[c] / std::sqrt(static_cast<double>(var[c]) + kBatchNormEpsilon);
    const double shift = beta[c] - scale * mean[c];
    double* p = v.data.data() + static_cast<std::size_t>(c) * per_channel;
    for (std::size_t i = 0; i < per_channel; ++i) p[i] = scale * p[i] + shift;
  }
}

inline void relu(std::span<double> v) {
  for (auto& x : v) x = std::max(0.0, x);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// 2x2x2 max pooling with stride 2 (dims must be even).
inline Volume max_pool2(const Volume& in) {
  Volume out(in.channels, in.nx / 2, in.ny / 2, in.nz / 2);
  for (int c = 0; c < in.channels; ++c)
    for (int x = 0; x < out.nx; ++x)
      for (int y = 0; y < out.ny; ++y)
        for (int z = 0; z < out.nz; ++z) {
          double m = in.at(c, 2 * x, 2 * y, 2 * z);
          for (int d = 1; d < 8; ++d) m = std::max(m, in.at(c, 2 * x + (d >> 2), 2 * y + ((d >> 1) & 1), 2 * z + (d & 1)));
          out.at(c, x, y, z) = m;
        }
  return out;
}

/// y = W x + b with W row-major [out, in].
inline std::vector<double> dense(std::span<const double> x, std::span<const float> weight, std::span<const float> bias) {
  const std::size_t n_out = bias.size();
  const std::size_t n_in = x.size();
  if (weight.size() != n_out * n_in) throw Error(ErrorCode::ShapeMismatch, "dense layer shape mismatch");
  std::vector<double> y(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    const float* w = weight.data() + o * n_in;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) acc += static_cast<double>(w[i]) * x[i];
    y[o] = acc + bias[o];
  }
  return y;
}

}  // namespace segmap::nn
