#pragma once

// Independent reference implementations used only by the tests. Written as
// plain loops with no shared code from the library kernels.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dlmbir/data_sim.hpp"
#include "dlmbir/tensor.hpp"

namespace oracle {

using dlmbir::Shape;
using dlmbir::Tensor;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Direct 2D cross-correlation, zero "same" padding: input (Ci,H,W),
/// weights (Co,Ci,kh,kw). Accumulates in double.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const long ci_n = static_cast<long>(in.dim(0)), H = static_cast<long>(in.dim(1)), W = static_cast<long>(in.dim(2));
  const long co_n = static_cast<long>(w.dim(0)), kh = static_cast<long>(w.dim(2)), kw = static_cast<long>(w.dim(3));
  Tensor<T> out({static_cast<std::size_t>(co_n), static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  for (long o = 0; o < co_n; ++o)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = b[o];
        for (long i = 0; i < ci_n; ++i)
          for (long u = 0; u < kh; ++u)
            for (long v = 0; v < kw; ++v) {
              const long sy = y + u - kh / 2, sx = x + v - kw / 2;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              acc += static_cast<double>(w[((o * ci_n + i) * kh + u) * kw + v]) * in[(i * H + sy) * W + sx];
            }
        out[(o * H + y) * W + x] = static_cast<T>(acc);
      }
  return out;
}

/// Direct 3D cross-correlation: input (Ci,D,H,W), weights (Co,Ci,kd,kh,kw).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const long ci_n = static_cast<long>(in.dim(0)), D = static_cast<long>(in.dim(1)), H = static_cast<long>(in.dim(2)),
             W = static_cast<long>(in.dim(3));
  const long co_n = static_cast<long>(w.dim(0)), kd = static_cast<long>(w.dim(2)), kh = static_cast<long>(w.dim(3)),
             kw = static_cast<long>(w.dim(4));
  Tensor<T> out({static_cast<std::size_t>(co_n), static_cast<std::size_t>(D), static_cast<std::size_t>(H),
                 static_cast<std::size_t>(W)});
  for (long o = 0; o < co_n; ++o)
    for (long z = 0; z < D; ++z)
      for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
          double acc = b[o];
          for (long i = 0; i < ci_n; ++i)
            for (long t = 0; t < kd; ++t)
              for (long u = 0; u < kh; ++u)
                for (long v = 0; v < kw; ++v) {
                  const long sz = z + t - kd / 2, sy = y + u - kh / 2, sx = x + v - kw / 2;
                  if (sz < 0 || sz >= D || sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                  acc += static_cast<double>(w[(((o * ci_n + i) * kd + t) * kh + u) * kw + v]) *
                         in[((i * D + sz) * H + sy) * W + sx];
                }
          out[((o * D + z) * H + y) * W + x] = static_cast<T>(acc);
        }
  return out;
}

/// Masked MSE by a single voxel loop; returns {mse, count}, count 0 when empty.
inline std::pair<double, std::size_t> masked_mse(const dlmbir::VolumeHU& x, const dlmbir::VolumeHU& ref, double lo,
                                                 double hi, double wlo, double whi) {
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.voxels.size(); ++i) {
    if (ref.voxels[i] < lo || ref.voxels[i] > hi) continue;
    const double d = (static_cast<double>(ref.voxels[i]) - x.voxels[i]) / (whi - wlo);
    acc += d * d;
    ++n;
  }
  return {n ? acc / static_cast<double>(n) : 0.0, n};
}

/// Textbook scalar ADAM on f(p) = p^2.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0, v = 0;
  int t = 0;
  double step(double p) {
    const double g = 2 * p;
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

/// Chord length through a disk of radius r centered at the origin at offset s.
inline double chord(double r, double s) { return std::abs(s) < r ? 2 * std::sqrt(r * r - s * s) : 0.0; }

}  // namespace oracle
