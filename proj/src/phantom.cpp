#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dlmbir/data_sim.hpp"

namespace dlmbir {

std::string to_string(const VolumeDims& dims) {
  return std::to_string(dims.slices) + "x" + std::to_string(dims.rows) + "x" + std::to_string(dims.cols);
}

VolumeHU::VolumeHU(VolumeDims d, float fill) : dims(d), voxels(d.voxels(), fill) {
  if (d.slices == 0 || d.rows == 0 || d.cols == 0)
    throw ShapeError("volume dims must be positive, got " + to_string(d));
}

bool Ellipse::contains(double x, double y) const {
  const double dx = x - center_x, dy = y - center_y;
  const double c = std::cos(rotation), s = std::sin(rotation);
  const double u = (dx * c + dy * s) / semi_x;
  const double v = (-dx * s + dy * c) / semi_y;
  return u * u + v * v <= 1.0;
}

void Phantom::validate() const {
  for (std::size_t i = 0; i < ellipses.size(); ++i) {
    const auto& e = ellipses[i];
    if (!(e.semi_x > 0) || !(e.semi_y > 0))
      throw std::invalid_argument("phantom ellipse " + std::to_string(i) + " has a non-positive semi-axis");
    if (std::hypot(e.center_x, e.center_y) + std::max(e.semi_x, e.semi_y) > 1.0 + 1e-12)
      throw std::invalid_argument("phantom ellipse " + std::to_string(i) + " leaves the unit field of view");
  }
}

double fov_coordinate(std::size_t index, std::size_t count) {
  return (static_cast<double>(index) + 0.5) / static_cast<double>(count) * 2.0 - 1.0;
}

Tensor<double> rasterize(const Phantom& phantom, std::size_t rows, std::size_t cols) {
  phantom.validate();
  Tensor<double> img(Shape{rows, cols}, phantom.background_hu);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = fov_coordinate(r, rows);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = fov_coordinate(c, cols);
      for (const auto& e : phantom.ellipses)
        if (e.contains(x, y)) img[r * cols + c] = e.hu;
    }
  }
  return img;
}

namespace {

// An ellipse whose center and size oscillate slowly along z.
struct EllipseTrack {
  Ellipse base;
  double drift_x = 0, drift_y = 0, breathe = 0;
  double cycles = 0.5, phase = 0;

  Ellipse at(double t) const {
    const double w = std::sin(2 * std::numbers::pi * cycles * t + phase);
    Ellipse e = base;
    e.center_x += drift_x * w;
    e.center_y += drift_y * w;
    e.semi_x *= 1 + breathe * w;
    e.semi_y *= 1 + breathe * w;
    return e;
  }
};

}  // namespace

PhantomVolume generate_phantom_volume(std::uint64_t seed, VolumeDims dims) {
  if (dims.slices < 8 || dims.rows < 32 || dims.cols < 32)
    throw std::invalid_argument("phantom volume dims must be at least 8x32x32, got " + to_string(dims));

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto track = [&](Ellipse e, double drift, double breathe) {
    EllipseTrack t;
    t.base = e;
    t.drift_x = uniform(-drift, drift);
    t.drift_y = uniform(-drift, drift);
    t.breathe = uniform(-breathe, breathe);
    t.cycles = uniform(0.25, 0.75);
    t.phase = uniform(0, 2 * std::numbers::pi);
    return t;
  };

  std::vector<EllipseTrack> tracks;
  // Body outline.
  tracks.push_back(track({0.0, 0.0, uniform(0.72, 0.8), uniform(0.58, 0.66), uniform(-0.1, 0.1), 1000}, 0.01, 0.04));
  // Low-attenuation lobes.
  for (double side : {-1.0, 1.0})
    tracks.push_back(track({side * uniform(0.3, 0.38), uniform(-0.15, -0.05), uniform(0.14, 0.2), uniform(0.2, 0.28),
                            uniform(-0.3, 0.3), uniform(150, 350)},
                           0.02, 0.08));
  // Soft-tissue organs.
  const int organs = 3 + static_cast<int>(rng() % 2);
  for (int i = 0; i < organs; ++i)
    tracks.push_back(track({uniform(-0.4, 0.4), uniform(-0.3, 0.3), uniform(0.08, 0.2), uniform(0.08, 0.2),
                            uniform(0, std::numbers::pi), uniform(800, 1300)},
                           0.04, 0.15));
  // Small lesions.
  for (int i = 0; i < 2; ++i)
    tracks.push_back(track({uniform(-0.4, 0.4), uniform(-0.3, 0.3), uniform(0.03, 0.06), uniform(0.03, 0.06),
                            uniform(0, std::numbers::pi), uniform(1050, 1450)},
                           0.03, 0.2));
  // Bone: a spine-like ellipse plus one or two ribs near the outline.
  tracks.push_back(track({uniform(-0.05, 0.05), uniform(0.38, 0.45), uniform(0.07, 0.1), uniform(0.05, 0.08),
                          uniform(-0.2, 0.2), uniform(1750, 1950)},
                         0.01, 0.1));
  const int ribs = 1 + static_cast<int>(rng() % 2);
  for (int i = 0; i < ribs; ++i) {
    const double angle = uniform(0, 2 * std::numbers::pi);
    tracks.push_back(track({0.6 * std::cos(angle), 0.5 * std::sin(angle), uniform(0.03, 0.05), uniform(0.03, 0.05),
                            0.0, uniform(1700, 1950)},
                           0.02, 0.1));
  }

  PhantomVolume out;
  out.volume = VolumeHU(dims);
  for (std::size_t z = 0; z < dims.slices; ++z) {
    const double t = static_cast<double>(z) / static_cast<double>(dims.slices - 1);
    Phantom p;
    for (const auto& tr : tracks) p.ellipses.push_back(tr.at(t));
    const Tensor<double> img = rasterize(p, dims.rows, dims.cols);
    std::transform(img.data().begin(), img.data().end(), out.volume.voxels.begin() + z * dims.plane(),
                   [](double v) { return static_cast<float>(v); });
    out.slices.push_back(std::move(p));
  }
  return out;
}

template <typename T>
NormalizedVolume<T> hu_normalize(const VolumeHU& volume, HuRange window, bool clip) {
  if (!(window.lo < window.hi))
    throw std::invalid_argument("hu_normalize: window lower bound must be below the upper bound");
  NormalizedVolume<T> out{Tensor<T>(Shape{volume.dims.slices, volume.dims.rows, volume.dims.cols}), 0};
  const double scale = 1.0 / (window.hi - window.lo);
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    double v = (static_cast<double>(volume.voxels[i]) - window.lo) * scale;
    if (v < 0.0 || v > 1.0) {
      ++out.out_of_window;
      if (clip) v = std::clamp(v, 0.0, 1.0);
    }
    out.data[i] = static_cast<T>(v);
  }
  return out;
}

template <typename T>
VolumeHU hu_denormalize(const Tensor<T>& normalized, HuRange window) {
  if (!(window.lo < window.hi))
    throw std::invalid_argument("hu_denormalize: window lower bound must be below the upper bound");
  if (normalized.rank() != 3)
    throw ShapeError("hu_denormalize expects (slices, rows, cols), got " + shape_to_string(normalized.shape()));
  VolumeHU out(VolumeDims{normalized.dim(0), normalized.dim(1), normalized.dim(2)});
  out.window = window;
  for (std::size_t i = 0; i < normalized.size(); ++i)
    out.voxels[i] = static_cast<float>(window.lo + static_cast<double>(normalized[i]) * (window.hi - window.lo));
  return out;
}

template NormalizedVolume<float> hu_normalize<float>(const VolumeHU&, HuRange, bool);
template NormalizedVolume<double> hu_normalize<double>(const VolumeHU&, HuRange, bool);
template VolumeHU hu_denormalize(const Tensor<float>&, HuRange);
template VolumeHU hu_denormalize(const Tensor<double>&, HuRange);

std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t counter) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ (counter * 0xD1B54A32D192ED03ull));
}

}  // namespace dlmbir
