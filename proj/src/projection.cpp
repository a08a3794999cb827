#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dlmbir/data_sim.hpp"

namespace dlmbir {

void Sinogram::validate() const {
  if (angles.empty()) throw std::invalid_argument("sinogram has no projection angles");
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (angles[i] < 0 || angles[i] >= std::numbers::pi)
      throw std::invalid_argument("sinogram angle " + std::to_string(i) + " is outside [0, pi)");
    if (i > 0 && !(angles[i] > angles[i - 1]))
      throw std::invalid_argument("sinogram angles must be strictly increasing");
  }
  if (detectors == 0 || rows == 0 || cols == 0) throw std::invalid_argument("sinogram geometry is empty");
  if (!(detector_spacing > 0)) throw std::invalid_argument("sinogram detector spacing must be positive");
  if (values.size() != angles.size() * detectors)
    throw ShapeError("sinogram holds " + std::to_string(values.size()) + " values but " +
                     std::to_string(angles.size()) + " angles x " + std::to_string(detectors) + " detectors");
}

std::vector<double> uniform_angles(std::size_t views) {
  if (views == 0) throw std::invalid_argument("uniform_angles: need at least one view");
  std::vector<double> a(views);
  for (std::size_t k = 0; k < views; ++k) a[k] = std::numbers::pi * static_cast<double>(k) / static_cast<double>(views);
  return a;
}

std::size_t default_detector_count(std::size_t rows, std::size_t cols) {
  auto n = static_cast<std::size_t>(std::ceil(std::hypot(static_cast<double>(rows), static_cast<double>(cols))));
  return n % 2 == 0 ? n + 1 : n;
}

namespace {

double bilinear(const Tensor<double>& img, double x, double y) {
  const long rows = static_cast<long>(img.dim(0)), cols = static_cast<long>(img.dim(1));
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](long r, long c) { return (r < 0 || r >= rows || c < 0 || c >= cols) ? 0.0 : img[r * cols + c]; };
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Real-to-complex / complex-to-real plan pair over fixed buffers.
class RampFilter {
 public:
  RampFilter(std::size_t detectors, double spacing) : detectors_(detectors) {
    length_ = 1;
    while (length_ < 2 * detectors) length_ <<= 1;
    bins_ = length_ / 2 + 1;
    real_ = static_cast<double*>(fftw_malloc(sizeof(double) * length_));
    spectrum_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins_));
    {
      std::lock_guard lock(fftw_planner_mutex());
      forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(length_), real_, spectrum_, FFTW_ESTIMATE);
      inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(length_), spectrum_, real_, FFTW_ESTIMATE);
    }
    // Band-limited Ram-Lak kernel sampled in space, scaled by the detector
    // spacing so the discrete convolution approximates the continuous one.
    std::fill(real_, real_ + length_, 0.0);
    const long half = static_cast<long>(detectors) - 1;
    for (long n = -half; n <= half; ++n) {
      double h = 0;
      if (n == 0)
        h = 1.0 / (4 * spacing * spacing);
      else if (n % 2 != 0)
        h = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(n * n) * spacing * spacing);
      real_[(n + static_cast<long>(length_)) % static_cast<long>(length_)] = h * spacing;
    }
    fftw_execute(forward_);
    kernel_.resize(bins_);
    for (std::size_t k = 0; k < bins_; ++k) kernel_[k] = {spectrum_[k][0], spectrum_[k][1]};
  }

  ~RampFilter() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spectrum_);
  }

  RampFilter(const RampFilter&) = delete;
  RampFilter& operator=(const RampFilter&) = delete;

  void apply(const double* projection, double* filtered) {
    std::copy(projection, projection + detectors_, real_);
    std::fill(real_ + detectors_, real_ + length_, 0.0);
    fftw_execute(forward_);
    for (std::size_t k = 0; k < bins_; ++k) {
      const std::complex<double> v = std::complex<double>(spectrum_[k][0], spectrum_[k][1]) * kernel_[k];
      spectrum_[k][0] = v.real();
      spectrum_[k][1] = v.imag();
    }
    fftw_execute(inverse_);
    const double norm = 1.0 / static_cast<double>(length_);
    for (std::size_t i = 0; i < detectors_; ++i) filtered[i] = real_[i] * norm;
  }

 private:
  std::size_t detectors_, length_ = 0, bins_ = 0;
  double* real_ = nullptr;
  fftw_complex* spectrum_ = nullptr;
  fftw_plan forward_ = nullptr, inverse_ = nullptr;
  std::vector<std::complex<double>> kernel_;
};

}  // namespace

Sinogram radon(const Tensor<double>& slice, const std::vector<double>& angles, std::size_t detectors) {
  if (slice.rank() != 2) throw ShapeError("radon expects a 2D slice, got " + shape_to_string(slice.shape()));
  if (slice.dim(0) != slice.dim(1))
    throw std::invalid_argument("radon expects a square slice, got " + shape_to_string(slice.shape()));
  if (angles.empty()) throw std::invalid_argument("radon: empty angle list");
  if (detectors == 0) throw std::invalid_argument("radon: detector count must be positive");

  Sinogram sino;
  sino.angles = angles;
  sino.detectors = detectors;
  sino.rows = slice.dim(0);
  sino.cols = slice.dim(1);
  const double diag = std::hypot(static_cast<double>(sino.rows), static_cast<double>(sino.cols));
  sino.detector_spacing = diag / static_cast<double>(detectors);
  sino.values.assign(angles.size() * detectors, 0.0);
  sino.validate();

  const double cx = (static_cast<double>(sino.cols) - 1) / 2, cy = (static_cast<double>(sino.rows) - 1) / 2;
  const double dt = 0.5;
  const double reach = diag / 2 + 1;
  const long steps = static_cast<long>(std::ceil(reach / dt));
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const double c = std::cos(angles[a]), s = std::sin(angles[a]);
    for (std::size_t k = 0; k < detectors; ++k) {
      const double offset = (static_cast<double>(k) - (static_cast<double>(detectors) - 1) / 2) * sino.detector_spacing;
      double acc = 0;
      for (long i = -steps; i <= steps; ++i) {
        const double t = static_cast<double>(i) * dt;
        acc += bilinear(slice, cx + offset * c - t * s, cy + offset * s + t * c);
      }
      sino.values[a * detectors + k] = acc * dt;
    }
  }
  return sino;
}

Tensor<double> fbp(const Sinogram& sinogram) {
  sinogram.validate();
  const std::size_t views = sinogram.angles.size(), det = sinogram.detectors;
  std::vector<double> filtered(views * det);
  {
    RampFilter filter(det, sinogram.detector_spacing);
    for (std::size_t a = 0; a < views; ++a) filter.apply(&sinogram.values[a * det], &filtered[a * det]);
  }

  Tensor<double> img(Shape{sinogram.rows, sinogram.cols});
  const double cx = (static_cast<double>(sinogram.cols) - 1) / 2, cy = (static_cast<double>(sinogram.rows) - 1) / 2;
  const double center_bin = (static_cast<double>(det) - 1) / 2;
  const double weight = std::numbers::pi / static_cast<double>(views);
  for (std::size_t a = 0; a < views; ++a) {
    const double c = std::cos(sinogram.angles[a]) / sinogram.detector_spacing;
    const double s = std::sin(sinogram.angles[a]) / sinogram.detector_spacing;
    const double* q = &filtered[a * det];
    for (std::size_t r = 0; r < sinogram.rows; ++r) {
      const double dy = static_cast<double>(r) - cy;
      for (std::size_t col = 0; col < sinogram.cols; ++col) {
        const double bin = (static_cast<double>(col) - cx) * c + dy * s + center_bin;
        const double fb = std::floor(bin);
        const long b0 = static_cast<long>(fb);
        if (b0 < 0 || b0 + 1 >= static_cast<long>(det)) continue;
        const double w = bin - fb;
        img[r * sinogram.cols + col] += weight * ((1 - w) * q[b0] + w * q[b0 + 1]);
      }
    }
  }
  return img;
}

VolumePair make_pair(const VolumeHU& ground_truth, std::size_t views, double noise_sigma, std::uint64_t seed) {
  if (views < 8) throw std::invalid_argument("make_pair: need at least 8 views, got " + std::to_string(views));
  if (noise_sigma < 0) throw std::invalid_argument("make_pair: noise sigma must be non-negative");
  const auto& d = ground_truth.dims;
  if (d.rows != d.cols) throw std::invalid_argument("make_pair: slices must be square, got " + to_string(d));

  VolumePair pair{VolumeHU(d), ground_truth};
  pair.fbp.spacing = ground_truth.spacing;
  pair.fbp.window = ground_truth.window;
  const auto angles = uniform_angles(views);
  const std::size_t detectors = default_detector_count(d.rows, d.cols);
  for (std::size_t z = 0; z < d.slices; ++z) {
    Tensor<double> slice(Shape{d.rows, d.cols});
    for (std::size_t i = 0; i < d.plane(); ++i) slice[i] = ground_truth.voxels[z * d.plane() + i];
    Sinogram sino = radon(slice, angles, detectors);
    if (noise_sigma > 0) {
      std::mt19937_64 rng(counter_hash(seed, z));
      std::normal_distribution<double> noise(0.0, noise_sigma);
      for (auto& v : sino.values) v += noise(rng);
    }
    const Tensor<double> recon = fbp(sino);
    for (std::size_t i = 0; i < d.plane(); ++i) pair.fbp.voxels[z * d.plane() + i] = static_cast<float>(recon[i]);
  }
  return pair;
}

}  // namespace dlmbir
