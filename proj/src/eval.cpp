#include "dlmbir/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dlmbir {

namespace {

void require_same_dims(const VolumeHU& a, const VolumeHU& b, const std::string& context) {
  if (a.dims == b.dims) return;
  throw ShapeError(context + ": volume dims " + to_string(a.dims) + " do not match " + to_string(b.dims));
}

MaskedError masked_range(const VolumeHU& x, const VolumeHU& reference, std::size_t begin, std::size_t end,
                         HuRange mask, HuRange window) {
  if (!(window.lo < window.hi)) throw std::invalid_argument("normalization window must satisfy lo < hi");
  const double scale = 1.0 / (window.hi - window.lo);
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double ref = reference.voxels[i];
    if (ref < mask.lo || ref > mask.hi) continue;
    const double d = (ref - static_cast<double>(x.voxels[i])) * scale;
    acc += d * d;
    ++count;
  }
  if (count == 0)
    throw EmptyMaskError("no reference voxel lies in [" + std::to_string(mask.lo) + ", " + std::to_string(mask.hi) +
                         "] HU");
  return {acc / static_cast<double>(count), count};
}

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

MaskedError masked_mse(const VolumeHU& x, const VolumeHU& reference, HuRange mask, HuRange window) {
  require_same_dims(x, reference, "masked_mse");
  return masked_range(x, reference, 0, reference.voxels.size(), mask, window);
}

MaskedError masked_mse_slice(const VolumeHU& x, const VolumeHU& reference, std::size_t slice, HuRange mask,
                             HuRange window) {
  require_same_dims(x, reference, "masked_mse_slice");
  if (slice >= reference.dims.slices) throw std::out_of_range("slice index out of range");
  const std::size_t plane = reference.dims.plane();
  return masked_range(x, reference, slice * plane, (slice + 1) * plane, mask, window);
}

double psnr(double mse) {
  if (std::isnan(mse) || mse < 0) throw std::invalid_argument("psnr: mse must be a non-negative number");
  if (mse == 0) return kInf;
  return 10.0 * std::log10(1.0 / mse);
}

MetricsReport per_slice_report(const std::map<std::string, VolumeHU>& methods, const VolumeHU& reference,
                               const VolumeHU& fbp, HuRange mask, HuRange window) {
  require_same_dims(fbp, reference, "per_slice_report (fbp)");
  for (const auto& [label, volume] : methods) require_same_dims(volume, reference, "per_slice_report (" + label + ")");

  MetricsReport report;
  report.window = window;
  report.mask = mask;

  // Baseline per slice; NaN marks slices with an empty mask.
  std::vector<double> baseline(reference.dims.slices, kNaN);
  for (std::size_t z = 0; z < reference.dims.slices; ++z) {
    try {
      baseline[z] = psnr(masked_mse_slice(fbp, reference, z, mask, window).mse);
    } catch (const EmptyMaskError&) {
    }
  }

  for (const auto& [label, volume] : methods) {
    MethodSummary summary;
    summary.method = label;
    double psnr_sum = 0, imp_sum = 0;
    std::size_t finite = 0, finite_imp = 0;
    summary.max_improvement_db = -kInf;
    summary.min_improvement_db = kInf;
    for (std::size_t z = 0; z < reference.dims.slices; ++z) {
      if (std::isnan(baseline[z])) continue;
      const MaskedError e = masked_mse_slice(volume, reference, z, mask, window);
      const double p = psnr(e.mse);
      report.rows.push_back({label, z, p, e.mse, e.count});
      ++summary.slices;
      if (!std::isfinite(p)) {
        ++summary.infinite_slices;
        continue;
      }
      psnr_sum += p;
      ++finite;
      if (std::isfinite(baseline[z])) {
        const double imp = p - baseline[z];
        imp_sum += imp;
        ++finite_imp;
        summary.max_improvement_db = std::max(summary.max_improvement_db, imp);
        summary.min_improvement_db = std::min(summary.min_improvement_db, imp);
      }
    }
    summary.mean_slice_psnr_db = finite ? psnr_sum / static_cast<double>(finite) : (summary.infinite_slices ? kInf : kNaN);
    if (finite_imp) {
      summary.mean_improvement_db = imp_sum / static_cast<double>(finite_imp);
    } else {
      const double v = summary.infinite_slices ? kInf : kNaN;
      summary.mean_improvement_db = summary.max_improvement_db = summary.min_improvement_db = v;
    }
    try {
      summary.volume_psnr_db = psnr(masked_mse(volume, reference, mask, window).mse);
    } catch (const EmptyMaskError&) {
      summary.volume_psnr_db = kNaN;
    }
    report.summaries.push_back(summary);
  }
  return report;
}

namespace {

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), pixels_(w * h * 3, 255) {}

  void set(long x, long y, std::array<unsigned char, 3> rgb) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
    auto* p = &pixels_[(static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)) * 3];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }

  void line(long x0, long y0, long x1, long y1, std::array<unsigned char, 3> rgb) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      set(x0, y0, rgb);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open plot '" + path.string() + "' for writing");
    os << "P6\n" << w_ << ' ' << h_ << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels_.data()), static_cast<std::streamsize>(pixels_.size()));
    if (!os) throw FormatError(FormatError::Kind::io, "failed writing plot '" + path.string() + "'");
  }

 private:
  std::size_t w_, h_;
  std::vector<unsigned char> pixels_;
};

// One polyline per method, PSNR against slice index.
void plot_report(const MetricsReport& report, const PlotOptions& opt, const std::filesystem::path& path) {
  if (opt.width < 32 || opt.height < 32) throw std::invalid_argument("plot canvas must be at least 32x32");
  Canvas canvas(opt.width, opt.height);
  const long margin = 16;
  const long w = static_cast<long>(opt.width), h = static_cast<long>(opt.height);
  canvas.line(margin, h - margin, w - margin, h - margin, {0, 0, 0});
  canvas.line(margin, margin, margin, h - margin, {0, 0, 0});

  double lo = kInf, hi = -kInf;
  std::size_t max_slice = 0;
  for (const auto& r : report.rows) {
    max_slice = std::max(max_slice, r.slice);
    if (!std::isfinite(r.psnr_db)) continue;
    lo = std::min(lo, r.psnr_db);
    hi = std::max(hi, r.psnr_db);
  }
  if (!(lo <= hi)) {
    canvas.write(path);
    return;
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  static constexpr std::array<std::array<unsigned char, 3>, 6> palette{
      {{31, 119, 180}, {214, 39, 40}, {200, 0, 200}, {44, 160, 44}, {255, 127, 14}, {100, 100, 100}}};
  auto px = [&](std::size_t slice) {
    return margin + static_cast<long>(std::lround(static_cast<double>(slice) / std::max<std::size_t>(max_slice, 1) *
                                                  static_cast<double>(w - 2 * margin)));
  };
  auto py = [&](double v) {
    return h - margin - static_cast<long>(std::lround((v - lo) / (hi - lo) * static_cast<double>(h - 2 * margin)));
  };
  std::size_t color = 0;
  for (const auto& s : report.summaries) {
    const auto rgb = palette[color++ % palette.size()];
    bool have_prev = false;
    long prev_x = 0, prev_y = 0;
    for (const auto& r : report.rows) {
      if (r.method != s.method) continue;
      if (!std::isfinite(r.psnr_db)) {
        have_prev = false;
        continue;
      }
      const long x = px(r.slice), y = py(r.psnr_db);
      if (have_prev)
        canvas.line(prev_x, prev_y, x, y, rgb);
      else
        canvas.set(x, y, rgb);
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
  }
  canvas.write(path);
}

}  // namespace

EmittedFiles emit_report(const MetricsReport& report, const std::filesystem::path& csv_path, const PlotOptions& plot) {
  EmittedFiles files;
  files.csv = csv_path;
  {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open report '" + csv_path.string() + "' for writing");
    os << "method,slice,psnr_db,mse,masked_voxels\n";
    for (const auto& r : report.rows)
      os << r.method << ',' << r.slice << ',' << format_number(r.psnr_db) << ',' << format_number(r.mse) << ','
         << r.masked_voxels << '\n';
    if (!os) throw FormatError(FormatError::Kind::io, "failed writing report '" + csv_path.string() + "'");
  }

  files.summary_csv = csv_path.parent_path() / (csv_path.stem().string() + "_summary.csv");
  {
    std::ofstream os(files.summary_csv, std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open '" + files.summary_csv.string() + "' for writing");
    os << "method,mean_slice_psnr_db,volume_psnr_db,max_improvement_db,mean_improvement_db,min_improvement_db,"
          "slices,infinite_slices,window_lo_hu,window_hi_hu,mask_lo_hu,mask_hi_hu\n";
    for (const auto& s : report.summaries)
      os << s.method << ',' << format_number(s.mean_slice_psnr_db) << ',' << format_number(s.volume_psnr_db) << ','
         << format_number(s.max_improvement_db) << ',' << format_number(s.mean_improvement_db) << ','
         << format_number(s.min_improvement_db) << ',' << s.slices << ',' << s.infinite_slices << ','
         << format_number(report.window.lo) << ',' << format_number(report.window.hi) << ','
         << format_number(report.mask.lo) << ',' << format_number(report.mask.hi) << '\n';
    if (!os) throw FormatError(FormatError::Kind::io, "failed writing '" + files.summary_csv.string() + "'");
  }

  if (plot.enabled) {
    files.plot = csv_path.parent_path() / (plot.dataset + "_psnr.ppm");
    plot_report(report, plot, files.plot);
  }
  return files;
}

std::vector<MetricsRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError(FormatError::Kind::not_found, "cannot open report '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != "method,slice,psnr_db,mse,masked_voxels")
    throw FormatError(FormatError::Kind::corrupt_header, path.string() + ": unexpected report header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[5];
    for (auto& s : f)
      if (!std::getline(ls, s, ','))
        throw FormatError(FormatError::Kind::corrupt_header, path.string() + ": bad row '" + line + "'");
    try {
      rows.push_back({f[0], std::stoul(f[1]), std::stod(f[2]), std::stod(f[3]), std::stoul(f[4])});
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::corrupt_header, path.string() + ": bad row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace dlmbir
