#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dlmbir/data_sim.hpp"

namespace dlmbir {

struct MaskedError {
  double mse = 0;
  std::size_t count = 0;
};

/// MSE over voxels whose *reference* value lies in `mask` (HU). Errors are
/// measured on window-normalized intensities: ((x - ref) / (hi - lo))^2.
/// Throws EmptyMaskError when no voxel qualifies.
MaskedError masked_mse(const VolumeHU& x, const VolumeHU& reference, HuRange mask = kDefaultHuMask,
                       HuRange window = kDefaultHuWindow);

/// Same, restricted to one slice.
MaskedError masked_mse_slice(const VolumeHU& x, const VolumeHU& reference, std::size_t slice,
                             HuRange mask = kDefaultHuMask, HuRange window = kDefaultHuWindow);

/// 10 log10(1 / mse); +inf for mse == 0.
double psnr(double mse);

struct MetricsRow {
  std::string method;
  std::size_t slice = 0;
  double psnr_db = 0;
  double mse = 0;
  std::size_t masked_voxels = 0;

  bool operator==(const MetricsRow&) const = default;
};

struct MethodSummary {
  std::string method;
  double mean_slice_psnr_db = 0;  // mean over finite per-slice values
  double volume_psnr_db = 0;      // PSNR of the masked MSE pooled over the whole volume
  double max_improvement_db = 0;  // vs FBP on the same slices
  double mean_improvement_db = 0;
  double min_improvement_db = 0;
  std::size_t slices = 0;
  std::size_t infinite_slices = 0;  // excluded from the means
};

struct MetricsReport {
  std::vector<MetricsRow> rows;  // ordered by (method, slice)
  std::vector<MethodSummary> summaries;
  HuRange window = kDefaultHuWindow;
  HuRange mask = kDefaultHuMask;
};

/// Per-slice masked PSNR for every method plus Table-2 style summaries.
/// Slices whose reference mask is empty are omitted.
MetricsReport per_slice_report(const std::map<std::string, VolumeHU>& methods, const VolumeHU& reference,
                               const VolumeHU& fbp, HuRange mask = kDefaultHuMask,
                               HuRange window = kDefaultHuWindow);

struct PlotOptions {
  bool enabled = false;
  std::string dataset = "dataset";
  std::size_t width = 640;
  std::size_t height = 400;
};

struct EmittedFiles {
  std::filesystem::path csv;
  std::filesystem::path summary_csv;
  std::filesystem::path plot;  // empty unless plotting was enabled
};

/// Writes `csv_path` (method,slice,psnr_db,mse,masked_voxels), a sibling
/// *_summary.csv, and optionally <dataset>_psnr.ppm next to them.
EmittedFiles emit_report(const MetricsReport& report, const std::filesystem::path& csv_path,
                         const PlotOptions& plot = {});

/// Parses the per-slice CSV written by emit_report.
std::vector<MetricsRow> read_report_csv(const std::filesystem::path& path);

}  // namespace dlmbir
