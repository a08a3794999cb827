#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dlmbir/data_sim.hpp"
#include "dlmbir/detail/binary_io.hpp"

namespace dlmbir {

namespace {

constexpr const char* kMagic = "dlmbir-volume 1";
using Kind = FormatError::Kind;

template <std::size_t N>
std::array<double, N> parse_numbers(const std::string& text, const std::string& key, const std::string& what) {
  std::istringstream is(text);
  std::array<double, N> out{};
  for (auto& v : out)
    if (!(is >> v)) throw FormatError(Kind::corrupt_header, what + ": cannot parse '" + key + " = " + text + "'");
  std::string rest;
  if (is >> rest) throw FormatError(Kind::corrupt_header, what + ": trailing data in '" + key + "'");
  return out;
}

}  // namespace

void save_volume(const VolumeHU& volume, const std::filesystem::path& path) {
  if (volume.voxels.size() != volume.dims.voxels())
    throw ShapeError("volume holds " + std::to_string(volume.voxels.size()) + " voxels but dims are " +
                     to_string(volume.dims));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(Kind::io, "cannot open volume '" + path.string() + "' for writing");
  os.precision(17);
  os << kMagic << '\n'
     << "dims = " << volume.dims.slices << ' ' << volume.dims.rows << ' ' << volume.dims.cols << '\n'
     << "spacing = " << volume.spacing[0] << ' ' << volume.spacing[1] << ' ' << volume.spacing[2] << '\n'
     << "hu_window = " << volume.window.lo << ' ' << volume.window.hi << '\n'
     << "scalar = float32\n"
     << detail::kEndHeader << '\n';
  detail::write_le<float>(os, volume.voxels.data(), volume.voxels.size());
  if (!os) throw FormatError(Kind::io, "failed writing volume '" + path.string() + "'");
}

VolumeHU load_volume(const std::filesystem::path& path) {
  const std::string what = "volume '" + path.string() + "'";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(Kind::not_found, "cannot open " + what);
  std::map<std::string, std::string> kv;
  for (auto& [k, v] : detail::read_text_header(is, kMagic, what)) kv[k] = v;
  for (const char* key : {"dims", "spacing", "hu_window", "scalar"})
    if (!kv.count(key)) throw FormatError(Kind::corrupt_header, what + ": header lacks '" + key + "'");
  if (kv["scalar"] != "float32")
    throw FormatError(Kind::corrupt_header, what + ": unsupported scalar type '" + kv["scalar"] + "'");

  const auto dims = parse_numbers<3>(kv["dims"], "dims", what);
  for (double d : dims)
    if (d < 1 || d != std::floor(d)) throw FormatError(Kind::corrupt_header, what + ": dims must be positive integers");
  VolumeHU volume(VolumeDims{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                             static_cast<std::size_t>(dims[2])});
  volume.spacing = parse_numbers<3>(kv["spacing"], "spacing", what);
  const auto window = parse_numbers<2>(kv["hu_window"], "hu_window", what);
  volume.window = {window[0], window[1]};

  if (!detail::read_le<float>(is, volume.voxels.data(), volume.voxels.size()))
    throw FormatError(Kind::truncated, what + ": voxel blob is shorter than dims " + to_string(volume.dims));
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(Kind::shape_mismatch, what + ": voxel blob is longer than dims " + to_string(volume.dims));
  return volume;
}

}  // namespace dlmbir
