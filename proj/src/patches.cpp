#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dlmbir/data_sim.hpp"

namespace dlmbir {

std::string to_string(Augmentation aug) {
  switch (aug) {
    case Augmentation::identity:
      return "identity";
    case Augmentation::flip_horizontal:
      return "flip_h";
    case Augmentation::flip_vertical:
      return "flip_v";
    case Augmentation::rotate90:
      return "rot90";
    case Augmentation::rotate180:
      return "rot180";
    case Augmentation::rotate270:
      return "rot270";
  }
  return "?";
}

namespace {

Augmentation parse_augmentation(const std::string& name) {
  for (std::size_t i = 0; i < kAugmentationCount; ++i)
    if (to_string(static_cast<Augmentation>(i)) == name) return static_cast<Augmentation>(i);
  throw std::invalid_argument("unknown augmentation tag '" + name + "'");
}

void check_volumes(const Shape& y, const Shape& x) {
  if (y.size() != 3) throw ShapeError("patch source must be (slices, rows, cols), got " + shape_to_string(y));
  require_same_shape(x, y, "extract_patches ground truth");
}

void check_spec(const Shape& dims, const PatchSpec& spec) {
  if (spec.patch_size == 0 || spec.patch_size > std::min(dims[1], dims[2]))
    throw std::invalid_argument("patch size " + std::to_string(spec.patch_size) + " does not fit slices of " +
                                std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
  if (spec.window == 0 || spec.window % 2 == 0 || spec.window > dims[0])
    throw std::invalid_argument("patch window " + std::to_string(spec.window) + " must be odd and at most " +
                                std::to_string(dims[0]) + " slices");
  if (spec.count == 0) throw std::invalid_argument("patch count must be at least 1");
}

std::size_t clamp_slice(long z, std::size_t slices) {
  return static_cast<std::size_t>(std::clamp<long>(z, 0, static_cast<long>(slices) - 1));
}

template <typename T>
void copy_crop(const Tensor<T>& vol, std::size_t z, std::size_t row, std::size_t col, std::size_t p, T* dst) {
  const std::size_t cols = vol.dim(2);
  const T* src = vol.raw() + (z * vol.dim(1) + row) * cols + col;
  for (std::size_t r = 0; r < p; ++r) std::copy(src + r * cols, src + r * cols + p, dst + r * p);
}

template <typename T>
void residual_crop(const Tensor<T>& y, const Tensor<T>& x, std::size_t z, std::size_t row, std::size_t col,
                   std::size_t p, T* dst) {
  const std::size_t cols = y.dim(2);
  const std::size_t base = (z * y.dim(1) + row) * cols + col;
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) dst[r * p + c] = y[base + r * cols + c] - x[base + r * cols + c];
}

template <typename T>
void build_pair(const Tensor<T>& y, const Tensor<T>& x, const PatchIndex& idx, const PatchSpec& spec, T* input,
                T* target) {
  const std::size_t p = spec.patch_size, plane = p * p, slices = y.dim(0);
  const long half = static_cast<long>(spec.window / 2);
  Tensor<T> in(Shape{spec.window, p, p});
  const std::size_t target_slices = spec.volumetric_target ? spec.window : 1;
  Tensor<T> tg(Shape{target_slices, p, p});
  for (std::size_t j = 0; j < spec.window; ++j) {
    const std::size_t z = clamp_slice(static_cast<long>(idx.z) + static_cast<long>(j) - half, slices);
    copy_crop(y, z, idx.row, idx.col, p, in.raw() + j * plane);
    if (spec.volumetric_target) residual_crop(y, x, z, idx.row, idx.col, p, tg.raw() + j * plane);
  }
  if (!spec.volumetric_target) residual_crop(y, x, idx.z, idx.row, idx.col, p, tg.raw());
  in = augment_block(in, idx.aug);
  tg = augment_block(tg, idx.aug);
  std::copy(in.data().begin(), in.data().end(), input);
  std::copy(tg.data().begin(), tg.data().end(), target);
}

}  // namespace

template <typename T>
Tensor<T> augment_block(const Tensor<T>& block, Augmentation aug) {
  if (block.rank() != 3 || block.dim(1) != block.dim(2))
    throw ShapeError("augment_block expects (k, p, p), got " + shape_to_string(block.shape()));
  if (aug == Augmentation::identity) return block;
  const std::size_t k = block.dim(0), p = block.dim(1);
  Tensor<T> out(block.shape());
  for (std::size_t s = 0; s < k; ++s) {
    const T* in = block.raw() + s * p * p;
    T* o = out.raw() + s * p * p;
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c = 0; c < p; ++c) {
        std::size_t sr = r, sc = c;
        switch (aug) {
          case Augmentation::identity:
            break;
          case Augmentation::flip_horizontal:
            sc = p - 1 - c;
            break;
          case Augmentation::flip_vertical:
            sr = p - 1 - r;
            break;
          case Augmentation::rotate90:
            sr = c;
            sc = p - 1 - r;
            break;
          case Augmentation::rotate180:
            sr = p - 1 - r;
            sc = p - 1 - c;
            break;
          case Augmentation::rotate270:
            sr = p - 1 - c;
            sc = r;
            break;
        }
        o[r * p + c] = in[sr * p + sc];
      }
  }
  return out;
}

template <typename T>
void PatchSet<T>::append(const PatchSet& other) {
  if (other.indices.empty()) return;
  if (indices.empty()) {
    *this = other;
    return;
  }
  if (other.window != window || other.patch_size != patch_size || other.volumetric_target != volumetric_target)
    throw ShapeError("cannot append patch sets with different geometry");
  auto join = [](const Tensor<T>& a, const Tensor<T>& b) {
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<T> data(a.data().begin(), a.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return Tensor<T>(shape, std::move(data));
  };
  inputs = join(inputs, other.inputs);
  targets = join(targets, other.targets);
  indices.insert(indices.end(), other.indices.begin(), other.indices.end());
}

template <typename T>
PatchSet<T> extract_patches(const Tensor<T>& y, const Tensor<T>& x, const PatchSpec& spec) {
  check_volumes(y.shape(), x.shape());
  check_spec(y.shape(), spec);
  const std::size_t slices = y.dim(0), p = spec.patch_size;
  const std::size_t row_span = y.dim(1) - p + 1, col_span = y.dim(2) - p + 1;

  PatchSet<T> set;
  set.window = spec.window;
  set.patch_size = p;
  set.volumetric_target = spec.volumetric_target;
  set.inputs = Tensor<T>(Shape{spec.count, spec.window, p, p});
  set.targets = Tensor<T>(Shape{spec.count, set.target_slices(), p, p});
  set.indices.resize(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    PatchIndex idx;
    idx.volume_id = spec.volume_id;
    idx.z = static_cast<std::uint32_t>(counter_hash(spec.seed, 4 * i) % slices);
    idx.row = static_cast<std::uint32_t>(counter_hash(spec.seed, 4 * i + 1) % row_span);
    idx.col = static_cast<std::uint32_t>(counter_hash(spec.seed, 4 * i + 2) % col_span);
    idx.aug = spec.augment ? static_cast<Augmentation>(counter_hash(spec.seed, 4 * i + 3) % kAugmentationCount)
                           : Augmentation::identity;
    build_pair(y, x, idx, spec, set.inputs.outer(i).data(), set.targets.outer(i).data());
    set.indices[i] = idx;
  }
  return set;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reproduce_patch(const Tensor<T>& y, const Tensor<T>& x, const PatchIndex& index,
                                                const PatchSpec& spec) {
  check_volumes(y.shape(), x.shape());
  check_spec(y.shape(), spec);
  const std::size_t p = spec.patch_size;
  if (index.z >= y.dim(0) || index.row + p > y.dim(1) || index.col + p > y.dim(2))
    throw std::invalid_argument("patch index lies outside the volume");
  Tensor<T> in(Shape{spec.window, p, p});
  Tensor<T> tg(Shape{spec.volumetric_target ? spec.window : 1, p, p});
  build_pair(y, x, index, spec, in.raw(), tg.raw());
  return {std::move(in), std::move(tg)};
}

template <typename T>
void save_patchset(const PatchSet<T>& set, const std::filesystem::path& prefix) {
  if (set.indices.empty()) throw std::invalid_argument("save_patchset: empty patch set");
  const std::size_t n = set.size(), p = set.patch_size;
  auto to_volume = [&](const Tensor<T>& t) {
    VolumeHU v(VolumeDims{t.dim(0) * t.dim(1), p, p});
    std::transform(t.data().begin(), t.data().end(), v.voxels.begin(), [](T s) { return static_cast<float>(s); });
    return v;
  };
  save_volume(to_volume(set.inputs), prefix.string() + "_inputs.vol");
  save_volume(to_volume(set.targets), prefix.string() + "_targets.vol");
  const std::string csv = prefix.string() + "_index.csv";
  std::ofstream os(csv, std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open '" + csv + "' for writing");
  os << "volume_id,z,row,col,aug_tag\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ix = set.indices[i];
    os << ix.volume_id << ',' << ix.z << ',' << ix.row << ',' << ix.col << ',' << to_string(ix.aug) << '\n';
  }
  if (!os) throw FormatError(FormatError::Kind::io, "failed writing '" + csv + "'");
}

template <typename T>
PatchSet<T> load_patchset(const std::filesystem::path& prefix) {
  const VolumeHU inputs = load_volume(prefix.string() + "_inputs.vol");
  const VolumeHU targets = load_volume(prefix.string() + "_targets.vol");
  const std::string csv = prefix.string() + "_index.csv";
  std::ifstream is(csv);
  if (!is) throw FormatError(FormatError::Kind::not_found, "cannot open '" + csv + "'");
  std::string line;
  if (!std::getline(is, line) || line != "volume_id,z,row,col,aug_tag")
    throw FormatError(FormatError::Kind::corrupt_header, csv + ": unexpected header");
  PatchSet<T> set;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field[5];
    for (auto& f : field)
      if (!std::getline(ls, f, ',')) throw FormatError(FormatError::Kind::corrupt_header, csv + ": bad row '" + line + "'");
    PatchIndex ix;
    try {
      ix.volume_id = static_cast<std::uint32_t>(std::stoul(field[0]));
      ix.z = static_cast<std::uint32_t>(std::stoul(field[1]));
      ix.row = static_cast<std::uint32_t>(std::stoul(field[2]));
      ix.col = static_cast<std::uint32_t>(std::stoul(field[3]));
      ix.aug = parse_augmentation(field[4]);
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::corrupt_header, csv + ": bad row '" + line + "'");
    }
    set.indices.push_back(ix);
  }
  const std::size_t n = set.indices.size();
  if (n == 0 || inputs.dims.slices % n != 0 || targets.dims.slices % n != 0 || inputs.dims.rows != targets.dims.rows)
    throw FormatError(FormatError::Kind::shape_mismatch, prefix.string() + ": patch containers disagree with the index");
  set.window = inputs.dims.slices / n;
  set.patch_size = inputs.dims.rows;
  const std::size_t tslices = targets.dims.slices / n;
  set.volumetric_target = tslices > 1;
  if (tslices != 1 && tslices != set.window)
    throw FormatError(FormatError::Kind::shape_mismatch, prefix.string() + ": target depth matches neither 1 nor the window");
  const std::size_t p = set.patch_size;
  set.inputs = Tensor<T>(Shape{n, set.window, p, p}, std::vector<T>(inputs.voxels.begin(), inputs.voxels.end()));
  set.targets = Tensor<T>(Shape{n, tslices, p, p}, std::vector<T>(targets.voxels.begin(), targets.voxels.end()));
  return set;
}

#define DLMBIR_INSTANTIATE(T)                                                                                 \
  template Tensor<T> augment_block(const Tensor<T>&, Augmentation);                                           \
  template struct PatchSet<T>;                                                                                \
  template PatchSet<T> extract_patches(const Tensor<T>&, const Tensor<T>&, const PatchSpec&);                 \
  template std::pair<Tensor<T>, Tensor<T>> reproduce_patch(const Tensor<T>&, const Tensor<T>&, const PatchIndex&, \
                                                           const PatchSpec&);                                 \
  template void save_patchset(const PatchSet<T>&, const std::filesystem::path&);                              \
  template PatchSet<T> load_patchset<T>(const std::filesystem::path&);

DLMBIR_INSTANTIATE(float)
DLMBIR_INSTANTIATE(double)

}  // namespace dlmbir
