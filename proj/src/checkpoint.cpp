#include <fstream>
#include <map>
#include <sstream>

#include "dlmbir/detail/binary_io.hpp"
#include "dlmbir/network.hpp"

namespace dlmbir {

namespace {

constexpr const char* kMagic = "dlmbir-checkpoint 1";

using Kind = FormatError::Kind;

// Shapes the variant implies, in the same order as the layer lines.
struct LayerDecl {
  Shape weights;
  bool bn = false;
  bool relu = true;
};

std::vector<LayerDecl> expected_layers(const NetworkVariant& v) {
  std::vector<LayerDecl> out;
  for (std::size_t l = 0; l < v.depth; ++l) {
    const bool first = l == 0, last = l + 1 == v.depth;
    LayerDecl d;
    d.weights = {last ? 1 : v.width, first ? v.input_channels() : v.width, 3, 3};
    if (v.volumetric()) d.weights.push_back(3);
    d.bn = !first && !last;
    d.relu = !last;
    out.push_back(d);
  }
  return out;
}

std::string layer_line(std::size_t index, const Shape& weights, bool bn, bool relu) {
  std::ostringstream os;
  os << "layer = " << index << " conv";
  for (auto d : weights) os << ' ' << d;
  os << " bn " << (bn ? 1 : 0) << " relu " << (relu ? 1 : 0);
  return os.str();
}

LayerDecl parse_layer_line(const std::string& value, const std::string& what) {
  std::istringstream is(value);
  std::size_t index = 0;
  std::string tag;
  if (!(is >> index >> tag) || tag != "conv")
    throw FormatError(Kind::corrupt_header, what + ": malformed layer line '" + value + "'");
  LayerDecl d;
  std::string tok;
  while (is >> tok && tok != "bn") {
    try {
      d.weights.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw FormatError(Kind::corrupt_header, what + ": malformed layer line '" + value + "'");
    }
  }
  int bn = -1, relu = -1;
  if (tok != "bn" || !(is >> bn) || !(is >> tok) || tok != "relu" || !(is >> relu))
    throw FormatError(Kind::corrupt_header, what + ": malformed layer line '" + value + "'");
  d.bn = bn != 0;
  d.relu = relu != 0;
  return d;
}

std::uint64_t parse_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& what) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(Kind::corrupt_header, what + ": manifest lacks '" + key + "'");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError(Kind::corrupt_header, what + ": manifest key '" + key + "' is not an integer");
  }
}

struct ParsedManifest {
  CheckpointInfo info;
  std::vector<LayerDecl> layers;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  std::uint64_t scalars = 0;
};

ParsedManifest parse_manifest(std::istream& is, const std::string& what) {
  const auto entries = detail::read_text_header(is, kMagic, what);
  std::map<std::string, std::string> kv;
  ParsedManifest m;
  for (const auto& [k, v] : entries) {
    if (k == "layer")
      m.layers.push_back(parse_layer_line(v, what));
    else
      kv[k] = v;
  }
  try {
    m.info.variant.kind = parse_network_kind(kv.count("kind") ? kv["kind"] : "");
    m.info.precision = parse_precision(kv.count("precision") ? kv["precision"] : "");
    m.bn_momentum = std::stod(kv.count("bn_momentum") ? kv["bn_momentum"] : "");
    m.bn_epsilon = std::stod(kv.count("bn_epsilon") ? kv["bn_epsilon"] : "");
  } catch (const std::exception& e) {
    throw FormatError(Kind::corrupt_header, what + ": " + e.what());
  }
  m.info.variant.window = parse_u64(kv, "window", what);
  m.info.variant.depth = parse_u64(kv, "depth", what);
  m.info.variant.width = parse_u64(kv, "width", what);
  m.info.step = parse_u64(kv, "step", what);
  m.info.seed = parse_u64(kv, "seed", what);
  m.scalars = parse_u64(kv, "scalars", what);
  try {
    m.info.variant.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(Kind::shape_mismatch, what + ": " + e.what());
  }

  const auto expected = expected_layers(m.info.variant);
  if (m.layers.size() != expected.size())
    throw FormatError(Kind::shape_mismatch, what + ": manifest declares depth " +
                                                std::to_string(m.info.variant.depth) + " but lists " +
                                                std::to_string(m.layers.size()) + " layers");
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < expected.size(); ++l) {
    const auto& got = m.layers[l];
    if (got.weights != expected[l].weights || got.bn != expected[l].bn || got.relu != expected[l].relu)
      throw FormatError(Kind::shape_mismatch, what + ": layer " + std::to_string(l + 1) + " declares " +
                                                  shape_to_string(got.weights) + ", variant implies " +
                                                  shape_to_string(expected[l].weights));
    total += shape_product(got.weights) + got.weights[0] + (got.bn ? 4 * got.weights[0] : 0);
  }
  if (total != m.scalars)
    throw FormatError(Kind::shape_mismatch, what + ": manifest declares " + std::to_string(m.scalars) +
                                                " scalars but the layer shapes need " + std::to_string(total));
  return m;
}

template <typename T>
std::vector<const Tensor<T>*> blob_order(const NetworkParams<T>& params) {
  auto out = params.trainable();
  for (const auto& layer : params.layers)
    if (layer.bn) {
      out.push_back(&layer.bn->running_mean);
      out.push_back(&layer.bn->running_var);
    }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> blob_order(NetworkParams<T>& params) {
  auto out = params.trainable();
  for (auto& layer : params.layers)
    if (layer.bn) {
      out.push_back(&layer.bn->running_mean);
      out.push_back(&layer.bn->running_var);
    }
  return out;
}

template <typename Stored, typename T>
void read_blob(std::istream& is, NetworkParams<T>& params, const std::string& what) {
  for (auto* t : blob_order(params))
    if (!detail::read_le<Stored>(is, t->raw(), t->size()))
      throw FormatError(Kind::truncated, what + ": parameter blob is shorter than the manifest declares");
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(Kind::shape_mismatch, what + ": parameter blob is longer than the manifest declares");
}

}  // namespace

template <typename T>
void save_checkpoint(const NetworkParams<T>& params, const std::filesystem::path& path,
                     const std::string& extra_manifest) {
  const auto& v = params.variant;
  const Precision precision = std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
  const BatchNormState<T>* any_bn = nullptr;
  for (const auto& layer : params.layers)
    if (layer.bn) any_bn = &*layer.bn;

  std::ostringstream header;
  header.precision(17);
  header << kMagic << '\n'
         << "kind = " << to_string(v.kind) << '\n'
         << "window = " << v.window << '\n'
         << "depth = " << v.depth << '\n'
         << "width = " << v.width << '\n'
         << "precision = " << to_string(precision) << '\n'
         << "step = " << params.step << '\n'
         << "seed = " << params.seed << '\n'
         << "bn_momentum = " << (any_bn ? any_bn->momentum : 0.9) << '\n'
         << "bn_epsilon = " << (any_bn ? any_bn->epsilon : 1e-5) << '\n';
  std::size_t scalars = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    header << layer_line(l + 1, layer.conv.weights.shape(), layer.bn.has_value(), layer.relu) << '\n';
    scalars += layer.conv.weights.size() + layer.conv.bias.size() + (layer.bn ? 4 * layer.bn->channels() : 0);
  }
  header << "scalars = " << scalars << '\n';
  std::istringstream extra(extra_manifest);
  for (std::string line; std::getline(extra, line);)
    if (!detail::trim(line).empty()) header << "# " << detail::trim(line) << '\n';
  header << detail::kEndHeader << '\n';

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(Kind::io, "cannot open checkpoint '" + path.string() + "' for writing");
  os << header.str();
  for (const auto* t : blob_order(params)) detail::write_le<T>(os, t->raw(), t->size());
  if (!os) throw FormatError(Kind::io, "failed writing checkpoint '" + path.string() + "'");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(Kind::not_found, "cannot open checkpoint '" + path.string() + "'");
  return parse_manifest(is, "checkpoint '" + path.string() + "'").info;
}

template <typename T>
NetworkParams<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string what = "checkpoint '" + path.string() + "'";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(Kind::not_found, "cannot open " + what);
  const ParsedManifest m = parse_manifest(is, what);

  NetworkParams<T> params = build_network<T>(m.info.variant, 0);
  params.seed = m.info.seed;
  params.step = m.info.step;
  for (auto& layer : params.layers)
    if (layer.bn) {
      layer.bn->momentum = m.bn_momentum;
      layer.bn->epsilon = m.bn_epsilon;
    }
  if (m.info.precision == Precision::f32)
    read_blob<float>(is, params, what);
  else
    read_blob<double>(is, params, what);
  return params;
}

template void save_checkpoint(const NetworkParams<float>&, const std::filesystem::path&, const std::string&);
template void save_checkpoint(const NetworkParams<double>&, const std::filesystem::path&, const std::string&);
template NetworkParams<float> load_checkpoint<float>(const std::filesystem::path&);
template NetworkParams<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace dlmbir
