// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "dlmbir/errors.hpp"
#include "dlmbir/eval.hpp"
#include "dlmbir/gradcheck.hpp"
#include "dlmbir/inference.hpp"
#include "dlmbir/trainer.hpp"
#include "oracles.hpp"

using namespace dlmbir;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// ------------------------------------------------------------------ 1

Outcome oracle_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1);
  double worst = 0;
  int instances = 0;
  for (int i = 0; i < 120; ++i) {
    const bool volumetric = i % 2 == 1;
    const std::size_t ci = 1 + rng() % 4, co = 1 + rng() % 4;
    const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8, d = 1 + rng() % 8;
    const Shape in_shape = volumetric ? Shape{ci, d, h, w} : Shape{ci, h, w};
    const Shape w_shape = volumetric ? Shape{co, ci, 3, 3, 3} : Shape{co, ci, 3, 3};
    const auto in = oracle::random_tensor<float>(in_shape, rng);
    const ConvKernel<float> k(oracle::random_tensor<float>(w_shape, rng), oracle::random_tensor<float>({co}, rng));
    const auto got = conv_forward(in, k);
    const auto want = volumetric ? oracle::conv3d(in, k.weights, k.bias) : oracle::conv2d(in, k.weights, k.bias);
    worst = std::max(worst, static_cast<double>(max_abs_diff(got, want)));
    ++instances;
  }
  const double t = seconds_since(start);
  return {worst <= 1e-6 && t < 10, std::to_string(instances) + " float instances (2D and 3D), max |diff| " +
                                       fmt(worst) + " (tol 1e-6), " + fmt(t) + " s"};
}

// ------------------------------------------------------------------ 2

Outcome gradient_correctness() {
  const auto start = Clock::now();
  bool pass = true;
  double worst = 0;
  std::set<std::string> layers;
  for (const auto& v : {NetworkVariant::two_d(3, 3), NetworkVariant::two_point_five_d(3, 3, 3),
                        NetworkVariant::three_d(3, 3)}) {
    GradcheckOptions opt;
    opt.seed = 17;
    opt.variant = v;
    const auto report = run_gradcheck(opt);
    pass = pass && report.passed();
    worst = std::max(worst, report.worst().max_rel_error);
    for (const auto& r : report.rows) layers.insert(r.layer);
  }
  const std::set<std::string> required{"conv2d", "conv3d", "relu", "batchnorm", "loss", "network"};
  pass = pass && std::includes(layers.begin(), layers.end(), required.begin(), required.end());
  const double t = seconds_since(start);
  return {pass && t < 60, "max rel error " + fmt(worst) + " (tol 1e-4) over " + std::to_string(layers.size()) +
                              " layer rows, " + fmt(t) + " s"};
}

// ------------------------------------------------------------------ 3

Outcome shard_equivalence() {
  std::mt19937_64 rng(3);
  const auto variant = NetworkVariant::two_point_five_d(3, 4, 6);
  const auto params = build_network<double>(variant, 9);
  const auto in = oracle::random_tensor<double>({8, 3, 10, 10}, rng, 0, 1);
  const auto target = oracle::random_tensor<double>({8, 1, 10, 10}, rng, -0.1, 0.1);
  const auto full = shard_gradients(params, in, target, 1, ShardBnMode::frozen);
  double worst = 0;
  for (std::size_t k : {2u, 4u}) {
    const auto r = shard_gradients(params, in, target, k, ShardBnMode::frozen);
    for (std::size_t i = 0; i < r.grads.size(); ++i) worst = std::max(worst, max_abs_diff(r.grads[i], full.grads[i]));
  }

  // Bitwise determinism of short training runs per shard count.
  PatchSet<double> set;
  set.window = 1;
  set.patch_size = 8;
  set.inputs = oracle::random_tensor<double>({96, 1, 8, 8}, rng, 0, 1);
  set.targets = oracle::random_tensor<double>({96, 1, 8, 8}, rng, -0.05, 0.05);
  set.indices.resize(96);
  bool deterministic = true;
  for (std::size_t k : {1u, 2u, 4u}) {
    TrainingConfig cfg;
    cfg.batch_size = 16;
    cfg.shards = k;
    cfg.epochs = 2;
    cfg.seed = 5;
    const auto a = train(set, NetworkVariant::two_d(3, 4), cfg);
    const auto b = train(set, NetworkVariant::two_d(3, 4), cfg);
    const auto ta = a.params.trainable(), tb = b.params.trainable();
    for (std::size_t i = 0; i < ta.size(); ++i) deterministic = deterministic && *ta[i] == *tb[i];
    deterministic = deterministic && a.history.back().train_loss == b.history.back().train_loss;
  }
  return {worst <= 1e-6 && deterministic, "frozen-BN max |grad diff| K=2,4 vs K=1: " + fmt(worst) +
                                              " (tol 1e-6); training bitwise repeatable for K=1,2,4: " +
                                              (deterministic ? "yes" : "no")};
}

// ------------------------------------------------------------------ 4

Outcome residual_identity() {
  std::mt19937_64 rng(4);
  const auto y = oracle::random_tensor<float>({9, 16, 16}, rng, -0.3, 1.3);
  bool pass = true;
  std::string which;
  for (const auto& v : {NetworkVariant::two_d(), NetworkVariant::two_point_five_d(5), NetworkVariant::three_d()}) {
    auto p = build_network<float>(v, 2);
    zero_last_layer(p);
    const bool same = infer_volume(p, y) == y;
    pass = pass && same;
    which += v.label() + (same ? " exact; " : " differs; ");
  }
  return {pass, which + "9x16x16 random volume"};
}

// ------------------------------------------------------------------ 5 and 6

struct Budget {
  std::size_t volumes = 3;  // last one held out
  VolumeDims dims{16, 64, 64};
  std::size_t views = 24;
  double noise_sigma = 1000;
  std::size_t patches_per_volume = 12500;  // 80% of 2 x 12500 = 20000 training patches
  std::size_t patch_size = 30;
  std::size_t epochs = 6;
  std::uint64_t seed = 2024;
};

struct Dataset {
  std::vector<VolumePair> pairs;
};

const Dataset& synthetic_dataset(const Budget& b) {
  static const Dataset data = [&] {
    Dataset d;
    for (std::size_t i = 0; i < b.volumes; ++i) {
      const auto gt = generate_phantom_volume(counter_hash(b.seed, 2 * i), b.dims);
      d.pairs.push_back(make_pair(gt.volume, b.views, b.noise_sigma, counter_hash(b.seed, 2 * i + 1)));
    }
    return d;
  }();
  return data;
}

struct HeldOut {
  double fbp_db = 0;
  double method_db = 0;
  double seconds = 0;
};

std::map<std::string, HeldOut>& trained_cache() {
  static std::map<std::string, HeldOut> cache;
  return cache;
}

HeldOut train_and_score(const NetworkVariant& variant, const Budget& b) {
  const std::string key = variant.label();
  if (auto it = trained_cache().find(key); it != trained_cache().end()) return it->second;
  const auto start = Clock::now();
  const auto& data = synthetic_dataset(b);
  PatchSet<float> set;
  for (std::size_t i = 0; i + 1 < b.volumes; ++i) {
    PatchSpec spec;
    spec.patch_size = b.patch_size;
    spec.window = variant.window;
    spec.count = b.patches_per_volume;
    spec.seed = counter_hash(b.seed, 0x70617463ull + i);
    spec.volume_id = static_cast<std::uint32_t>(i);
    auto part = extract_patches(hu_normalize<float>(data.pairs[i].fbp).data, hu_normalize<float>(data.pairs[i].truth).data,
                                spec);
    if (set.size() == 0)
      set = std::move(part);
    else
      set.append(part);
  }
  TrainingConfig cfg;
  cfg.epochs = b.epochs;
  cfg.seed = b.seed;
  const auto result = train(set, variant, cfg);
  const auto& held = data.pairs.back();
  const auto x_hat = infer_volume_hu(result.params, held.fbp);
  HeldOut h;
  h.fbp_db = psnr(masked_mse(held.fbp, held.truth).mse);
  h.method_db = psnr(masked_mse(x_hat, held.truth).mse);
  h.seconds = seconds_since(start);
  std::cout << "  [" << key << "] " << set.size() << " patches, " << b.epochs << " epochs, final train loss "
            << fmt(result.history.back().train_loss) << ", held-out masked PSNR " << fmt(h.method_db, 4)
            << " dB vs FBP " << fmt(h.fbp_db, 4) << " dB (" << fmt(h.seconds) << " s)\n";
  trained_cache()[key] = h;
  return h;
}

Outcome end_to_end_quality() {
  const auto h = train_and_score(NetworkVariant::two_d(7, 16), Budget{});
  const double gain = h.method_db - h.fbp_db;
  return {gain >= 2.0 && h.seconds < 1800, "2D depth 7 width 16: " + fmt(h.fbp_db, 4) + " -> " + fmt(h.method_db, 4) +
                                               " dB (+" + fmt(gain) + " dB, need >= 2), " + fmt(h.seconds) + " s"};
}

Outcome window_benefit() {
  const Budget b;
  const auto two_d = train_and_score(NetworkVariant::two_d(7, 16), b);
  const auto w5 = train_and_score(NetworkVariant::two_point_five_d(5, 7, 16), b);
  const auto w3 = train_and_score(NetworkVariant::two_point_five_d(3, 7, 16), b);
  return {w5.method_db >= two_d.method_db - 0.1,
          "2.5D(5) " + fmt(w5.method_db, 4) + " dB vs 2D " + fmt(two_d.method_db, 4) +
              " dB (need >= 2D - 0.1); reported only: 2.5D(3) " + fmt(w3.method_db, 4) + " dB, w5 - w3 = " +
              fmt(w5.method_db - w3.method_db) + " dB"};
}

// ------------------------------------------------------------------ 7

Outcome timing_ordering() {
  std::mt19937_64 rng(7);
  const auto y = oracle::random_tensor<float>({16, 64, 64}, rng, 0, 1);
  auto time_of = [&](const NetworkVariant& v) { return time_inference(build_network<float>(v, 1), y, 3).mean_s; };
  const double t2 = time_of(NetworkVariant::two_d());
  const double t25 = time_of(NetworkVariant::two_point_five_d(7));
  const double t3 = time_of(NetworkVariant::three_d());
  return {t25 <= 1.3 * t2 && t3 >= 3 * t2, "16x64x64, depth 17 width 64: 2D " + fmt(t2) + " s, 2.5D(7) " + fmt(t25) +
                                               " s (" + fmt(t25 / t2) + "x, need <= 1.3), 3D " + fmt(t3) + " s (" +
                                               fmt(t3 / t2) + "x, need >= 3)"};
}

// ------------------------------------------------------------------ 8

Outcome window_locality() {
  std::mt19937_64 rng(8);
  const auto y = oracle::random_tensor<float>({16, 12, 12}, rng, 0, 1);
  bool local = true;
  std::size_t probes = 0;
  for (std::size_t w : {3u, 5u, 7u}) {
    const auto p = build_network<float>(NetworkVariant::two_point_five_d(w, 4, 8), w);
    const auto base = infer_volume(p, y);
    for (std::size_t other = 0; other < 16; ++other) {
      auto changed = y;
      for (auto& s : changed.outer(other)) s = 1.0f - s;
      const auto out = infer_volume(p, changed);
      for (std::size_t z = 0; z < 16; ++z) {
        const std::size_t lo = z >= w / 2 ? z - w / 2 : 0, hi = z + w / 2;
        if (other >= lo && other <= hi) continue;
        local = local && out.slice(z) == base.slice(z);
        ++probes;
      }
    }
  }
  bool counts = true;
  for (std::size_t z : {1u, 3u, 16u}) {
    const auto v = oracle::random_tensor<float>({z, 10, 10}, rng, 0, 1);
    for (const auto& var : {NetworkVariant::two_d(4, 8), NetworkVariant::two_point_five_d(3, 4, 8),
                            NetworkVariant::two_point_five_d(5, 4, 8), NetworkVariant::two_point_five_d(7, 4, 8),
                            NetworkVariant::three_d(4, 8)})
      counts = counts && infer_volume(build_network<float>(var, 1), v).shape() == v.shape();
  }
  return {local && counts, std::to_string(probes) + " out-of-window perturbations bit-identical: " +
                               (local ? "yes" : "no") + "; slice counts preserved for Z=1,3,16: " +
                               (counts ? "yes" : "no")};
}

// ------------------------------------------------------------------ 9

Outcome metric_exactness() {
  bool exact = psnr(1.0) == 0.0 && psnr(0.01) == 20.0;
  std::mt19937_64 rng(9);
  double worst = 0;
  bool counts = true, ignored = true;
  for (int trial = 0; trial < 25; ++trial) {
    VolumeHU ref({1 + rng() % 4, 4 + rng() % 12, 4 + rng() % 12}), x(ref.dims);
    std::uniform_real_distribution<double> u(0, 2000);
    for (auto& s : ref.voxels) s = static_cast<float>(u(rng));
    for (auto& s : x.voxels) s = static_cast<float>(u(rng));
    const auto [mse, n] = oracle::masked_mse(x, ref, 700, 1500, 0, 2000);
    if (n == 0) continue;
    const auto got = masked_mse(x, ref);
    worst = std::max(worst, std::abs(got.mse - mse) / mse);
    counts = counts && got.count == n;
    auto x2 = x;
    for (std::size_t i = 0; i < x2.voxels.size(); ++i)
      if (ref.voxels[i] < 700 || ref.voxels[i] > 1500) x2.voxels[i] = static_cast<float>(-u(rng) * 50);
    const auto again = masked_mse(x2, ref);
    ignored = ignored && again.mse == got.mse && again.count == got.count;
  }
  return {exact && worst < 1e-12 && counts && ignored,
          std::string("psnr(1)=") + fmt(psnr(1.0)) + ", psnr(0.01)=" + fmt(psnr(0.01)) +
              "; brute-force rel diff " + fmt(worst) + "; out-of-mask edits ignored: " + (ignored ? "yes" : "no")};
}

// ------------------------------------------------------------------ 10

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary | std::ios::trunc) << s; }

template <typename Load>
bool raises(Load load, FormatError::Kind kind) {
  try {
    load();
  } catch (const FormatError& e) {
    return e.kind() == kind;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome persistence() {
  const fs::path dir = fs::temp_directory_path() / "dlmbir_acceptance_persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool exact = true;
  for (const auto& v : {NetworkVariant::two_d(5, 8), NetworkVariant::two_point_five_d(7, 5, 8),
                        NetworkVariant::three_d(5, 8)}) {
    auto p = build_network<double>(v, 3);
    p.step = 77;
    std::mt19937_64 rng(3);
    for (auto& layer : p.layers)
      if (layer.bn) layer.bn->running_var = oracle::random_tensor<double>(layer.bn->gamma.shape(), rng, 0.5, 2);
    save_checkpoint(p, dir / "c.ckpt");
    const auto q = load_checkpoint<double>(dir / "c.ckpt");
    const auto a = std::as_const(p).trainable();
    const auto b = q.trainable();
    for (std::size_t i = 0; i < a.size(); ++i) exact = exact && *a[i] == *b[i];
    for (std::size_t l = 0; l < p.layers.size(); ++l)
      if (p.layers[l].bn)
        exact = exact && p.layers[l].bn->running_var == q.layers[l].bn->running_var &&
                p.layers[l].bn->running_mean == q.layers[l].bn->running_mean;
    exact = exact && q.step == 77 && q.variant == v;
  }
  auto vol = generate_phantom_volume(3, {8, 32, 32}).volume;
  vol.voxels[0] = -0.0f;
  vol.voxels[1] = 3.4e38f;
  save_volume(vol, dir / "v.vol");
  const auto back = load_volume(dir / "v.vol");
  exact = exact && back.dims == vol.dims &&
          std::memcmp(back.voxels.data(), vol.voxels.data(), vol.voxels.size() * sizeof(float)) == 0;

  bool errors = true;
  const std::string ckpt = slurp(dir / "c.ckpt"), volume = slurp(dir / "v.vol");
  auto load_c = [&] { (void)load_checkpoint<double>(dir / "bad.ckpt"); };
  auto load_v = [&] { (void)load_volume(dir / "bad.vol"); };
  spit(dir / "bad.ckpt", ckpt.substr(0, ckpt.size() - 8));
  errors = errors && raises(load_c, FormatError::Kind::truncated);
  spit(dir / "bad.ckpt", ckpt + "extra");
  errors = errors && raises(load_c, FormatError::Kind::shape_mismatch);
  spit(dir / "bad.ckpt", "x" + ckpt.substr(1));
  errors = errors && raises(load_c, FormatError::Kind::corrupt_header);
  spit(dir / "bad.vol", volume.substr(0, volume.size() - 1));
  errors = errors && raises(load_v, FormatError::Kind::truncated);
  spit(dir / "bad.vol", volume.substr(0, 12));
  errors = errors && raises(load_v, FormatError::Kind::corrupt_header);
  errors = errors && raises([&] { (void)load_volume(dir / "absent.vol"); }, FormatError::Kind::not_found);
  fs::remove_all(dir);
  return {exact && errors, std::string("round trips bit-exact: ") + (exact ? "yes" : "no") +
                               "; corrupt files raise designated errors: " + (errors ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},   {"gradient correctness", gradient_correctness},
      {"shard equivalence", shard_equivalence},     {"residual identity", residual_identity},
      {"end-to-end quality", end_to_end_quality},   {"window benefit direction", window_benefit},
      {"timing ordering", timing_ordering},         {"sliding-window locality", window_locality},
      {"metric exactness", metric_exactness},       {"persistence", persistence}};
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
