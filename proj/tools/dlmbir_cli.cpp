// dlmbir: generate | train | infer | eval | bench | gradcheck
//
// Exit codes: 0 success, 1 generic failure, 2 missing input, 3 shape or
// variant mismatch. Settings resolve as defaults < --config file < flags.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlmbir/config.hpp"
#include "dlmbir/data_sim.hpp"
#include "dlmbir/errors.hpp"
#include "dlmbir/eval.hpp"
#include "dlmbir/gradcheck.hpp"
#include "dlmbir/inference.hpp"
#include "dlmbir/network.hpp"
#include "dlmbir/trainer.hpp"

namespace fs = std::filesystem;
using namespace dlmbir;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kMissingInput = 2, kMismatch = 3 };

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw MissingInput("no " + what + " given");
  if (!fs::is_regular_file(path)) throw MissingInput(what + " '" + path.string() + "' does not exist");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw FormatError(FormatError::Kind::io, "cannot create output directory '" + dir.string() + "'");
}

/// A subcommand whose settings come from defaults, an optional config file and flags.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description, Config defaults)
      : app_(parent.add_subcommand(name, description)), name_(name), defaults_(std::move(defaults)) {
    app_->add_option("--config", config_path_, "key = value settings file (flags override it)");
    for (const auto& [k, v] : defaults_.values()) keys_.insert(k);
  }

  /// Binds `--flag` to config key `key`.
  CLI::Option* flag(const std::string& flag, const std::string& key, const std::string& help) {
    keys_.insert(key);
    auto* opt = app_->add_option(flag, storage_[key], help);
    if (defaults_.contains(key)) opt->default_str(defaults_.get_string(key));
    bound_.emplace_back(opt, key);
    return opt;
  }

  CLI::App* app() const { return app_; }
  bool parsed() const { return app_->parsed(); }

  Config effective() const {
    Config cfg = defaults_;
    if (!config_path_.empty()) {
      require_file(config_path_, "config file");
      const Config file = Config::load(config_path_);
      file.require_known(keys_, config_path_);
      cfg.merge(file);
    }
    for (const auto& [opt, key] : bound_)
      if (opt->count() > 0) cfg.set(key, storage_.at(key));
    return cfg;
  }

  const std::string& name() const { return name_; }

 private:
  CLI::App* app_;
  std::string name_;
  Config defaults_;
  std::set<std::string> keys_;
  std::string config_path_;
  std::map<std::string, std::string> storage_;
  std::vector<std::pair<CLI::Option*, std::string>> bound_;
};

void write_run_manifest(const fs::path& path, const std::string& command, const Config& cfg,
                        const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot write manifest '" + path.string() + "'");
  os << "# dlmbir " << command << "\n";
  for (const auto& [k, v] : entries) os << k << " = " << v << '\n';
  os << cfg.echo("config.");
}

NetworkVariant variant_from(const Config& cfg) {
  const NetworkKind kind = parse_network_kind(cfg.get_string("variant"));
  NetworkVariant v;
  v.kind = kind;
  v.depth = cfg.get_uint("depth");
  v.width = cfg.get_uint("width");
  switch (kind) {
    case NetworkKind::two_d: v.window = 1; break;
    case NetworkKind::two_point_five_d: v.window = cfg.get_uint("window"); break;
    case NetworkKind::three_d: v.window = 7; break;
  }
  v.validate();
  return v;
}

// ---------------------------------------------------------------- generate

int run_generate(const Config& cfg) {
  const std::uint64_t seed = cfg.get_uint("seed");
  const VolumeDims dims{cfg.get_uint("slices"), cfg.get_uint("rows"), cfg.get_uint("cols")};
  const std::size_t views = cfg.get_uint("views");
  const double sigma = cfg.get_double("noise_sigma");
  const std::size_t count = cfg.get_uint("volumes");
  if (count == 0) throw ConfigError("volumes must be at least 1");
  const fs::path out = cfg.get_string("out");
  ensure_dir(out);

  std::vector<std::pair<std::string, std::string>> entries{{"volumes", std::to_string(count)}};
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t phantom_seed = counter_hash(seed, 2 * i);
    const std::uint64_t noise_seed = counter_hash(seed, 2 * i + 1);
    const PhantomVolume phantom = generate_phantom_volume(phantom_seed, dims);
    const VolumePair pair = make_pair(phantom.volume, views, sigma, noise_seed);
    const std::string stem = "volume_" + std::to_string(i);
    save_volume(pair.truth, out / (stem + "_truth.vol"));
    save_volume(pair.fbp, out / (stem + "_fbp.vol"));
    const double fbp_psnr = psnr(masked_mse(pair.fbp, pair.truth).mse);
    std::cout << stem << ": " << to_string(dims) << ", fbp masked psnr " << std::fixed << std::setprecision(2)
              << fbp_psnr << " dB\n";
    const std::string key = "volume." + std::to_string(i);
    entries.emplace_back(key + ".truth", stem + "_truth.vol");
    entries.emplace_back(key + ".fbp", stem + "_fbp.vol");
    entries.emplace_back(key + ".phantom_seed", std::to_string(phantom_seed));
    entries.emplace_back(key + ".noise_seed", std::to_string(noise_seed));
  }
  write_run_manifest(out / "manifest.txt", "generate", cfg, entries);
  std::cout << "wrote " << count << " volume pairs to " << out.string() << '\n';
  return kOk;
}

// ------------------------------------------------------------------- train

struct DatasetEntry {
  std::size_t id;
  fs::path truth, fbp;
};

std::vector<DatasetEntry> read_dataset(const fs::path& dir, const std::string& selection) {
  const fs::path manifest = dir / "manifest.txt";
  require_file(manifest, "dataset manifest");
  const Config m = Config::load(manifest);
  const std::size_t count = m.get_uint("volumes");
  std::vector<std::size_t> ids;
  if (selection == "all") {
    for (std::size_t i = 0; i < count; ++i) ids.push_back(i);
  } else {
    std::stringstream ss(selection);
    std::string item;
    while (std::getline(ss, item, ',')) {
      Config one{{"id", item}};
      ids.push_back(one.get_uint("id"));
    }
  }
  std::vector<DatasetEntry> out;
  for (std::size_t id : ids) {
    if (id >= count) throw MissingInput("dataset has no volume " + std::to_string(id));
    const std::string key = "volume." + std::to_string(id);
    DatasetEntry e{id, dir / m.get_string(key + ".truth"), dir / m.get_string(key + ".fbp")};
    require_file(e.truth, "ground-truth volume");
    require_file(e.fbp, "fbp volume");
    out.push_back(e);
  }
  if (out.empty()) throw ConfigError("no training volumes selected");
  return out;
}

template <typename T>
int train_typed(const Config& cfg) {
  const NetworkVariant variant = variant_from(cfg);
  TrainingConfig tc;
  tc.learning_rate = cfg.get_double("learning_rate");
  tc.batch_size = cfg.get_uint("batch_size");
  tc.shards = cfg.get_uint("shards");
  tc.epochs = cfg.get_uint("epochs");
  tc.seed = cfg.get_uint("seed");
  tc.val_fraction = cfg.get_double("val_fraction");
  tc.bn_mode = parse_shard_bn_mode(cfg.get_string("bn_mode"));
  tc.checkpoint_every = cfg.get_uint("checkpoint_every");
  tc.threaded_shards = cfg.get_bool("threaded");
  tc.validate();

  const fs::path out = cfg.get_string("out");
  const auto entries = read_dataset(cfg.get_string("data"), cfg.get_string("train_volumes"));

  PatchSet<T> dataset;
  for (const auto& e : entries) {
    const VolumeHU truth = load_volume(e.truth);
    const VolumeHU fbp = load_volume(e.fbp);
    if (!(truth.dims == fbp.dims))
      throw ShapeError("'" + e.fbp.string() + "' and '" + e.truth.string() + "' have different dims");
    PatchSpec spec;
    spec.patch_size = cfg.get_uint("patch_size");
    spec.window = variant.window;
    spec.count = cfg.get_uint("patches");
    spec.augment = cfg.get_bool("augment");
    spec.volumetric_target = variant.volumetric();
    spec.seed = counter_hash(tc.seed, 0x70617463ull + e.id);
    spec.volume_id = static_cast<std::uint32_t>(e.id);
    PatchSet<T> part = extract_patches(hu_normalize<T>(fbp, tc.hu_window).data,
                                       hu_normalize<T>(truth, tc.hu_window).data, spec);
    if (dataset.size() == 0)
      dataset = std::move(part);
    else
      dataset.append(part);
  }

  ensure_dir(out);
  const std::string echo = cfg.echo();
  std::size_t periodic = 0;
  const CheckpointCallback<T> on_checkpoint = [&](const NetworkParams<T>& p) {
    save_checkpoint(p, out / ("checkpoint_step" + std::to_string(p.step) + ".ckpt"), echo);
    ++periodic;
  };
  std::cout << "training " << variant.label() << " on " << dataset.size() << " patches, " << tc.epochs
            << " epochs, " << tc.shards << " shard(s)\n";
  const TrainResult<T> result = train(dataset, variant, tc, on_checkpoint);
  for (const auto& r : result.history)
    std::cout << "epoch " << r.epoch << " step " << r.step << " train_loss " << r.train_loss << " val_loss "
              << r.val_loss << " val_psnr " << r.val_psnr_db << " dB (" << r.wall_time_s << " s)\n";

  const fs::path ckpt = out / "checkpoint.ckpt";
  save_checkpoint(result.params, ckpt, echo);
  write_history_csv(result.history, out / "history.csv");
  write_run_manifest(out / "train_manifest.txt", "train", cfg,
                     {{"checkpoint", "checkpoint.ckpt"},
                      {"history", "history.csv"},
                      {"patches", std::to_string(dataset.size())},
                      {"periodic_checkpoints", std::to_string(periodic)}});
  std::cout << "wrote " << ckpt.string() << '\n';
  return kOk;
}

int run_train(const Config& cfg) {
  return parse_precision(cfg.get_string("precision")) == Precision::f64 ? train_typed<double>(cfg)
                                                                         : train_typed<float>(cfg);
}

// ------------------------------------------------------------------- infer

template <typename T>
VolumeHU infer_typed(const fs::path& ckpt, const VolumeHU& input, double& seconds) {
  const NetworkParams<T> params = load_checkpoint<T>(ckpt);
  const auto start = std::chrono::steady_clock::now();
  VolumeHU out = infer_volume_hu(params, input);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

int run_infer(const Config& cfg) {
  const fs::path ckpt = cfg.get_string("checkpoint"), input = cfg.get_string("input"),
                 output = cfg.get_string("output");
  require_file(ckpt, "checkpoint");
  require_file(input, "input volume");
  if (output.empty()) throw ConfigError("no output path given");
  const CheckpointInfo info = read_checkpoint_info(ckpt);
  const VolumeHU y = load_volume(input);
  double seconds = 0;
  const VolumeHU x_hat = info.precision == Precision::f64 ? infer_typed<double>(ckpt, y, seconds)
                                                          : infer_typed<float>(ckpt, y, seconds);
  if (output.has_parent_path()) ensure_dir(output.parent_path());
  save_volume(x_hat, output);
  std::cout << info.variant.label() << " inference on " << to_string(y.dims) << ": " << std::fixed
            << std::setprecision(3) << seconds << " s\n";
  return kOk;
}

// -------------------------------------------------------------------- eval

int run_eval(const Config& cfg, const std::vector<std::string>& methods) {
  const fs::path ref_path = cfg.get_string("reference"), fbp_path = cfg.get_string("fbp");
  require_file(ref_path, "reference volume");
  require_file(fbp_path, "fbp volume");
  const VolumeHU reference = load_volume(ref_path);
  const VolumeHU fbp = load_volume(fbp_path);
  auto check_dims = [&](const VolumeHU& v, const fs::path& p) {
    if (!(v.dims == reference.dims))
      throw ShapeError("'" + p.string() + "' has dims " + to_string(v.dims) + " but reference '" +
                       ref_path.string() + "' has " + to_string(reference.dims));
  };
  check_dims(fbp, fbp_path);

  std::map<std::string, VolumeHU> volumes{{"FBP", fbp}};
  for (const auto& spec : methods) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--method expects LABEL=PATH, got '" + spec + "'");
    const fs::path p = spec.substr(eq + 1);
    require_file(p, "method volume");
    VolumeHU v = load_volume(p);
    check_dims(v, p);
    volumes[spec.substr(0, eq)] = std::move(v);
  }

  const HuRange mask{cfg.get_double("mask_lo"), cfg.get_double("mask_hi")};
  const HuRange window{cfg.get_double("window_lo"), cfg.get_double("window_hi")};
  const MetricsReport report = per_slice_report(volumes, reference, fbp, mask, window);
  const fs::path out = cfg.get_string("out");
  ensure_dir(out);
  PlotOptions plot;
  plot.enabled = cfg.get_bool("plots");
  plot.dataset = cfg.get_string("dataset");
  const EmittedFiles files = emit_report(report, out / "metrics.csv", plot);

  std::cout << std::left << std::setw(16) << "method" << std::right << std::setw(14) << "mean_psnr_db"
            << std::setw(14) << "vol_psnr_db" << std::setw(14) << "max_gain_db" << '\n';
  for (const auto& s : report.summaries)
    std::cout << std::left << std::setw(16) << s.method << std::right << std::fixed << std::setprecision(3)
              << std::setw(14) << s.mean_slice_psnr_db << std::setw(14) << s.volume_psnr_db << std::setw(14)
              << s.max_improvement_db << '\n';
  std::vector<std::pair<std::string, std::string>> entries{{"metrics", files.csv.filename().string()},
                                                           {"summary", files.summary_csv.filename().string()}};
  if (!files.plot.empty()) entries.emplace_back("plot", files.plot.filename().string());
  write_run_manifest(out / "eval_manifest.txt", "eval", cfg, entries);
  return kOk;
}

// ------------------------------------------------------------------- bench

template <typename T>
TimingStats bench_typed(const fs::path& ckpt, const VolumeHU& volume, std::size_t repeats) {
  const NetworkParams<T> params = load_checkpoint<T>(ckpt);
  return time_inference(params, hu_normalize<T>(volume, volume.window).data, repeats);
}

int run_bench(const Config& cfg) {
  const fs::path input = cfg.get_string("input");
  require_file(input, "input volume");
  const VolumeHU volume = load_volume(input);
  const std::size_t repeats = cfg.get_uint("repeats");
  const std::vector<std::pair<std::string, std::string>> slots{{"2D", "ckpt_2d"},
                                                               {"2.5D(3)", "ckpt_25d_3"},
                                                               {"2.5D(5)", "ckpt_25d_5"},
                                                               {"2.5D(7)", "ckpt_25d_7"},
                                                               {"3D", "ckpt_3d"}};
  const fs::path out = cfg.get_string("out");
  ensure_dir(out);
  std::ofstream csv(out / "timing.csv", std::ios::trunc);
  if (!csv) throw FormatError(FormatError::Kind::io, "cannot write '" + (out / "timing.csv").string() + "'");
  csv << "method,checkpoint,status,repeats,mean_s,min_s\n";
  csv.precision(6);
  for (const auto& [label, key] : slots) {
    const std::string path = cfg.get_string(key);
    if (path.empty() || !fs::is_regular_file(path)) {
      std::cerr << "warning: " << label << " checkpoint " << (path.empty() ? "not given" : "'" + path + "' missing")
                << ", skipped\n";
      csv << label << ',' << path << ",missing,0,,\n";
      continue;
    }
    const CheckpointInfo info = read_checkpoint_info(path);
    const TimingStats t = info.precision == Precision::f64 ? bench_typed<double>(path, volume, repeats)
                                                           : bench_typed<float>(path, volume, repeats);
    csv << label << ',' << path << ",ok," << repeats << ',' << t.mean_s << ',' << t.min_s << '\n';
    std::cout << std::left << std::setw(10) << label << std::right << std::fixed << std::setprecision(4)
              << " mean " << t.mean_s << " s  min " << t.min_s << " s  (" << info.variant.label() << ")\n";
  }
  return kOk;
}

// --------------------------------------------------------------- gradcheck

int run_gradcheck(const Config& cfg) {
  GradcheckOptions opt;
  opt.seed = cfg.get_uint("seed");
  Config net = cfg;
  net.set("depth", "3");
  net.set("width", "3");
  opt.variant = variant_from(net);
  opt.corrupt_backward = cfg.get_bool("corrupt_backward");
  const GradcheckReport report = dlmbir::run_gradcheck(opt);

  std::cout << std::left << std::setw(11) << "layer" << std::right << std::setw(14) << "max_rel_err" << std::setw(8)
            << "coords" << "  result\n";
  for (const auto& r : report.rows)
    std::cout << std::left << std::setw(11) << r.layer << std::right << std::scientific << std::setprecision(3)
              << std::setw(14) << r.max_rel_error << std::setw(8) << r.checked << "  "
              << (r.passed ? "pass" : "FAIL") << '\n';
  if (report.passed()) {
    std::cout << "gradcheck passed (tolerance " << report.tolerance << ")\n";
    return kOk;
  }
  const GradcheckRow& w = report.worst();
  std::cout << "gradcheck FAILED: worst layer " << w.layer << ", " << w.argument << "[" << w.index
            << "], analytic " << std::setprecision(10) << w.analytic << ", numeric " << w.numeric << '\n';
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DL-MBIR: residual CNN post-processing for FBP CT volumes"};
  app.require_subcommand(1);

  Command generate(app, "generate", "Simulate ground-truth / FBP volume pairs",
                   {{"seed", "0"},
                    {"slices", "16"},
                    {"rows", "64"},
                    {"cols", "64"},
                    {"views", "24"},
                    {"noise_sigma", "1000"},
                    {"volumes", "3"},
                    {"out", "data"}});
  generate.flag("--seed", "seed", "Base seed");
  generate.flag("--slices", "slices", "Slices per volume");
  generate.flag("--rows", "rows", "Rows per slice");
  generate.flag("--cols", "cols", "Columns per slice");
  generate.flag("--views", "views", "Projection views");
  generate.flag("--noise-sigma", "noise_sigma", "Sinogram noise std dev (HU * pixel)");
  generate.flag("--volumes", "volumes", "Number of volume pairs");
  generate.flag("--out", "out", "Output directory");

  Command trainc(app, "train", "Train a network on patches from generated volumes",
                 {{"data", "data"},
                  {"train_volumes", "0,1"},
                  {"variant", "2d"},
                  {"window", "3"},
                  {"depth", "17"},
                  {"width", "64"},
                  {"patch_size", "30"},
                  {"patches", "25000"},
                  {"augment", "true"},
                  {"shards", "1"},
                  {"batch_size", "64"},
                  {"epochs", "10"},
                  {"learning_rate", "0.001"},
                  {"seed", "0"},
                  {"val_fraction", "0.2"},
                  {"bn_mode", "per-shard"},
                  {"checkpoint_every", "0"},
                  {"threaded", "true"},
                  {"precision", "f32"},
                  {"out", "run"}});
  trainc.flag("--data", "data", "Dataset directory written by generate");
  trainc.flag("--train-volumes", "train_volumes", "Comma-separated volume ids, or 'all'");
  trainc.flag("--variant", "variant", "2d, 2.5d or 3d")->check(CLI::IsMember({"2d", "2.5d", "3d"}));
  trainc.flag("--window", "window", "2.5D slice window")->check(CLI::IsMember({"3", "5", "7"}));
  trainc.flag("--depth", "depth", "Layer count");
  trainc.flag("--width", "width", "Hidden channels");
  trainc.flag("--patch-size", "patch_size", "Patch edge length");
  trainc.flag("--patches", "patches", "Patches drawn per volume");
  trainc.flag("--augment", "augment", "Flip/rotate augmentation (BOOL)");
  trainc.flag("--shards", "shards", "Gradient shards (simulated devices)");
  trainc.flag("--batch-size", "batch_size", "Patches per optimizer step, across all shards");
  trainc.flag("--epochs", "epochs", "Epoch budget");
  trainc.flag("--learning-rate", "learning_rate", "ADAM step size");
  trainc.flag("--seed", "seed", "Seed for init, patch sampling and shuffles");
  trainc.flag("--val-fraction", "val_fraction", "Held-out patch fraction");
  trainc.flag("--bn-mode", "bn_mode", "Shard batch norm: per-shard or frozen");
  trainc.flag("--checkpoint-every", "checkpoint_every", "Steps between periodic checkpoints (0 = off)");
  trainc.flag("--threaded", "threaded", "Run shards on worker threads (BOOL)");
  trainc.flag("--precision", "precision", "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  trainc.flag("--out", "out", "Output directory");

  Command infer(app, "infer", "Reconstruct a volume with a trained checkpoint",
                {{"checkpoint", ""}, {"input", ""}, {"output", ""}});
  infer.flag("--checkpoint", "checkpoint", "Checkpoint file");
  infer.flag("--input", "input", "FBP volume");
  infer.flag("--output", "output", "Output volume");

  Command evalc(app, "eval", "Masked PSNR report for methods against a reference",
                {{"reference", ""},
                 {"fbp", ""},
                 {"out", "eval"},
                 {"plots", "false"},
                 {"dataset", "dataset"},
                 {"mask_lo", "700"},
                 {"mask_hi", "1500"},
                 {"window_lo", "0"},
                 {"window_hi", "2000"}});
  std::vector<std::string> methods;
  evalc.flag("--reference", "reference", "Reference (ground-truth) volume");
  evalc.flag("--fbp", "fbp", "FBP volume (baseline)");
  evalc.flag("--out", "out", "Output directory");
  evalc.flag("--plots", "plots", "Write a PSNR-per-slice PPM chart (BOOL)");
  evalc.flag("--dataset", "dataset", "Dataset name used for the plot file");
  evalc.flag("--mask-lo", "mask_lo", "Mask lower bound (HU)");
  evalc.flag("--mask-hi", "mask_hi", "Mask upper bound (HU)");
  evalc.flag("--window-lo", "window_lo", "Normalization window lower bound (HU)");
  evalc.flag("--window-hi", "window_hi", "Normalization window upper bound (HU)");
  evalc.app()->add_option("--method", methods, "LABEL=PATH of a reconstructed volume (repeatable)");

  Command bench(app, "bench", "Inference timing table over the five network variants",
                {{"input", ""},
                 {"ckpt_2d", ""},
                 {"ckpt_25d_3", ""},
                 {"ckpt_25d_5", ""},
                 {"ckpt_25d_7", ""},
                 {"ckpt_3d", ""},
                 {"repeats", "3"},
                 {"out", "bench"}});
  bench.flag("--input", "input", "Volume to reconstruct");
  bench.flag("--ckpt-2d", "ckpt_2d", "2D checkpoint");
  bench.flag("--ckpt-2.5d-3", "ckpt_25d_3", "2.5D window-3 checkpoint");
  bench.flag("--ckpt-2.5d-5", "ckpt_25d_5", "2.5D window-5 checkpoint");
  bench.flag("--ckpt-2.5d-7", "ckpt_25d_7", "2.5D window-7 checkpoint");
  bench.flag("--ckpt-3d", "ckpt_3d", "3D checkpoint");
  bench.flag("--repeats", "repeats", "Timed runs per method (>= 3)");
  bench.flag("--out", "out", "Output directory");

  Command grad(app, "gradcheck", "Finite-difference check of every backward pass",
               {{"seed", "0"}, {"variant", "2d"}, {"window", "3"}, {"corrupt_backward", "false"}});
  grad.flag("--seed", "seed", "Seed for random instances");
  grad.flag("--variant", "variant", "Variant of the end-to-end row")->check(CLI::IsMember({"2d", "2.5d", "3d"}));
  grad.flag("--window", "window", "2.5D slice window")->check(CLI::IsMember({"3", "5", "7"}));
  grad.flag("--corrupt-backward", "corrupt_backward", "Test hook: break the conv2d backward (BOOL)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFailure;
  }

  try {
    if (generate.parsed()) return run_generate(generate.effective());
    if (trainc.parsed()) return run_train(trainc.effective());
    if (infer.parsed()) return run_infer(infer.effective());
    if (evalc.parsed()) return run_eval(evalc.effective(), methods);
    if (bench.parsed()) return run_bench(bench.effective());
    if (grad.parsed()) return run_gradcheck(grad.effective());
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.kind() == FormatError::Kind::not_found) return kMissingInput;
    if (e.kind() == FormatError::Kind::shape_mismatch) return kMismatch;
    return kFailure;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
