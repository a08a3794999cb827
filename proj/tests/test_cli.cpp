#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "dlmbir/config.hpp"
#include "dlmbir/data_sim.hpp"
#include "dlmbir/eval.hpp"
#include "dlmbir/network.hpp"
#include "support.hpp"

using namespace dlmbir;
namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

#ifdef DLMBIR_CLI_PATH

struct Run {
  int code = -1;
  std::string output;
};

/// Runs the CLI with `args`, capturing stdout and stderr.
Run cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("dlmbir_cli_" + std::to_string(++counter) + ".log");
  const std::string cmd = std::string("\"") + DLMBIR_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = read_all(log);
  fs::remove(log);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

/// history.csv without the wall-time column.
std::string history_without_time(const fs::path& p) {
  std::istringstream is(read_all(p));
  std::string line, out;
  while (std::getline(is, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

/// Small dataset shared by the CLI tests.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const auto d = support::temp_dir("cli_data");
    const auto r = cli("generate --seed 7 --slices 8 --rows 32 --cols 32 --views 24 --volumes 2 --out " + q(d));
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

const std::string kSmallTrain = " --depth 3 --width 4 --patch-size 12 --patches 96 --batch-size 16 ";

#endif

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parsing") {
    std::istringstream is("# comment\nseed = 7\n  variant=2.5d  \n\nname = a b # trailing\n");
    const auto c = Config::parse(is);
    CHECK(c.get_uint("seed") == 7);
    CHECK(c.get_string("variant") == "2.5d");
    // Only whole-line comments; "#" inside a value is kept.
    CHECK(c.get_string("name") == "a b # trailing");
    CHECK(c.values().size() == 3);

    std::istringstream dup("a = 1\na = 2\n");
    CHECK_THROWS_AS(Config::parse(dup), ConfigError);
    std::istringstream bad("just words\n");
    CHECK_THROWS_AS(Config::parse(bad), ConfigError);
    CHECK_THROWS_AS(Config::load("/nonexistent/dlmbir.cfg"), FormatError);
  }

  TEST_CASE("typed access") {
    const Config c{{"n", "12"}, {"neg", "-3"}, {"x", "1.5e-3"}, {"b", "Yes"}, {"junk", "12abc"}};
    CHECK(c.get_int("neg") == -3);
    CHECK(c.get_double("x") == 1.5e-3);
    CHECK(c.get_bool("b"));
    CHECK_THROWS_AS(c.get_uint("neg"), ConfigError);
    CHECK_THROWS_AS(c.get_uint("junk"), ConfigError);
    CHECK_THROWS_AS(c.get_string("missing"), ConfigError);
    for (const char* t : {"true", "on", "1", "YES"}) CHECK(parse_bool(t));
    for (const char* f : {"false", "off", "0", "no"}) CHECK_FALSE(parse_bool(f));
    CHECK_THROWS_AS(parse_bool("maybe"), std::invalid_argument);
  }

  TEST_CASE("layering and unknown keys") {
    Config c{{"seed", "0"}, {"epochs", "10"}};
    c.merge(Config{{"epochs", "3"}});
    CHECK(c.get_uint("epochs") == 3);
    CHECK(c.get_uint("seed") == 0);
    CHECK(c.echo("config.") == "config.epochs = 3\nconfig.seed = 0\n");
    const Config file{{"epochs", "3"}, {"lr", "1"}, {"zeta", "2"}};
    try {
      file.require_known({"epochs", "seed"}, "run.cfg");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("lr") != std::string::npos);
      CHECK(what.find("zeta") != std::string::npos);
      CHECK(what.find("run.cfg") != std::string::npos);
    }
  }
}

#ifdef DLMBIR_CLI_PATH
TEST_SUITE("cli") {
  TEST_CASE("generate is deterministic and honors dims") {
    const auto a = support::temp_dir("cli_gen_a"), b = support::temp_dir("cli_gen_b");
    const std::string args = "generate --seed 7 --slices 8 --rows 32 --cols 32 --views 24 --volumes 1 --out ";
    REQUIRE(cli(args + q(a)).code == 0);
    REQUIRE(cli(args + q(b)).code == 0);
    for (const char* f : {"volume_0_truth.vol", "volume_0_fbp.vol"}) {
      CHECK(read_all(a / f) == read_all(b / f));
      CHECK(load_volume(a / f).dims == VolumeDims{8, 32, 32});
    }
    const auto manifest = read_all(a / "manifest.txt");
    CHECK(manifest.find("config.seed = 7") != std::string::npos);
    CHECK(manifest.find("config.views = 24") != std::string::npos);

    // Noisy sparse FBP sits below the noiseless dense-view ceiling.
    const auto truth = load_volume(a / "volume_0_truth.vol"), fbp = load_volume(a / "volume_0_fbp.vol");
    const double sparse = psnr(masked_mse(fbp, truth).mse);
    const double ceiling = psnr(masked_mse(make_pair(truth, 180, 0.0, 0).fbp, truth).mse);
    CHECK(sparse < ceiling);
  }

  TEST_CASE("config precedence and unknown keys") {
    const auto dir = support::temp_dir("cli_cfg");
    std::ofstream(dir / "run.cfg") << "seed = 5\nviews = 16\n";
    REQUIRE(cli("generate --config " + q(dir / "run.cfg") + " --seed 9 --slices 8 --rows 32 --cols 32 --volumes 1 --out " +
                q(dir / "out"))
                .code == 0);
    const auto manifest = read_all(dir / "out" / "manifest.txt");
    CHECK(manifest.find("config.seed = 9") != std::string::npos);
    CHECK(manifest.find("config.views = 16") != std::string::npos);
    CHECK(manifest.find("config.rows = 32") != std::string::npos);

    std::ofstream(dir / "bad.cfg") << "seed = 5\nbogus_key = 1\n";
    const auto r = cli("generate --config " + q(dir / "bad.cfg") + " --out " + q(dir / "out2"));
    CHECK(r.code == 1);
    CHECK(r.output.find("bogus_key") != std::string::npos);
    CHECK(cli("generate --config " + q(dir / "none.cfg")).code == 2);
  }

  TEST_CASE("flags") {
    CHECK(cli("generate --no-such-flag 3").code == 1);
    CHECK(cli("").code == 1);
    CHECK(cli("train --variant 4d").code == 1);
    const auto help = cli("train --help");
    CHECK(help.code == 0);
    for (const char* f : {"--config", "--seed", "--variant", "--window", "--shards", "--epochs", "--batch-size", "--out"})
      CHECK(help.output.find(f) != std::string::npos);
    const auto eval_help = cli("eval --help");
    CHECK(eval_help.output.find("--plots") != std::string::npos);
  }

  TEST_CASE("train") {
    const auto out = support::temp_dir("cli_train");
    SUBCASE("zero epochs writes the initialization") {
      REQUIRE(cli("train --data " + q(dataset()) + kSmallTrain + "--epochs 0 --seed 4 --out " + q(out)).code == 0);
      const auto ckpt = load_checkpoint<float>(out / "checkpoint.ckpt");
      const auto init = build_network<float>(NetworkVariant::two_d(3, 4), 4);
      const auto a = ckpt.trainable(), b = init.trainable();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
      CHECK(fs::exists(out / "history.csv"));
    }
    SUBCASE("2.5D window 5 is recorded in the checkpoint manifest") {
      REQUIRE(cli("train --data " + q(dataset()) + kSmallTrain + "--epochs 1 --variant 2.5d --window 5 --out " + q(out))
                  .code == 0);
      const auto info = read_checkpoint_info(out / "checkpoint.ckpt");
      CHECK(info.variant.kind == NetworkKind::two_point_five_d);
      CHECK(info.variant.window == 5);
      CHECK(read_all(out / "checkpoint.ckpt").find("window = 5") != std::string::npos);
      CHECK(read_all(out / "train_manifest.txt").find("config.window = 5") != std::string::npos);
    }
    SUBCASE("same config twice gives the same history") {
      const std::string args = "train --data " + q(dataset()) + kSmallTrain + "--epochs 2 --shards 2 --checkpoint-every 3 --out ";
      REQUIRE(cli(args + q(out / "a")).code == 0);
      REQUIRE(cli(args + q(out / "b")).code == 0);
      CHECK(history_without_time(out / "a" / "history.csv") == history_without_time(out / "b" / "history.csv"));
      const auto pa = load_checkpoint<float>(out / "a" / "checkpoint.ckpt");
      const auto pb = load_checkpoint<float>(out / "b" / "checkpoint.ckpt");
      for (std::size_t i = 0; i < pa.trainable().size(); ++i) CHECK(*pa.trainable()[i] == *pb.trainable()[i]);
      CHECK(fs::exists(out / "a" / "checkpoint_step3.ckpt"));
    }
    SUBCASE("missing data") {
      CHECK(cli("train --data " + q(out / "nowhere") + " --out " + q(out)).code == 2);
    }
  }

  TEST_CASE("infer") {
    const auto dir = support::temp_dir("cli_infer");
    auto p = build_network<float>(NetworkVariant::two_point_five_d(3, 3, 4), 1);
    zero_last_layer(p);
    save_checkpoint(p, dir / "zero.ckpt");
    const auto input = dataset() / "volume_0_fbp.vol";
    const auto r = cli("infer --checkpoint " + q(dir / "zero.ckpt") + " --input " + q(input) + " --output " +
                       q(dir / "out.vol"));
    CHECK(r.code == 0);
    CHECK(r.output.find(" s") != std::string::npos);
    const auto in = load_volume(input), out = load_volume(dir / "out.vol");
    CHECK(out.dims == in.dims);
    CHECK(out.voxels == in.voxels);
    CHECK(cli("infer --checkpoint " + q(dir / "none.ckpt") + " --input " + q(input) + " --output " + q(dir / "o.vol"))
              .code == 2);
    VolumeHU small({4, 2, 2});
    save_volume(small, dir / "tiny.vol");
    CHECK(cli("infer --checkpoint " + q(dir / "zero.ckpt") + " --input " + q(dir / "tiny.vol") + " --output " +
              q(dir / "o.vol"))
              .code == 3);
  }

  TEST_CASE("eval exit codes") {
    const auto dir = support::temp_dir("cli_eval");
    const auto truth = dataset() / "volume_0_truth.vol", fbp = dataset() / "volume_0_fbp.vol";
    const auto ok = cli("eval --reference " + q(truth) + " --fbp " + q(fbp) + " --method exact=" + q(truth) +
                        " --plots true --dataset demo --out " + q(dir));
    CHECK(ok.code == 0);
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "demo_psnr.ppm"));
    const auto rows = read_report_csv(dir / "metrics.csv");
    CHECK(rows.size() == 16);
    CHECK(cli("eval --reference " + q(dir / "missing.vol") + " --fbp " + q(fbp) + " --out " + q(dir)).code == 2);
    save_volume(VolumeHU({8, 32, 30}), dir / "narrow.vol");
    const auto mismatch = cli("eval --reference " + q(truth) + " --fbp " + q(fbp) + " --method bad=" +
                              q(dir / "narrow.vol") + " --out " + q(dir));
    CHECK(mismatch.code == 3);
    CHECK(mismatch.output.find("narrow.vol") != std::string::npos);
  }

  TEST_CASE("bench") {
    const auto dir = support::temp_dir("cli_bench");
    const std::vector<std::pair<std::string, NetworkVariant>> ckpts{
        {"2d", NetworkVariant::two_d(3, 4)},
        {"2.5d-3", NetworkVariant::two_point_five_d(3, 3, 4)},
        {"2.5d-5", NetworkVariant::two_point_five_d(5, 3, 4)},
        {"2.5d-7", NetworkVariant::two_point_five_d(7, 3, 4)},
        {"3d", NetworkVariant::three_d(3, 4)}};
    std::string args = "bench --input " + q(dataset() / "volume_0_fbp.vol") + " --out " + q(dir);
    for (const auto& [flag, v] : ckpts) {
      save_checkpoint(build_network<float>(v, 1), dir / (flag + ".ckpt"));
      args += " --ckpt-" + flag + " " + q(dir / (flag + ".ckpt"));
    }
    REQUIRE(cli(args).code == 0);
    std::istringstream csv(read_all(dir / "timing.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "method,checkpoint,status,repeats,mean_s,min_s");
    std::vector<std::string> methods;
    while (std::getline(csv, line)) {
      methods.push_back(line.substr(0, line.find(',')));
      CHECK(line.find(",ok,3,") != std::string::npos);
    }
    CHECK(methods == std::vector<std::string>{"2D", "2.5D(3)", "2.5D(5)", "2.5D(7)", "3D"});

    fs::remove(dir / "3d.ckpt");
    const auto r = cli(args);
    CHECK(r.code == 0);
    CHECK(r.output.find("warning") != std::string::npos);
    CHECK(read_all(dir / "timing.csv").find("3D," + (dir / "3d.ckpt").string() + ",missing") != std::string::npos);
  }

  TEST_CASE("gradcheck") {
    const auto ok = cli("gradcheck --seed 3");
    CHECK(ok.code == 0);
    for (const char* layer : {"conv2d", "conv3d", "relu", "batchnorm", "loss", "network"})
      CHECK(ok.output.find(layer) != std::string::npos);
    CHECK(cli("gradcheck --seed 3 --variant 3d").code == 0);
    const auto bad = cli("gradcheck --seed 3 --corrupt-backward true");
    CHECK(bad.code == 1);
    CHECK(bad.output.find("conv2d") != std::string::npos);
  }
}
#endif
