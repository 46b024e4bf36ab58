#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "finet/container.hpp"
#include "finet/shapenet.hpp"
#include "finet/synthdata.hpp"

namespace fs = std::filesystem;
using namespace finet;

#ifndef FINET_CLI_PATH
#error "FINET_CLI_PATH must point at the finet binary"
#endif

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + FINET_CLI_PATH + " " + args +
                          " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool trees_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel_a;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
  }
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (rel_a.size() != count_b) return false;
  for (const auto& r : rel_a) {
    if (!fs::exists(b / r) || slurp(a / r) != slurp(b / r)) return false;
  }
  return true;
}

// Shared scratch tree with a tiny dataset and checkpoints, built once.
class CliEnv {
 public:
  static const CliEnv& get() {
    static const CliEnv env;
    return env;
  }

  fs::path root;
  fs::path data;        // 4 samples at 32x32
  fs::path config;      // toy hyperparameters
  fs::path shape_ckpt;
  fs::path app_ckpt;

 private:
  CliEnv() {
    root = fs::temp_directory_path() / "finet_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    config = root / "toy.cfg";
    shape_ckpt = root / "shape.ckpt";
    app_ckpt = root / "app.ckpt";
    std::ofstream(config) << "image_size = 32\nlevels = 3\nbase_channels = 16\n"
                          << "lr = 1e-3\nbatch = 2\nsteps = 4\n";
    if (run("gen-data --n 4 --seed 11 --size 32 --out " + data.string()) != 0 ||
        run("train-shape --data " + data.string() + " --config " + config.string() + " --seed 1 --out " +
            shape_ckpt.string()) != 0 ||
        run("train-appearance --data " + data.string() + " --config " + config.string() + " --seed 2 --out " +
            app_ckpt.string()) != 0) {
      throw std::runtime_error("CLI fixture setup failed");
    }
  }
};

std::string stages(const CliEnv& e) {
  return "--shape-ckpt " + e.shape_ckpt.string() + " --app-ckpt " + e.app_ckpt.string();
}

}  // namespace

TEST(CliExitCodes, UsageErrorsExitTwo) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("inpaint --no-such-flag"), 2);
  EXPECT_EQ(run(""), 2);  // a subcommand is required
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("gen-data --help"), 0);
}

TEST(CliExitCodes, MissingFilesExitOne) {
  const auto& e = CliEnv::get();
  EXPECT_EQ(run("train-shape --data /nonexistent --out " + (e.root / "x").string()), 1);
  EXPECT_EQ(run("inpaint --shape-ckpt /nonexistent --app-ckpt " + e.app_ckpt.string() + " --sample " +
                (e.data / "sample_000000").string() + " --out " + (e.root / "x").string()),
            1);
}

TEST(CliExitCodes, ContractViolationsExitOne) {
  const auto& e = CliEnv::get();
  const auto bad_cfg = e.root / "bad.cfg";
  std::ofstream(bad_cfg) << "no_such_key = 1\n";
  EXPECT_EQ(run("train-shape --data " + e.data.string() + " --config " + bad_cfg.string() + " --out " +
                (e.root / "x").string()),
            1);
  EXPECT_EQ(run("latent-sweep --ckpt " + e.shape_ckpt.string() + " --sample " +
                (e.data / "sample_000000").string() + " --dims 0,99 --range -1:1:3 --out " +
                (e.root / "x").string()),
            1);
  EXPECT_EQ(run("latent-sweep --ckpt " + e.shape_ckpt.string() + " --sample " +
                (e.data / "sample_000000").string() + " --dims 0,1 --range nonsense --out " +
                (e.root / "x").string()),
            1);
}

TEST(CliExitCodes, FailedRunsLeaveNoOutput) {
  const auto& e = CliEnv::get();
  const auto out = e.root / "never_written";
  ASSERT_EQ(run("inpaint --shape-ckpt /nonexistent --app-ckpt " + e.app_ckpt.string() + " --sample " +
                (e.data / "sample_000000").string() + " --out " + out.string()),
            1);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_FALSE(fs::exists(out.string() + ".partial"));
}

TEST(CliGenData, ReproducibleAndWellFormed) {
  const auto& e = CliEnv::get();
  const auto a = e.root / "gen_a", b = e.root / "gen_b";
  ASSERT_EQ(run("gen-data --n 3 --seed 5 --size 32 --out " + a.string()), 0);
  ASSERT_EQ(run("gen-data --n 3 --seed 5 --size 32 --out " + b.string()), 0);
  EXPECT_TRUE(trees_identical(a, b));
  const auto samples = read_dataset(a);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].size(), 32);
}

TEST(CliGenData, SeedEnvOverridesFlag) {
  const auto& e = CliEnv::get();
  const auto a = e.root / "env_a", b = e.root / "env_b";
  ASSERT_EQ(run("gen-data --n 2 --seed 999 --size 32 --out " + a.string(), "FINET_SEED=21"), 0);
  ASSERT_EQ(run("gen-data --n 2 --seed 21 --size 32 --out " + b.string()), 0);
  EXPECT_TRUE(trees_identical(a, b));
}

TEST(CliTrain, CheckpointLoadsAndRunsAreReproducible) {
  const auto& e = CliEnv::get();
  const auto stage = ShapeStage<float>::load(e.shape_ckpt);
  EXPECT_EQ(stage.config().image_size, 32);
  EXPECT_EQ(stage.config().levels, 3);
  EXPECT_TRUE(fs::exists(e.shape_ckpt / "metrics.txt"));

  const auto again = e.root / "shape_again.ckpt";
  ASSERT_EQ(run("train-shape --data " + e.data.string() + " --config " + e.config.string() +
                " --seed 1 --out " + again.string()),
            0);
  EXPECT_TRUE(trees_identical(e.shape_ckpt, again));
}

TEST(CliInpaint, TemperatureZeroDrawsAreIdentical) {
  const auto& e = CliEnv::get();
  const auto out = e.root / "inp_t0";
  ASSERT_EQ(run("inpaint " + stages(e) + " --sample " + (e.data / "sample_000001").string() +
                " --category top --n 3 --temperature 0 --seed 4 --out " + out.string()),
            0);
  const auto c = read_container(out, kResultVersion);
  ASSERT_NE(c.find("result_000.image"), nullptr);
  EXPECT_EQ(slurp(out / "result_000.image.bin"), slurp(out / "result_002.image.bin"));
  EXPECT_EQ(slurp(out / "result_000.seg.bin"), slurp(out / "result_002.seg.bin"));
  EXPECT_TRUE(fs::exists(out / "result_000.ppm"));
  ASSERT_NE(c.find_meta("box"), nullptr);
}

TEST(CliInpaint, SeededRunsReproduce) {
  const auto& e = CliEnv::get();
  const auto a = e.root / "inp_a", b = e.root / "inp_b";
  const std::string args = "inpaint " + stages(e) + " --sample " + (e.data / "sample_000001").string() +
                           " --category top --n 2 --temperature 1 --seed 8 --out ";
  ASSERT_EQ(run(args + a.string()), 0);
  ASSERT_EQ(run(args + b.string()), 0);
  EXPECT_TRUE(trees_identical(a, b));
}

TEST(CliTransfer, WritesComposite) {
  const auto& e = CliEnv::get();
  const auto out = e.root / "tr_out";
  ASSERT_EQ(run("transfer " + stages(e) + " --sample " + (e.data / "sample_000000").string() +
                " --category top --target-sample " + (e.data / "sample_000002").string() +
                " --target-category top --out " + out.string()),
            0);
  const auto c = read_container(out, kResultVersion);
  const auto& img = c.require("result.image");
  EXPECT_EQ(img.shape(), (std::vector<int>{32, 32, 3}));
  EXPECT_EQ(c.require("result.seg").dim(2), kSegChannels);
}

TEST(CliEval, ReportIsStructuredPlainText) {
  const auto& e = CliEnv::get();
  const auto out = e.root / "report.txt";
  ASSERT_EQ(run("eval " + stages(e) + " --data " + e.data.string() +
                " --category top --metrics oracle,posterior --n 2 --seed 6 --out " + out.string()),
            0);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "# metric value n seed");
  std::vector<std::string> names;
  std::string name;
  double value;
  std::size_t n;
  std::uint64_t seed;
  while (in >> name >> value >> n >> seed) {
    names.push_back(name);
    EXPECT_EQ(n, 4u);
    EXPECT_EQ(seed, 6u);
    EXPECT_TRUE(std::isfinite(value));
  }
  EXPECT_EQ(names, (std::vector<std::string>{"oracle_compat_rate", "posterior_mean_kl", "posterior_mi"}));
}

TEST(CliLatentSweep, GridTileCountMatchesRange) {
  const auto& e = CliEnv::get();
  const auto out = e.root / "sweep";
  ASSERT_EQ(run("latent-sweep --ckpt " + e.shape_ckpt.string() + " --sample " +
                (e.data / "sample_000000").string() + " --category top --dims 1,3 --range -1:1:4 --out " +
                out.string()),
            0);
  const auto c = read_container(out, kResultVersion);
  int tiles = 0;
  for (const auto& [tname, t] : c.tensors) {
    if (tname.rfind("tile_", 0) == 0) {
      ++tiles;
      EXPECT_EQ(t.shape(), (std::vector<int>{32, 32, 3}));
    }
  }
  EXPECT_EQ(tiles, 16);
  EXPECT_TRUE(fs::exists(out / "grid.ppm"));
}
