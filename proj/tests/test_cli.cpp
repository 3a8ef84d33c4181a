// End-to-end checks of the gsct binary: determinism, resolved-config round
// trips, exit codes, and a small pipeline smoke run.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "gsct/io.hpp"

using namespace gsct;
namespace fs = std::filesystem;

namespace {

std::string binary_path() {
#ifdef GSCT_BIN_PATH
  return GSCT_BIN_PATH;
#else
  const char* env = std::getenv("GSCT_BIN");
  REQUIRE(env != nullptr);
  return env;
#endif
}

int run(const std::string& args) {
  const std::string command = binary_path() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  return detail::read_file_bytes(path.string());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gsct_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("phantom runs are bit-identical for a fixed seed") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 24 --seed 7 --out " + tmp.file("a.vol")) == 0);
  REQUIRE(run("phantom --dims 24 --seed 7 --out " + tmp.file("b.vol")) == 0);
  CHECK(slurp(tmp.file("a.vol")) == slurp(tmp.file("b.vol")));
  CHECK(fs::exists(tmp.file("a.vol.json")));
  CHECK(fs::exists(tmp.file("a.vol.config.json")));
  CHECK(fs::exists(tmp.file("a.vol.metrics.csv")));

  REQUIRE(run("phantom --dims 24 --seed 8 --out " + tmp.file("c.vol")) == 0);
  CHECK(slurp(tmp.file("a.vol")) != slurp(tmp.file("c.vol")));
}

TEST_CASE("rerunning with the emitted resolved config reproduces the output") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 20 --seed 3 --out " + tmp.file("a.vol")) == 0);
  REQUIRE(run("phantom --config " + tmp.file("a.vol.config.json") + " --out " +
              tmp.file("b.vol")) == 0);
  CHECK(slurp(tmp.file("a.vol")) == slurp(tmp.file("b.vol")));
}

TEST_CASE("usage and runtime failures map to exit codes 2 and 1") {
  TempDir tmp;
  CHECK(run("no-such-command") == 2);
  CHECK(run("phantom --dims 16") == 2);  // missing --out
  CHECK(run("project --volume " + tmp.file("missing.vol") + " --out " + tmp.file("p.proj")) ==
        2);

  // malformed config file
  {
    std::ofstream bad(tmp.file("bad.json"));
    bad << "{\"not_a_key\": 1}";
  }
  CHECK(run("phantom --config " + tmp.file("bad.json") + " --dims 8 --out " +
            tmp.file("x.vol")) == 2);
}

TEST_CASE("desk pipeline smoke: phantom, project, reconstruct, metrics, compress") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 24 --seed 5 --out " + tmp.file("gt.vol")) == 0);
  REQUIRE(run("project --volume " + tmp.file("gt.vol") + " --views 10 --detector 48 --out " +
              tmp.file("scan.proj")) == 0);
  REQUIRE(run("reconstruct --projections " + tmp.file("scan.proj") +
              " --init fdk-gradient --splats 150 --iters 4 --gt " + tmp.file("gt.vol") +
              " --seed 1 --deterministic --out " + tmp.file("recon")) == 0);
  CHECK(fs::exists(tmp.file("recon/volume.vol")));
  CHECK(fs::exists(tmp.file("recon/cloud.ckpt")));
  CHECK(fs::exists(tmp.file("recon/reconstruct.metrics.csv")));
  CHECK(fs::exists(tmp.file("recon/reconstruct.config.json")));

  REQUIRE(run("metrics --pred " + tmp.file("recon/volume.vol") + " --target " +
              tmp.file("gt.vol") + " --out " + tmp.file("m.csv")) == 0);
  CHECK(fs::exists(tmp.file("m.csv")));

  REQUIRE(run("compress --cloud " + tmp.file("recon/cloud.ckpt") + " --out " +
              tmp.file("model.fgsc")) == 0);
  const Checkpoint before = read_checkpoint(tmp.file("recon/cloud.ckpt"));
  CHECK(fs::file_size(tmp.file("model.fgsc")) == 16 + 22 * before.cloud.size());

  REQUIRE(run("decompress --model " + tmp.file("model.fgsc") + " --out " +
              tmp.file("restored.ckpt")) == 0);
  REQUIRE(run("voxelize --cloud " + tmp.file("restored.ckpt") + " --dims 24 --spacing 1 --out " +
              tmp.file("voxelized.vol")) == 0);
  CHECK(fs::exists(tmp.file("voxelized.vol")));

  REQUIRE(run("bench --target rasterize --sides 24 --counts 100 --repeats 1 --out " +
              tmp.file("bench.csv")) == 0);
  CHECK(fs::exists(tmp.file("bench.csv")));
}

TEST_CASE("fit-volume smoke") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 20 --seed 6 --out " + tmp.file("gt.vol")) == 0);
  REQUIRE(run("fit-volume --volume " + tmp.file("gt.vol") +
              " --splats 100 --iters 5 --seed 2 --out " + tmp.file("fit")) == 0);
  CHECK(fs::exists(tmp.file("fit/volume.vol")));
  CHECK(fs::exists(tmp.file("fit/cloud.ckpt")));
  CHECK(fs::exists(tmp.file("fit/fit.metrics.csv")));
}

TEST_CASE("deterministic reconstructions are byte-identical") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 20 --seed 9 --out " + tmp.file("gt.vol")) == 0);
  REQUIRE(run("project --volume " + tmp.file("gt.vol") + " --views 6 --detector 40 --out " +
              tmp.file("scan.proj")) == 0);
  const std::string recon_args = "reconstruct --projections " + tmp.file("scan.proj") +
                                 " --init fdk-gradient --splats 80 --iters 3 --gt " +
                                 tmp.file("gt.vol") + " --seed 4 --deterministic --out ";
  REQUIRE(run(recon_args + tmp.file("run_a")) == 0);
  REQUIRE(run(recon_args + tmp.file("run_b")) == 0);
  CHECK(slurp(tmp.file("run_a/volume.vol")) == slurp(tmp.file("run_b/volume.vol")));
  CHECK(slurp(tmp.file("run_a/cloud.ckpt")) == slurp(tmp.file("run_b/cloud.ckpt")));
  CHECK(slurp(tmp.file("run_a/reconstruct.metrics.csv")) ==
        slurp(tmp.file("run_b/reconstruct.metrics.csv")));
}

TEST_CASE("reconstruct can resume from its checkpoint") {
  TempDir tmp;
  REQUIRE(run("phantom --dims 20 --seed 11 --out " + tmp.file("gt.vol")) == 0);
  REQUIRE(run("project --volume " + tmp.file("gt.vol") + " --views 6 --detector 40 --out " +
              tmp.file("scan.proj")) == 0);
  const std::string base = "reconstruct --projections " + tmp.file("scan.proj") +
                           " --init fdk-gradient --splats 80 --iters 6 --seed 4"
                           " --deterministic ";
  REQUIRE(run(base + "--out " + tmp.file("straight")) == 0);
  // capture a mid-run checkpoint at iteration 4, then resume it to the end
  REQUIRE(run(base + "--checkpoint-interval 4 --out " + tmp.file("partial")) == 0);
  REQUIRE(fs::exists(tmp.file("partial/checkpoint.ckpt")));
  REQUIRE(run(base + "--resume " + tmp.file("partial/checkpoint.ckpt") + " --out " +
              tmp.file("resumed")) == 0);
  CHECK(slurp(tmp.file("straight/volume.vol")) == slurp(tmp.file("resumed/volume.vol")));
  CHECK(slurp(tmp.file("straight/cloud.ckpt")) == slurp(tmp.file("resumed/cloud.ckpt")));
  CHECK(slurp(tmp.file("straight/reconstruct.metrics.csv")) ==
        slurp(tmp.file("resumed/reconstruct.metrics.csv")));

  // resuming under a different configuration is refused with a conflict report
  CHECK(run("reconstruct --projections " + tmp.file("scan.proj") +
            " --init fdk-gradient --splats 80 --iters 7 --seed 4 --deterministic"
            " --resume " +
            tmp.file("partial/checkpoint.ckpt") + " --out " + tmp.file("bad_resume")) == 2);
}
