// End-to-end checks of the volt binary: every subcommand, the exit-code
// contract, manifest reproducibility, and config layering.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace {

namespace fs = std::filesystem;

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

CmdResult run_cmd(const std::string& args) {
  const std::string cmd = std::string(VOLT_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("volt_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

// Small, fast training invocation shared by several cases.
std::string tiny_train_args(const std::string& out, int seed, int epochs = 1) {
  return "train --dataset synthetic --depth 10 --widen 1 --epochs " +
         std::to_string(epochs) + " --batch 16 --train-count 64 --test-count 32" +
         " --dropout 0 --seed " + std::to_string(seed) + " --threads 1 --out " + out;
}

}  // namespace

TEST_CASE("count prints monomial counts and network deltas") {
  auto r = run_cmd("count --n 9 --r 2");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("= 55") != std::string::npos);

  r = run_cmd("count --n 9 --r 0");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("= 1") != std::string::npos);

  r = run_cmd("count --depth 28 --widen 10");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("60480") != std::string::npos);

  r = run_cmd("count --depth 11");
  CHECK(r.exit_code == 2);
}

TEST_CASE("gradcheck exit codes and the sign-flip fixture") {
  auto r = run_cmd("gradcheck --n 4");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("PASS") != std::string::npos);

  r = run_cmd("gradcheck --n 4 --mutate-sign");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("FAIL") != std::string::npos);

  r = run_cmd("gradcheck --n 5");
  CHECK(r.exit_code == 2);  // usage: only 4, 9, 27 exist
}

TEST_CASE("train writes history, checkpoint, and manifest; equal seeds match") {
  TempDir dir;
  const auto out1 = dir.sub("a"), out2 = dir.sub("b");
  auto r = run_cmd(tiny_train_args(out1, 5));
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(fs::path(out1) / "history.csv"));
  CHECK(fs::exists(fs::path(out1) / "manifest.json"));
  CHECK(fs::exists(fs::path(out1) / "epoch_0001.ckpt"));

  r = run_cmd(tiny_train_args(out2, 5));
  CHECK(r.exit_code == 0);
  CHECK(slurp(out1 + "/history.csv") == slurp(out2 + "/history.csv"));
  CHECK(slurp(out1 + "/manifest.json") == slurp(out2 + "/manifest.json"));

  // A different seed must change the trajectory.
  const auto out3 = dir.sub("c");
  r = run_cmd(tiny_train_args(out3, 6));
  CHECK(r.exit_code == 0);
  CHECK(slurp(out1 + "/history.csv") != slurp(out3 + "/history.csv"));
}

TEST_CASE("train replays a manifest exactly") {
  TempDir dir;
  const auto out1 = dir.sub("orig"), out2 = dir.sub("replay");
  REQUIRE(run_cmd(tiny_train_args(out1, 11)).exit_code == 0);
  const auto r = run_cmd("train --from-manifest " + out1 +
                         "/manifest.json --threads 1 --out " + out2);
  CHECK(r.exit_code == 0);
  CHECK(slurp(out1 + "/history.csv") == slurp(out2 + "/history.csv"));
  CHECK(slurp(out1 + "/manifest.json") == slurp(out2 + "/manifest.json"));
}

TEST_CASE("train output-directory collision and usage errors") {
  TempDir dir;
  const auto out = dir.sub("run");
  REQUIRE(run_cmd(tiny_train_args(out, 5, 0)).exit_code == 0);
  CHECK(run_cmd(tiny_train_args(out, 5, 0)).exit_code == 2);  // refuses reuse
  CHECK(run_cmd(tiny_train_args(out, 5, 0) + " --force").exit_code == 0);

  const auto fresh = dir.sub("fresh");
  CHECK(run_cmd("train --dataset synthetic --depth 11 --seed 1 --out " + fresh)
            .exit_code == 2);
  CHECK(run_cmd("train --dataset synthetic --out " + fresh).exit_code == 2);
  CHECK(run_cmd("train --dataset nosuch --seed 1 --out " + fresh).exit_code == 2);
  CHECK(run_cmd("train --dataset cifar10 --seed 1 --out " + fresh).exit_code == 3);
  CHECK(run_cmd("train --dataset cifar10 --data " + dir.sub("missing") +
                " --seed 1 --out " + fresh)
            .exit_code == 3);
}

TEST_CASE("config file merges under explicit flags") {
  TempDir dir;
  const auto cfg = dir.sub("run.cfg");
  {
    std::ofstream os(cfg);
    os << "[train]\nbatch=16\ntrain-count=48\ntest-count=24\ndropout=0\n";
  }
  const auto out = dir.sub("out");
  const auto r = run_cmd(
      "train --dataset synthetic --epochs 1 --batch 8 --seed 3 --threads 1 "
      "--config " +
      cfg + " --out " + out);
  CHECK(r.exit_code == 0);
  const auto manifest = slurp(out + "/manifest.json");
  CHECK(manifest.find("\"batch\": 8") != std::string::npos);        // flag wins
  CHECK(manifest.find("\"train_count\": 48") != std::string::npos); // file value
  CHECK(manifest.find("\"test_count\": 24") != std::string::npos);
}

TEST_CASE("epochs 0 initializes a checkpoint that analyze can consume") {
  TempDir dir;
  const auto out = dir.sub("init");
  REQUIRE(run_cmd(tiny_train_args(out, 9, 0)).exit_code == 0);
  CHECK(fs::exists(fs::path(out) / "epoch_0000.ckpt"));

  const auto an = dir.sub("analysis");
  const auto r = run_cmd("analyze --ckpt " + out + "/epoch_0000.ckpt --filters 0..15 " +
                         "--rho-grid default --out " + an);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(fs::path(an) / "manifest.json"));
  CHECK(fs::exists(fs::path(an) / "filter_00_sheet.svg"));
  CHECK(fs::exists(fs::path(an) / "filter_15_profile.svg"));

  // Histogram bin counts sum to the parameter count (16 filters, n = 27).
  const auto hist = lines_of(slurp(an + "/hist_linear.csv"));
  REQUIRE(hist.size() >= 2);
  CHECK(hist[0] == "bin_lo,bin_hi,count");
  long long total = 0;
  for (std::size_t i = 1; i < hist.size(); ++i) {
    double lo = 0, hi = 0;
    long long c = 0;
    REQUIRE(std::sscanf(hist[i].c_str(), "%lf,%lf,%lld", &lo, &hi, &c) == 3);
    total += c;
  }
  CHECK(total == 16 * 27);

  // Untrained w2 = 0: the full-filter and linear-stimulus curves coincide.
  const auto prof = lines_of(slurp(an + "/filter_03_profile.csv"));
  REQUIRE(prof.size() == 17);
  CHECK(prof[0] == "rho,y1,y2,y3,y4");
  for (std::size_t i = 1; i < prof.size(); ++i) {
    double rho = 0, y1 = 0, y2 = 0, y3 = 0, y4 = 0;
    REQUIRE(std::sscanf(prof[i].c_str(), "%lf,%lf,%lf,%lf,%lf", &rho, &y1, &y2, &y3,
                        &y4) == 5);
    CHECK(std::abs(y1 - y4) <= 1e-9 * std::max(1.0, std::abs(y1)));
    CHECK(std::abs(y2 - y3) <= 1e-9 * std::max(1.0, std::abs(y3)));
  }
}

TEST_CASE("analyze rejects unusable inputs") {
  TempDir dir;
  const auto lin = dir.sub("linear_init");
  REQUIRE(run_cmd(tiny_train_args(lin, 9, 0) + " --first-layer linear").exit_code == 0);
  CHECK(run_cmd("analyze --ckpt " + lin + "/epoch_0000.ckpt --out " + dir.sub("x"))
            .exit_code == 2);

  const auto vol = dir.sub("volterra_init");
  REQUIRE(run_cmd(tiny_train_args(vol, 9, 0)).exit_code == 0);
  CHECK(run_cmd("analyze --ckpt " + vol + "/epoch_0000.ckpt --filters 0..99 --out " +
                dir.sub("y"))
            .exit_code == 2);
  CHECK(run_cmd("analyze --ckpt " + dir.sub("nosuch.ckpt") + " --out " + dir.sub("z"))
            .exit_code == 3);
}

TEST_CASE("bench emits the stable csv schema") {
  TempDir dir;
  const auto out = dir.sub("bench");
  const auto r = run_cmd("bench --sizes 8 12 --repeats 3 --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("R^2") != std::string::npos);

  const auto csv = lines_of(slurp(out + "/bench.csv"));
  REQUIRE(csv.size() == 5);  // header + 2 sizes x 2 kinds
  CHECK(csv[0] == "kind,h,w,out_h,out_w,patches,forward_s,wgrad_s,igrad_s");
  double lin_fwd = -1, vol_fwd = -1;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    char kind[32];
    int h = 0, w = 0, oh = 0, ow = 0;
    double patches = 0, fwd = 0, wg = 0, ig = 0;
    REQUIRE(std::sscanf(csv[i].c_str(), "%31[^,],%d,%d,%d,%d,%lf,%lf,%lf,%lf", kind,
                        &h, &w, &oh, &ow, &patches, &fwd, &wg, &ig) == 9);
    CHECK(patches == oh * ow);
    if (h == 12 && std::string(kind) == "linear") lin_fwd = fwd;
    if (h == 12 && std::string(kind) == "volterra") vol_fwd = fwd;
  }
  // The quadratic kernel does strictly more work per patch.
  CHECK(lin_fwd > 0);
  CHECK(vol_fwd > lin_fwd);
}
