// The xseg binary: exit codes, determinism and artifact layout.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "xseg/image.hpp"
#include "xseg/slic.hpp"

#ifndef XSEG_CLI
#error "XSEG_CLI must name the xseg binary"
#endif

namespace fs = std::filesystem;
using namespace xseg;
using xseg::test::slurp;
using xseg::test::TempDir;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" XSEG_CLI "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Small phantoms: 48x48 with blobs of radius 3..5.
fs::path small_config(const TempDir& dir) {
  const fs::path p = dir / "small.json";
  write_text(p, R"({"width":48,"height":48,"radius_min":3,"radius_max":5,"verbosity":0,"jobs":1})");
  return p;
}

// 64x64 image of 4x4 flat blocks, each 16 px, with distinct intensities.
MultiChannelImage block_image() {
  return test::make_image(64, 64, 1, [](int, int x, int y) {
    const int b = (y / 16) * 4 + x / 16;
    return 0.05 + 0.06 * ((b * 7) % 16);
  });
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("synth --help") == 0);
  CHECK(run("") == 2);
  CHECK(run("synth --frobnicate 3") == 2);
  CHECK(run("synth --n notanumber") == 2);
}

TEST_CASE("synth rejects n below 2") {
  TempDir dir("cli");
  CHECK(run("synth --n 1 --out " + q(dir / "d")) == 2);
  CHECK_FALSE(fs::exists(dir / "d" / "index.json"));
}

TEST_CASE("synth writes n manifests deterministically") {
  TempDir dir("cli");
  const fs::path cfg = small_config(dir);
  REQUIRE(run("synth --config " + q(cfg) + " --n 10 --seed 9 --out " + q(dir / "a")) == 0);
  REQUIRE(run("synth --config " + q(cfg) + " --n 10 --seed 9 --jobs 3 --out " + q(dir / "b")) == 0);
  const auto index = nlohmann::json::parse(slurp(dir / "a" / "index.json"));
  int manifests = 0;
  for (const auto& e : fs::directory_iterator(dir / "a"))
    if (fs::exists(e.path() / "manifest.json")) ++manifests;
  CHECK(manifests == 10);
  CHECK(slurp(dir / "a" / "index.json") == slurp(dir / "b" / "index.json"));
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    CHECK_MESSAGE(slurp(e.path()) == slurp(dir / "b" / rel), rel.string());
  }
}

TEST_CASE("XSEG_SEED stands in for --seed") {
  TempDir dir("cli");
  const fs::path cfg = small_config(dir);
  REQUIRE(run("synth --config " + q(cfg) + " --n 2 --seed 5 --out " + q(dir / "a")) == 0);
  REQUIRE(run("synth --config " + q(cfg) + " --n 2 --out " + q(dir / "b"), "XSEG_SEED=5") == 0);
  REQUIRE(run("synth --config " + q(cfg) + " --n 2 --out " + q(dir / "c"), "XSEG_SEED=6") == 0);
  const auto first = [](const fs::path& d) {
    const auto index = nlohmann::json::parse(slurp(d / "index.json"));
    return slurp(d / index[0]["path"].get<std::string>() / "high.png");
  };
  CHECK(first(dir / "a") == first(dir / "b"));
  CHECK(first(dir / "a") != first(dir / "c"));
  CHECK(run("synth --n 2 --out " + q(dir / "d"), "XSEG_SEED=abc") == 2);
}

TEST_CASE("config files: unknown keys and flag precedence") {
  TempDir dir("cli");
  write_text(dir / "bad.json", R"({"n":4,"colour":"red"})");
  CHECK(run("synth --config " + q(dir / "bad.json") + " --out " + q(dir / "x")) == 2);
  write_text(dir / "broken.json", "{");
  CHECK(run("synth --config " + q(dir / "broken.json") + " --out " + q(dir / "x")) == 2);
  // n=1 in the file is overridden by the flag.
  write_text(dir / "cfg.json", R"({"n":1,"width":48,"height":48,"radius_min":3,"radius_max":5,"verbosity":0})");
  CHECK(run("synth --config " + q(dir / "cfg.json") + " --n 3 --out " + q(dir / "y")) == 0);
  CHECK(fs::exists(dir / "y" / "index.json"));
}

TEST_CASE("segment a uniform image into the requested grid") {
  TempDir dir("cli");
  write_manifest(dir / "flat", test::constant_image(64, 64, 3, 0.5));
  REQUIRE(run("segment --manifest " + q(dir / "flat") + " --backend hard_slic --k 16 --out " + q(dir / "o")) == 0);
  const Labeling lab = read_labeling(dir / "o" / "labels.png", dir / "o" / "labels.json");
  CHECK(lab.count == 16);
  CHECK(lab.width == 64);
}

TEST_CASE("hard and sharp soft segmentation agree on grid-aligned blocks") {
  TempDir dir("cli");
  write_manifest(dir / "blocks", block_image());
  const std::string common = " --manifest " + q(dir / "blocks") + " --k 16 --m 0.01 --mode h";
  REQUIRE(run("segment --backend hard_slic --out " + q(dir / "hard") + common) == 0);
  REQUIRE(run("segment --backend soft_slic --beta 10000 --v 5 --out " + q(dir / "soft") + common) == 0);
  const Labeling hard = read_labeling(dir / "hard" / "labels.png", dir / "hard" / "labels.json");
  const Labeling soft = read_labeling(dir / "soft" / "labels.png", dir / "soft" / "labels.json");
  CHECK(hard.count == 16);
  CHECK(hard.labels == soft.labels);
}

TEST_CASE("segment data errors exit 1") {
  TempDir dir("cli");
  const MultiChannelImage pseudo(16, 16,
                                 {Plane{ChannelRole::pseudo_r, std::vector<float>(256, 0.2f)},
                                  Plane{ChannelRole::pseudo_g, std::vector<float>(256, 0.4f)},
                                  Plane{ChannelRole::pseudo_b, std::vector<float>(256, 0.6f)}});
  write_manifest(dir / "pseudo", pseudo);
  CHECK(run("segment --manifest " + q(dir / "pseudo") + " --mode z --out " + q(dir / "o")) == 1);
  CHECK(run("segment --manifest " + q(dir / "pseudo") + " --k 4 --out " + q(dir / "o")) == 0);
  CHECK(run("segment --manifest " + q(dir / "missing") + " --out " + q(dir / "o")) == 1);
  CHECK(run("segment --manifest " + q(dir / "pseudo") + " --k 0 --out " + q(dir / "o")) == 2);
}

TEST_CASE("train and eval errors") {
  TempDir dir("cli");
  const fs::path cfg = small_config(dir);
  REQUIRE(run("synth --config " + q(cfg) + " --n 4 --anomaly-fraction 0 --out " + q(dir / "benign")) == 0);
  const fs::path index = dir / "benign" / "index.json";
  CHECK(run("train --dataset " + q(index) + " --epochs 0 --out " + q(dir / "m")) == 2);
  CHECK(run("train --config " + q(cfg) + " --dataset " + q(index) + " --modes h --k 16 --out " + q(dir / "m")) == 1);
  CHECK(run("eval --model " + q(dir / "nomodel") + " --out " + q(dir / "e")) == 1);
  CHECK(run("train --out " + q(dir / "m")) == 2);
}

TEST_CASE("synth, train and eval end to end") {
  TempDir dir("cli");
  const fs::path cfg = small_config(dir);
  REQUIRE(run("synth --config " + q(cfg) + " --n 8 --out " + q(dir / "data")) == 0);
  const std::string pipe = " --config " + q(cfg) + " --modes h,hlz --k 36";
  REQUIRE(run("train" + pipe + " --epochs 40 --dataset " + q(dir / "data" / "index.json") + " --out " + q(dir / "model")) == 0);
  for (const char* f : {"split.json", "train_curve.csv", "classifier_h.xseg", "classifier_h.json", "classifier_hlz.xseg"})
    CHECK_MESSAGE(fs::exists(dir / "model" / f), f);
  CHECK(run("eval --config " + q(cfg) + " --modes z --model " + q(dir / "model") + " --out " + q(dir / "e0")) == 1);
  REQUIRE(run("eval" + pipe + " --model " + q(dir / "model") + " --out " + q(dir / "eval")) == 0);
  const std::string table = slurp(dir / "eval" / "table.txt");
  CHECK(table.find("hlz") != std::string::npos);
  for (const char* mode : {"h", "hlz"}) {
    const auto report = nlohmann::json::parse(slurp(dir / "eval" / "reports" / (std::string(mode) + ".json")));
    CHECK(report["metrics"].contains("A"));
    CHECK(fs::exists(dir / "eval" / "labels" / mode));
    CHECK(fs::exists(dir / "eval" / "predictions" / mode));
    CHECK(fs::exists(dir / "eval" / "overlays" / mode));
  }
  // Every artifact stays inside the output directory.
  CHECK(fs::exists(dir / "eval" / "reports" / "h_image.json"));
}
