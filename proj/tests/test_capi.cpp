// C API: handles, status codes and last-error reporting.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "xseg/image.hpp"
#include "xseg/xseg.h"

namespace fs = std::filesystem;
using namespace xseg;
using xseg::test::TempDir;

namespace {

// 32x32 image in 4 vertical bands, written as a two-plane h/l manifest.
fs::path write_bands(const TempDir& dir) {
  const MultiChannelImage image =
      test::make_image(32, 32, 2, [](int c, int x, int) { return 0.1 + 0.2 * (x / 8) + 0.05 * c; });
  const fs::path d = dir / "bands";
  write_manifest(d, image);
  return d;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(xseg_version()) > 0);
  CHECK(std::string(xseg_status_name(XSEG_OK)) == "ok");
  CHECK(std::string(xseg_status_name(XSEG_ERR_IO)) != std::string(xseg_status_name(XSEG_ERR_DATA)));
}

TEST_CASE("null arguments are rejected") {
  xseg_image* img = nullptr;
  CHECK(xseg_image_load(nullptr, &img) == XSEG_ERR_INVALID_ARGUMENT);
  CHECK(img == nullptr);
  CHECK(std::strlen(xseg_last_error()) > 0);
  CHECK(xseg_compute_metrics(1, 1, 1, 1, nullptr) == XSEG_ERR_INVALID_ARGUMENT);
}

TEST_CASE("missing manifest is an io error") {
  TempDir dir("capi");
  xseg_image* img = nullptr;
  CHECK(xseg_image_load((dir / "nope").string().c_str(), &img) == XSEG_ERR_IO);
  CHECK(img == nullptr);
  CHECK(std::string(xseg_last_error()).find("manifest") != std::string::npos);
}

TEST_CASE("load, select, segment and save") {
  TempDir dir("capi");
  const fs::path d = write_bands(dir);
  xseg_image* img = nullptr;
  REQUIRE(xseg_image_load(d.string().c_str(), &img) == XSEG_OK);
  int w = 0, h = 0, planes = 0;
  REQUIRE(xseg_image_info(img, &w, &h, &planes) == XSEG_OK);
  CHECK(w == 32);
  CHECK(h == 32);
  CHECK(planes == 2);
  const float* samples = nullptr;
  const char* role = nullptr;
  REQUIRE(xseg_image_plane(img, 1, &samples, &role) == XSEG_OK);
  CHECK(std::string(role) == "low");
  CHECK(samples[8] == doctest::Approx(0.35).epsilon(1e-4));
  CHECK(xseg_image_plane(img, 2, &samples, &role) == XSEG_ERR_INVALID_ARGUMENT);

  xseg_image* sel = nullptr;
  CHECK(xseg_image_select(img, "z", &sel) == XSEG_ERR_DATA);
  CHECK(sel == nullptr);
  CHECK(xseg_image_select(img, "bogus", &sel) == XSEG_ERR_INVALID_ARGUMENT);
  REQUIRE(xseg_image_select(img, "h", &sel) == XSEG_OK);
  REQUIRE(xseg_image_info(sel, &w, &h, &planes) == XSEG_OK);
  CHECK(planes == 1);

  xseg_labeling* lab = nullptr;
  CHECK(xseg_segment(sel, "{\"backend\":\"nope\"}", &lab) == XSEG_ERR_INVALID_ARGUMENT);
  CHECK(xseg_segment(sel, "{\"k\":0}", &lab) == XSEG_ERR_INVALID_ARGUMENT);
  REQUIRE(xseg_segment(sel, "{\"backend\":\"hard_slic\",\"k\":16,\"m\":0.01}", &lab) == XSEG_OK);
  int lw = 0, lh = 0, count = 0;
  REQUIRE(xseg_labeling_info(lab, &lw, &lh, &count) == XSEG_OK);
  CHECK(lw == 32);
  CHECK(lh == 32);
  CHECK(count >= 4);
  const int32_t* labels = nullptr;
  REQUIRE(xseg_labeling_labels(lab, &labels) == XSEG_OK);
  // No region crosses a band boundary.
  for (int y = 0; y < 32; ++y)
    for (int x = 1; x < 32; ++x)
      if (x % 8 == 0) CHECK(labels[y * 32 + x] != labels[y * 32 + x - 1]);
  CHECK(labels[0] == 0);
  const fs::path png = dir / "labels.png";
  const fs::path side = dir / "labels.json";
  REQUIRE(xseg_labeling_save(lab, png.string().c_str(), side.string().c_str()) == XSEG_OK);
  CHECK(fs::exists(png));
  CHECK(fs::exists(side));

  xseg_labeling* soft = nullptr;
  REQUIRE(xseg_segment(sel, "{\"backend\":\"soft_slic\",\"k\":16,\"v\":5}", &soft) == XSEG_OK);
  REQUIRE(xseg_labeling_info(soft, &lw, &lh, &count) == XSEG_OK);
  CHECK(count >= 1);

  xseg_labeling_free(soft);
  xseg_labeling_free(lab);
  xseg_image_free(sel);
  xseg_image_free(img);
  xseg_image_free(nullptr);
  xseg_labeling_free(nullptr);
}

TEST_CASE("metrics through the C API") {
  xseg_metrics m{};
  REQUIRE(xseg_compute_metrics(99, 1, 5, 95, &m) == XSEG_OK);
  CHECK(m.accuracy == doctest::Approx(0.97));
  CHECK(m.precision == doctest::Approx(99.0 / 104.0));
  CHECK(m.tp_rate_percent == doctest::Approx(99.0));
  CHECK(m.fp_rate_percent == doctest::Approx(5.0));
  CHECK(m.f1 == doctest::Approx(2.0 * 99 / (2.0 * 99 + 1 + 5)));
  CHECK(m.degenerate == 0);
  REQUIRE(xseg_compute_metrics(0, 0, 0, 4, &m) == XSEG_OK);
  CHECK(m.degenerate != 0);
}

TEST_CASE("workflow entry points") {
  TempDir dir("capi");
  const std::string out = (dir / "data").string();
  const std::string cfg = "{\"n\":4,\"anomaly_fraction\":0.5,\"width\":48,\"height\":48,\"radius_min\":3,"
                          "\"radius_max\":5,\"verbosity\":0,\"jobs\":1,\"out\":\"" + out + "\"}";
  xseg_string* result = nullptr;
  REQUIRE(xseg_run_synth(cfg.c_str(), &result) == XSEG_OK);
  CHECK(std::string(xseg_string_data(result)) == (fs::path(out) / "index.json").string());
  xseg_string_free(result);
  CHECK(fs::exists(fs::path(out) / "index.json"));

  result = nullptr;
  CHECK(xseg_run_synth("{\"n\":4,\"colour\":1}", &result) == XSEG_ERR_INVALID_ARGUMENT);
  CHECK(std::string(xseg_last_error()).find("colour") != std::string::npos);
  CHECK(xseg_run_synth("not json", &result) == XSEG_ERR_INVALID_ARGUMENT);
  CHECK(xseg_run_synth("{\"n\":1}", &result) == XSEG_ERR_INVALID_ARGUMENT);
  CHECK(xseg_run_eval(("{\"model\":\"" + (dir / "none").string() + "\"}").c_str(), &result) == XSEG_ERR_IO);
  CHECK(result == nullptr);
}
