#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "xseg/error.hpp"
#include "xseg/slic.hpp"

using namespace xseg;
using xseg::test::TempDir;

namespace {

// Exhaustive nearest-center search, lowest index on ties.
std::vector<std::int32_t> brute_force_assign(const MultiChannelImage& img, const std::vector<Center>& centers,
                                             double S, double m) {
  std::vector<std::int32_t> out(img.pixel_count());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        double d = 0.0;
        for (std::size_t c = 0; c < img.plane_count(); ++c) {
          const double e = img.at(c, x, y) - centers[k].intensity[c];
          d += e * e;
        }
        const double dx = x - centers[k].x, dy = y - centers[k].y;
        d += (dx * dx + dy * dy) * m * m / (S * S);
        if (d < best) {
          best = d;
          out[static_cast<std::size_t>(y) * img.width() + x] = static_cast<std::int32_t>(k);
        }
      }
    }
  }
  return out;
}

// 4-connectivity check by flood fill, one component per id.
bool every_label_connected(const Labeling& l) {
  std::vector<char> seen(l.labels.size(), 0);
  std::set<int> started;
  for (std::size_t s = 0; s < l.labels.size(); ++s) {
    if (seen[s]) continue;
    if (!started.insert(l.labels[s]).second) return false;
    std::vector<std::size_t> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(p % l.width), y = static_cast<int>(p / l.width);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int i = 0; i < 4; ++i) {
        if (nx[i] < 0 || ny[i] < 0 || nx[i] >= l.width || ny[i] >= l.height) continue;
        const std::size_t q = static_cast<std::size_t>(ny[i]) * l.width + nx[i];
        if (!seen[q] && l.labels[q] == l.labels[p]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
  }
  return true;
}

void check_labeling_invariants(const Labeling& l) {
  REQUIRE(l.labels.size() == static_cast<std::size_t>(l.width) * l.height);
  std::vector<int> hits(l.count, 0);
  for (auto id : l.labels) {
    REQUIRE(id >= 0);
    REQUIRE(id < l.count);
    ++hits[id];
  }
  for (int h : hits) CHECK(h > 0);
  CHECK(l.centers.size() == static_cast<std::size_t>(l.count));
  CHECK(every_label_connected(l));
}

double gradient_oracle(const MultiChannelImage& img, int x, int y) {
  auto s = [&](std::size_t c, int xx, int yy) {
    return img.at(c, std::clamp(xx, 0, img.width() - 1), std::clamp(yy, 0, img.height() - 1));
  };
  double g = 0.0;
  for (std::size_t c = 0; c < img.plane_count(); ++c) {
    const double dx = s(c, x + 1, y) - s(c, x - 1, y);
    const double dy = s(c, x, y + 1) - s(c, x, y - 1);
    g += dx * dx + dy * dy;
  }
  return g;
}

}  // namespace

TEST_CASE("grid_interval") {
  CHECK(grid_interval(10000, 25) == 20.0);
  CHECK(grid_interval(64, 64) == 1.0);
  CHECK(grid_interval(64, 4) == 4.0);
  CHECK_THROWS_AS(grid_interval(3, 4), Error);
  CHECK_THROWS_AS(grid_interval(3, 0), Error);
}

TEST_CASE("SlicConfig validation") {
  SlicConfig c;
  CHECK_NOTHROW(c.validate(1000));
  c.k = 2000;
  CHECK_THROWS_AS(c.validate(1000), Error);
  c = SlicConfig{};
  c.m = 0.0;
  CHECK_THROWS_AS(c.validate(1000), Error);
  c = SlicConfig{};
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(1000), Error);
  c = SlicConfig{};
  c.min_region_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(1000), Error);
}

TEST_CASE("init_centers_grid places centers half a cell in") {
  SUBCASE("100x100, K=25") {
    const auto centers = init_centers_grid(test::constant_image(100, 100, 1, 0.5), 25);
    REQUIRE(centers.size() == 25);
    std::set<double> xs, ys;
    for (const Center& c : centers) {
      xs.insert(c.x);
      ys.insert(c.y);
      CHECK(c.intensity.size() == 1);
    }
    CHECK(xs == std::set<double>{10, 30, 50, 70, 90});
    CHECK(ys == std::set<double>{10, 30, 50, 70, 90});
  }
  SUBCASE("4x4, K=4 samples the center pixel") {
    const auto img = test::make_image(4, 4, 2, [](int c, int x, int y) { return (c + 1) * (x + 4 * y) / 40.0; });
    const auto centers = init_centers_grid(img, 4);
    REQUIRE(centers.size() == 4);
    const double expect[4][2] = {{1, 1}, {3, 1}, {1, 3}, {3, 3}};
    for (int i = 0; i < 4; ++i) {
      CHECK(centers[i].x == expect[i][0]);
      CHECK(centers[i].y == expect[i][1]);
      CHECK(centers[i].intensity[1] == doctest::Approx(img.at(1, (int)expect[i][0], (int)expect[i][1])));
    }
  }
  SUBCASE("1x1, K=1 clamps to the only pixel") {
    const auto centers = init_centers_grid(test::constant_image(1, 1, 1, 0.25), 1);
    REQUIRE(centers.size() == 1);
    CHECK(centers[0].x == 0.0);
    CHECK(centers[0].y == 0.0);
    CHECK(centers[0].intensity[0] == 0.25);
  }
}

TEST_CASE("perturb_to_min_gradient") {
  SUBCASE("uniform image leaves centers alone") {
    const auto img = test::constant_image(20, 20, 3, 0.3);
    const auto before = init_centers_grid(img, 4);
    const auto after = perturb_to_min_gradient(before, img);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(after[i].x == before[i].x);
      CHECK(after[i].y == before[i].y);
    }
  }
  SUBCASE("center on a step edge moves to the flat side") {
    const auto img = test::make_image(10, 10, 1, [](int, int x, int) { return x >= 5 ? 1.0 : 0.0; });
    Center c{5, 5, {1.0}};
    // Oracle: first minimum over the 3x3 block in (y, x) order, original kept on ties.
    double best = gradient_oracle(img, 5, 5);
    int bx = 5, by = 5;
    for (int y = 4; y <= 6; ++y)
      for (int x = 4; x <= 6; ++x)
        if (gradient_oracle(img, x, y) < best) {
          best = gradient_oracle(img, x, y);
          bx = x;
          by = y;
        }
    const auto moved = perturb_to_min_gradient(std::vector<Center>{c}, img);
    CHECK(moved[0].x == bx);
    CHECK(moved[0].y == by);
    CHECK(bx == 6);
    CHECK(by == 4);
    CHECK(gradient_magnitude(img, bx, by) == 0.0);
  }
  SUBCASE("corner centers stay in bounds") {
    Rng rng(5);
    const auto img = test::random_image(6, 6, 1, rng);
    const auto moved = perturb_to_min_gradient(std::vector<Center>{{0, 0, {0.0}}, {5, 5, {0.0}}}, img);
    for (const Center& c : moved) {
      CHECK(c.x >= 0);
      CHECK(c.x <= 5);
      CHECK(c.y >= 0);
      CHECK(c.y <= 5);
    }
  }
}

TEST_CASE("slic_distance") {
  const Center c{3, 4, {0.2, 0.4}};
  const std::vector<double> same{0.2, 0.4};
  CHECK(slic_distance(3, 4, same, c, 5.0, 10.0) == 0.0);
  CHECK(slic_distance(8, 4, same, c, 5.0, 10.0) == doctest::Approx(10.0));
  const std::vector<double> off{0.5, 0.8};
  CHECK(slic_distance(3, 4, off, c, 5.0, 10.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(slic_distance(0, 0, std::vector<double>{0.1}, c, 1.0, 1.0), Error);
}

TEST_CASE("slic_distance: scaling m scales only the spatial term") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Center c{rng.uniform(0, 20), rng.uniform(0, 20), {rng.uniform(), rng.uniform()}};
    const std::vector<double> px{rng.uniform(), rng.uniform()};
    const double x = rng.uniform(0, 20), y = rng.uniform(0, 20), S = rng.uniform(1, 8);
    const double m = rng.uniform(0.1, 20), k = rng.uniform(0.1, 5);
    const double dc2 = std::pow(px[0] - c.intensity[0], 2) + std::pow(px[1] - c.intensity[1], 2);
    const double d1 = slic_distance(x, y, px, c, S, m);
    const double d2 = slic_distance(x, y, px, c, S, m * k);
    CHECK(d2 * d2 - dc2 == doctest::Approx(k * k * (d1 * d1 - dc2)).epsilon(1e-9));
  }
}

TEST_CASE("assign_pixels: argmin is independent of m when colour distance vanishes") {
  const auto img = test::constant_image(24, 24, 1, 0.5);
  const auto centers = init_centers_grid(img, 9);
  const double S = grid_interval(img.pixel_count(), 9);
  const auto a = assign_pixels(img, centers, S, 0.3);
  CHECK(assign_pixels(img, centers, S, 40.0) == a);
  // Voronoi grid of the centers.
  CHECK(a == brute_force_assign(img, centers, S, 1.0));
  CHECK(a[0] == 0);
  CHECK(a[img.pixel_count() - 1] == 8);
}

TEST_CASE("assign_pixels: equidistant pixel goes to the lower index") {
  const auto img = test::constant_image(3, 1, 1, 0.0);
  const std::vector<Center> centers{{0, 0, {0.0}}, {2, 0, {0.0}}};
  const auto a = assign_pixels(img, centers, 2.0, 1.0);
  CHECK(a == std::vector<std::int32_t>{0, 0, 1});
  // Swapping the order swaps the winner in the middle.
  const std::vector<Center> swapped{{2, 0, {0.0}}, {0, 0, {0.0}}};
  CHECK(assign_pixels(img, swapped, 2.0, 1.0) == std::vector<std::int32_t>{1, 0, 0});
}

TEST_CASE("assign_pixels matches brute force on 8x8 images") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = test::random_image(8, 8, 3, rng);
    const auto centers = perturb_to_min_gradient(init_centers_grid(img, 4), img);
    const double S = grid_interval(64, 4);
    CHECK(assign_pixels(img, centers, S, 10.0) == brute_force_assign(img, centers, S, 10.0));
  }
}

TEST_CASE("assign_pixels falls back to the global nearest center") {
  const auto img = test::constant_image(10, 1, 1, 0.0);
  const std::vector<Center> centers{{0, 0, {0.0}}, {1, 0, {0.0}}};
  const auto a = assign_pixels(img, centers, 1.0, 1.0);
  for (int x = 2; x < 10; ++x) CHECK(a[x] == 1);
  CHECK_THROWS_AS(assign_pixels(img, std::vector<Center>{}, 1.0, 1.0), Error);
}

TEST_CASE("update_centers") {
  const auto img = test::make_image(3, 1, 1, [](int, int x, int) { return x * 0.25; });
  const std::vector<Center> prev{{9, 9, {0.9}}, {7, 7, {0.7}}};
  const auto out = update_centers(img, std::vector<std::int32_t>{0, 1, 0}, prev);
  CHECK(out[0].x == 1.0);
  CHECK(out[0].y == 0.0);
  CHECK(out[0].intensity[0] == doctest::Approx(0.25));
  CHECK(out[1].x == 1.0);
  CHECK(out[1].intensity[0] == doctest::Approx(0.25));

  SUBCASE("single cluster gives the centroid and global mean") {
    Rng rng(2);
    const auto r = test::random_image(5, 4, 2, rng);
    const auto c = update_centers(r, std::vector<std::int32_t>(20, 0), std::vector<Center>{{0, 0, {0, 0}}});
    double mean = 0.0;
    for (float v : r.samples(1)) mean += v;
    CHECK(c[0].x == doctest::Approx(2.0));
    CHECK(c[0].y == doctest::Approx(1.5));
    CHECK(c[0].intensity[1] == doctest::Approx(mean / 20));
  }
  SUBCASE("empty cluster is unchanged") {
    const auto c = update_centers(img, std::vector<std::int32_t>{0, 0, 0}, prev);
    CHECK(c[1].x == 7.0);
    CHECK(c[1].intensity[0] == 0.7);
  }
}

TEST_CASE("enforce_connectivity") {
  SUBCASE("connected large regions survive with compacted ids") {
    const auto img = test::constant_image(4, 2, 1, 0.1);
    const std::vector<std::int32_t> labels{7, 7, 3, 3, 7, 7, 3, 3};
    const Labeling l = enforce_connectivity(img, labels, 2.0, 0.25);
    CHECK(l.count == 2);
    CHECK(l.labels == std::vector<std::int32_t>{0, 0, 1, 1, 0, 0, 1, 1});
    CHECK(l.centers[1].x == doctest::Approx(2.5));
  }
  SUBCASE("stray pixel is absorbed") {
    const auto img = test::constant_image(5, 5, 1, 0.1);
    std::vector<std::int32_t> labels(25, 1);
    labels[12] = 0;
    const Labeling l = enforce_connectivity(img, labels, 5.0, 0.25);
    CHECK(l.count == 1);
    CHECK(std::all_of(l.labels.begin(), l.labels.end(), [](auto v) { return v == 0; }));
  }
  SUBCASE("checkerboard with threshold 2 collapses") {
    const auto img = test::constant_image(4, 4, 1, 0.1);
    std::vector<std::int32_t> labels(16);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) labels[y * 4 + x] = (x + y) % 2;
    const Labeling l = enforce_connectivity(img, labels, 2.0, 0.5);
    CHECK(l.count == 1);
  }
  SUBCASE("disconnected copies of one id become separate regions") {
    const auto img = test::constant_image(6, 1, 1, 0.1);
    const std::vector<std::int32_t> labels{0, 0, 1, 1, 0, 0};
    const Labeling l = enforce_connectivity(img, labels, 1.0, 1.0);
    CHECK(l.count == 3);
    CHECK(l.labels == std::vector<std::int32_t>{0, 0, 1, 1, 2, 2});
  }
}

TEST_CASE("segment_slic examples") {
  SlicConfig cfg;
  cfg.m = 10.0;
  SUBCASE("uniform image gives a regular grid") {
    cfg.k = 16;
    const Labeling l = segment_slic(test::constant_image(40, 40, 1, 0.5), cfg);
    check_labeling_invariants(l);
    CHECK(l.count == 16);
    std::vector<int> sizes(l.count, 0);
    for (auto id : l.labels) ++sizes[id];
    for (int s : sizes) CHECK(s == doctest::Approx(100).epsilon(0.2));
  }
  SUBCASE("vertical step edge is respected") {
    cfg.k = 4;
    const auto img = test::make_image(40, 40, 1, [](int, int x, int) { return x >= 20 ? 1.0 : 0.0; });
    const Labeling l = segment_slic(img, cfg);
    check_labeling_invariants(l);
    std::map<int, std::set<bool>> sides;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) sides[l.labels[y * 40 + x]].insert(x >= 20);
    for (const auto& [id, s] : sides) CHECK(s.size() == 1);
  }
  SUBCASE("K=1") {
    cfg.k = 1;
    Rng rng(4);
    const Labeling l = segment_slic(test::random_image(13, 7, 2, rng), cfg);
    CHECK(l.count == 1);
  }
  SUBCASE("invalid config") {
    cfg.k = 0;
    CHECK_THROWS_AS(segment_slic(test::constant_image(4, 4, 1, 0.0), cfg), Error);
  }
}

TEST_CASE("segment_slic properties on random images") {
  Rng rng(77);
  for (int trial = 0; trial < 8; ++trial) {
    const int w = rng.uniform_int(8, 48), h = rng.uniform_int(8, 48);
    const auto img = test::random_image(w, h, rng.uniform_int(1, 3), rng);
    SlicConfig cfg;
    cfg.k = rng.uniform_int(1, 40);
    cfg.m = rng.uniform(0.5, 20);
    cfg.iterations = rng.uniform_int(1, 6);
    const Labeling a = segment_slic(img, cfg);
    check_labeling_invariants(a);
    const Labeling b = segment_slic(img, cfg);
    CHECK(a.labels == b.labels);
    for (const Center& c : a.centers) {
      CHECK(c.x >= 0);
      CHECK(c.x <= w - 1);
      CHECK(c.y >= 0);
      CHECK(c.y <= h - 1);
    }
  }
}

TEST_CASE("objective is non-increasing when windows do not truncate") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = test::random_image(24, 24, 3, rng);
    const double S = grid_interval(img.pixel_count(), 9), m = 10.0;
    auto centers = perturb_to_min_gradient(init_centers_grid(img, 9), img);
    double previous = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 8; ++it) {
      const auto labels = assign_pixels(img, centers, S, m);
      REQUIRE(labels == brute_force_assign(img, centers, S, m));
      centers = update_centers(img, labels, centers);
      const double obj = slic_objective(img, labels, centers, S, m);
      CHECK(obj <= previous + 1e-9);
      previous = obj;
    }
  }
}

TEST_CASE("piecewise-constant regions give homogeneous superpixels") {
  const auto img = test::make_image(64, 64, 2, [](int c, int x, int y) {
    const int block = (x / 32) + 2 * (y / 32);
    return c == 0 ? block / 3.0 : (block % 2);
  });
  SlicConfig cfg;
  cfg.k = 64;
  cfg.m = 0.5;
  const Labeling l = segment_slic(img, cfg);
  check_labeling_invariants(l);
  std::map<int, std::set<std::pair<float, float>>> values;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) values[l.labels[y * 64 + x]].insert({img.at(0, x, y), img.at(1, x, y)});
  for (const auto& [id, v] : values) CHECK(v.size() == 1);
}

TEST_CASE("label map write/read round trip") {
  TempDir dir("labels");
  Rng rng(8);
  SlicConfig cfg;
  cfg.k = 20;
  const Labeling l = segment_slic(test::random_image(30, 20, 2, rng), cfg);
  write_labeling(l, dir / "l.png", dir / "l.json");
  const Labeling back = read_labeling(dir / "l.png", dir / "l.json");
  CHECK(back.labels == l.labels);
  CHECK(back.count == l.count);
  REQUIRE(back.centers.size() == l.centers.size());
  CHECK(back.centers[3].x == l.centers[3].x);
  CHECK(back.centers[3].intensity == l.centers[3].intensity);
}
