#include "xseg/slic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "xseg/error.hpp"
#include "xseg/png_io.hpp"

namespace xseg {

namespace {

int clamp_index(long v, int size) { return static_cast<int>(std::clamp<long>(v, 0, size - 1)); }

double sample_clamped(const MultiChannelImage& image, std::size_t plane, int x, int y) {
  x = std::clamp(x, 0, image.width() - 1);
  y = std::clamp(y, 0, image.height() - 1);
  return image.at(plane, x, y);
}

std::vector<double> intensity_at(const MultiChannelImage& image, int x, int y) {
  std::vector<double> v(image.plane_count());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = image.at(c, x, y);
  return v;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

void SlicConfig::validate(std::size_t pixel_count) const {
  if (k < 1) fail(ErrorCode::invalid_argument, "K must be >= 1");
  if (static_cast<std::size_t>(k) > pixel_count)
    fail(ErrorCode::invalid_argument, "K must not exceed the pixel count");
  if (!(m > 0.0)) fail(ErrorCode::invalid_argument, "compactness m must be > 0");
  if (iterations < 1) fail(ErrorCode::invalid_argument, "iterations must be >= 1");
  if (!(min_region_fraction > 0.0 && min_region_fraction <= 1.0))
    fail(ErrorCode::invalid_argument, "min_region_fraction must lie in (0, 1]");
}

int Grid::cell_of(int x, int y) const {
  const int cx = clamp_index(static_cast<long>(std::floor(x / interval)), cols);
  const int cy = clamp_index(static_cast<long>(std::floor(y / interval)), rows);
  return cy * cols + cx;
}

double grid_interval(std::size_t pixel_count, int k) {
  if (k < 1) fail(ErrorCode::invalid_argument, "K must be >= 1");
  if (pixel_count < static_cast<std::size_t>(k))
    fail(ErrorCode::invalid_argument, "pixel count must be >= K");
  return std::sqrt(static_cast<double>(pixel_count) / static_cast<double>(k));
}

Grid make_grid(int width, int height, int k) {
  Grid g;
  g.interval = grid_interval(static_cast<std::size_t>(width) * height, k);
  g.cols = std::max(1L, std::lround(width / g.interval));
  g.rows = std::max(1L, std::lround(height / g.interval));
  return g;
}

std::vector<Center> init_centers_grid(const MultiChannelImage& image, int k) {
  const Grid g = make_grid(image.width(), image.height(), k);
  std::vector<Center> centers;
  centers.reserve(g.size());
  for (int iy = 0; iy < g.rows; ++iy) {
    for (int ix = 0; ix < g.cols; ++ix) {
      Center c;
      c.x = std::clamp((ix + 0.5) * g.interval, 0.0, static_cast<double>(image.width() - 1));
      c.y = std::clamp((iy + 0.5) * g.interval, 0.0, static_cast<double>(image.height() - 1));
      c.intensity = intensity_at(image, clamp_index(std::lround(c.x), image.width()),
                                 clamp_index(std::lround(c.y), image.height()));
      centers.push_back(std::move(c));
    }
  }
  return centers;
}

double gradient_magnitude(const MultiChannelImage& image, int x, int y) {
  double g = 0.0;
  for (std::size_t c = 0; c < image.plane_count(); ++c) {
    const double dx = sample_clamped(image, c, x + 1, y) - sample_clamped(image, c, x - 1, y);
    const double dy = sample_clamped(image, c, x, y + 1) - sample_clamped(image, c, x, y - 1);
    g += dx * dx + dy * dy;
  }
  return g;
}

std::vector<Center> perturb_to_min_gradient(std::span<const Center> centers,
                                            const MultiChannelImage& image) {
  std::vector<Center> out(centers.begin(), centers.end());
  for (Center& c : out) {
    const int px = clamp_index(std::lround(c.x), image.width());
    const int py = clamp_index(std::lround(c.y), image.height());
    double best = gradient_magnitude(image, px, py);
    int bx = -1, by = -1;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = px + dx, y = py + dy;
        if ((dx == 0 && dy == 0) || x < 0 || y < 0 || x >= image.width() || y >= image.height())
          continue;
        const double g = gradient_magnitude(image, x, y);
        if (g < best) {
          best = g;
          bx = x;
          by = y;
        }
      }
    }
    if (bx >= 0) {
      c.x = bx;
      c.y = by;
      c.intensity = intensity_at(image, bx, by);
    }
  }
  return out;
}

double slic_distance(double px, double py, std::span<const double> pixel_intensity,
                     const Center& center, double interval, double m) {
  if (pixel_intensity.size() != center.intensity.size())
    fail(ErrorCode::data, "intensity vectors differ in length");
  double dc2 = 0.0;
  for (std::size_t c = 0; c < pixel_intensity.size(); ++c) {
    const double d = pixel_intensity[c] - center.intensity[c];
    dc2 += d * d;
  }
  const double dx = px - center.x, dy = py - center.y;
  const double ds2 = dx * dx + dy * dy;
  return std::sqrt(dc2 + ds2 / (interval * interval) * m * m);
}

std::vector<std::int32_t> assign_pixels(const MultiChannelImage& image,
                                        std::span<const Center> centers, double interval,
                                        double m) {
  if (centers.empty()) fail(ErrorCode::invalid_argument, "assign_pixels needs at least one center");
  const int w = image.width(), h = image.height();
  const std::size_t channels = image.plane_count();
  const double spatial = m * m / (interval * interval);
  std::vector<const float*> planes(channels);
  for (std::size_t c = 0; c < channels; ++c) planes[c] = image.samples(c).data();

  std::vector<std::int32_t> labels(image.pixel_count(), -1);
  std::vector<double> best(image.pixel_count(), std::numeric_limits<double>::infinity());

  auto distance2 = [&](const Center& ctr, int x, int y, std::size_t idx) {
    double dc2 = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = planes[c][idx] - ctr.intensity[c];
      dc2 += d * d;
    }
    const double dx = x - ctr.x, dy = y - ctr.y;
    return dc2 + (dx * dx + dy * dy) * spatial;
  };

  for (std::size_t k = 0; k < centers.size(); ++k) {
    const Center& ctr = centers[k];
    const int x0 = std::max(0, static_cast<int>(std::ceil(ctr.x - interval)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(ctr.x + interval)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(ctr.y - interval)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(ctr.y + interval)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * w + x;
        const double d = distance2(ctr, x, y, idx);
        if (d < best[idx]) {
          best[idx] = d;
          labels[idx] = static_cast<std::int32_t>(k);
        }
      }
    }
  }

  // Pixels no window reached fall back to the global nearest center.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (labels[idx] >= 0) continue;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = distance2(centers[k], x, y, idx);
        if (d < best[idx]) {
          best[idx] = d;
          labels[idx] = static_cast<std::int32_t>(k);
        }
      }
    }
  }
  return labels;
}

std::vector<Center> update_centers(const MultiChannelImage& image,
                                   std::span<const std::int32_t> labels,
                                   std::span<const Center> previous) {
  const std::size_t k = previous.size();
  const std::size_t channels = image.plane_count();
  std::vector<double> sx(k, 0.0), sy(k, 0.0), si(k * channels, 0.0);
  std::vector<std::size_t> count(k, 0);
  const int w = image.width();
  for (std::size_t idx = 0; idx < labels.size(); ++idx) {
    const auto l = static_cast<std::size_t>(labels[idx]);
    if (l >= k) fail(ErrorCode::data, "label out of range in update_centers");
    sx[l] += static_cast<double>(idx % w);
    sy[l] += static_cast<double>(idx / w);
    for (std::size_t c = 0; c < channels; ++c) si[l * channels + c] += image.samples(c)[idx];
    ++count[l];
  }
  std::vector<Center> out(previous.begin(), previous.end());
  for (std::size_t l = 0; l < k; ++l) {
    if (count[l] == 0) continue;
    const double n = static_cast<double>(count[l]);
    out[l].x = sx[l] / n;
    out[l].y = sy[l] / n;
    out[l].intensity.assign(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) out[l].intensity[c] = si[l * channels + c] / n;
  }
  return out;
}

std::vector<Center> compute_centers(const MultiChannelImage& image,
                                    std::span<const std::int32_t> labels, int count) {
  std::vector<Center> blank(static_cast<std::size_t>(count));
  for (Center& c : blank) c.intensity.assign(image.plane_count(), 0.0);
  return update_centers(image, labels, blank);
}

double slic_objective(const MultiChannelImage& image, std::span<const std::int32_t> labels,
                      std::span<const Center> centers, double interval, double m) {
  double total = 0.0;
  std::vector<double> px(image.plane_count());
  const int w = image.width();
  for (std::size_t idx = 0; idx < labels.size(); ++idx) {
    for (std::size_t c = 0; c < px.size(); ++c) px[c] = image.samples(c)[idx];
    const double d = slic_distance(static_cast<double>(idx % w), static_cast<double>(idx / w), px,
                                   centers[labels[idx]], interval, m);
    total += d * d;
  }
  return total;
}

Labeling enforce_connectivity(const MultiChannelImage& image,
                              std::span<const std::int32_t> labels, double interval,
                              double min_region_fraction) {
  const int w = image.width(), h = image.height();
  const std::size_t n = image.pixel_count();
  if (labels.size() != n) fail(ErrorCode::data, "label map size does not match the image");

  // 4-connected components, discovered in raster order of their first pixel.
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> comp_size;
  std::vector<std::size_t> queue;
  queue.reserve(n);
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const int id = static_cast<int>(comp_size.size());
    const std::int32_t label = labels[start];
    queue.clear();
    queue.push_back(start);
    comp[start] = id;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t p = queue[head];
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const std::size_t nb[4] = {x > 0 ? p - 1 : n, x + 1 < w ? p + 1 : n, y > 0 ? p - w : n,
                                 y + 1 < h ? p + w : n};
      for (std::size_t q : nb) {
        if (q < n && comp[q] < 0 && labels[q] == label) {
          comp[q] = id;
          queue.push_back(q);
        }
      }
    }
    comp_size.push_back(queue.size());
  }

  const int comps = static_cast<int>(comp_size.size());
  std::vector<std::vector<int>> adjacent(comps);
  for (std::size_t p = 0; p < n; ++p) {
    const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
    if (x + 1 < w && comp[p + 1] != comp[p]) {
      adjacent[comp[p]].push_back(comp[p + 1]);
      adjacent[comp[p + 1]].push_back(comp[p]);
    }
    if (y + 1 < h && comp[p + w] != comp[p]) {
      adjacent[comp[p]].push_back(comp[p + w]);
      adjacent[comp[p + w]].push_back(comp[p]);
    }
  }
  for (auto& a : adjacent) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }

  const double threshold = min_region_fraction * interval * interval;
  std::vector<int> parent(comps);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> set_size = comp_size;
  std::vector<std::vector<int>> members(comps);
  for (int c = 0; c < comps; ++c) members[c] = {c};

  for (int c = 0; c < comps; ++c) {
    const int root = find_root(parent, c);
    if (static_cast<double>(set_size[root]) >= threshold) continue;
    int target = -1;
    for (int member : members[root]) {
      for (int other : adjacent[member]) {
        const int r = find_root(parent, other);
        if (r == root) continue;
        if (target < 0 || set_size[r] > set_size[target] ||
            (set_size[r] == set_size[target] && r < target))
          target = r;
      }
    }
    if (target < 0) continue;
    parent[root] = target;
    set_size[target] += set_size[root];
    members[target].insert(members[target].end(), members[root].begin(), members[root].end());
    members[root].clear();
  }

  Labeling out;
  out.width = w;
  out.height = h;
  out.labels.assign(n, -1);
  std::vector<int> final_id(comps, -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const int r = find_root(parent, comp[p]);
    if (final_id[r] < 0) final_id[r] = next++;
    out.labels[p] = final_id[r];
  }
  out.count = next;
  out.centers = compute_centers(image, out.labels, out.count);
  return out;
}

Labeling segment_slic(const MultiChannelImage& image, const SlicConfig& config) {
  config.validate(image.pixel_count());
  const Grid grid = make_grid(image.width(), image.height(), config.k);
  std::vector<Center> centers = perturb_to_min_gradient(init_centers_grid(image, config.k), image);
  std::vector<std::int32_t> labels;
  for (int it = 0; it < config.iterations; ++it) {
    labels = assign_pixels(image, centers, grid.interval, config.m);
    centers = update_centers(image, labels, centers);
  }
  return enforce_connectivity(image, labels, grid.interval, config.min_region_fraction);
}

void write_labeling(const Labeling& labeling, const std::filesystem::path& png_path,
                    const std::filesystem::path& sidecar_path) {
  if (labeling.count > 65536)
    fail(ErrorCode::data, "label maps hold at most 65536 superpixels");
  png::GrayImage gray{labeling.width, labeling.height, 16, {}};
  gray.samples.resize(labeling.labels.size());
  for (std::size_t i = 0; i < labeling.labels.size(); ++i)
    gray.samples[i] = static_cast<std::uint16_t>(labeling.labels[i]);
  png::write_gray(png_path, gray);

  nlohmann::json j;
  j["width"] = labeling.width;
  j["height"] = labeling.height;
  j["count"] = labeling.count;
  j["centers"] = nlohmann::json::array();
  for (const Center& c : labeling.centers)
    j["centers"].push_back({{"x", c.x}, {"y", c.y}, {"intensity", c.intensity}});
  std::ofstream out(sidecar_path);
  if (!out) fail(ErrorCode::io, "cannot write '" + sidecar_path.string() + "'");
  out << j.dump(2) << '\n';
}

Labeling read_labeling(const std::filesystem::path& png_path,
                       const std::filesystem::path& sidecar_path) {
  const png::GrayImage gray = png::read_gray(png_path);
  std::ifstream in(sidecar_path);
  if (!in) fail(ErrorCode::io, "cannot read '" + sidecar_path.string() + "'");
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::data, "malformed label sidecar");
  Labeling l;
  l.width = gray.width;
  l.height = gray.height;
  l.labels.assign(gray.samples.begin(), gray.samples.end());
  l.count = j.at("count").get<int>();
  for (const auto& c : j.at("centers"))
    l.centers.push_back({c.at("x").get<double>(), c.at("y").get<double>(),
                         c.at("intensity").get<std::vector<double>>()});
  return l;
}

}  // namespace xseg
