#include "xseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "xseg/error.hpp"
#include "xseg/parallel.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

struct Rect {
  double x0, y0, x1, y1;  // half-open pixel-center bounds

  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

bool inside_rounded(const Rect& r, double radius, double x, double y) {
  if (!r.contains(x, y)) return false;
  const double cx = std::clamp(x, r.x0 + radius, r.x1 - radius);
  const double cy = std::clamp(y, r.y0 + radius, r.y1 - radius);
  return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
}

struct Disc {
  double x, y, r;
};

int bits_for(ChannelRole role, int quantize_bits) {
  return std::min(quantize_bits, default_bit_depth(role));
}

float finish(double v, ChannelRole role, int quantize_bits) {
  const float f = static_cast<float>(std::clamp(v, 0.0, 1.0));
  return quantize_bits > 0 ? quantize_sample(f, bits_for(role, quantize_bits)) : f;
}

}  // namespace

void PhantomSpec::validate() const {
  if (width < 16 || height < 16) fail(ErrorCode::invalid_argument, "phantom must be at least 16x16");
  if (!(object_min_fraction > 0.0 && object_min_fraction <= object_max_fraction &&
        object_max_fraction <= 1.0))
    fail(ErrorCode::invalid_argument, "object fractions must satisfy 0 < min <= max <= 1");
  if (corner_radius < 0.0) fail(ErrorCode::invalid_argument, "corner_radius must be >= 0");
  if (blocks_min < 1 || blocks_max < blocks_min)
    fail(ErrorCode::invalid_argument, "block counts must satisfy 1 <= min <= max");
  if (components.empty()) fail(ErrorCode::invalid_argument, "at least one component material is required");
  if (anomaly_min < 0 || anomaly_max < anomaly_min)
    fail(ErrorCode::invalid_argument, "anomaly counts must satisfy 0 <= min <= max");
  if (!(radius_min > 0.0 && radius_max >= radius_min))
    fail(ErrorCode::invalid_argument, "blob radii must satisfy 0 < min <= max");
  if (!(noise_sigma >= 0.0)) fail(ErrorCode::invalid_argument, "noise_sigma must be >= 0");
  if (quantize_bits < 0 || quantize_bits > 16)
    fail(ErrorCode::invalid_argument, "quantize_bits must lie in [0, 16]");
  const double smallest = object_min_fraction * std::min(width, height);
  if (anomaly_max > 0 && 2.0 * radius_max > smallest - 2.0)
    fail(ErrorCode::invalid_argument, "anomaly blob larger than the object");
  auto check = [](const Material& m) {
    if (!(m.high >= 0.0 && m.high <= 1.0 && m.low >= 0.0 && m.low <= 1.0))
      fail(ErrorCode::invalid_argument, "material attenuation must lie in [0, 1]");
  };
  check(background);
  check(casing);
  for (const Material& m : components) check(m);
}

float effective_z(float high, float low) {
  return static_cast<float>(std::clamp(0.5 + (static_cast<double>(low) - high), 0.0, 1.0));
}

PseudoColour pseudo_colour(float high, float low) {
  // Luminance follows the high-energy plane; the hue moves from orange
  // (low - high << 0) through green to blue (low - high >> 0).
  const double lum = high;
  const double t = std::clamp(0.5 + 2.5 * (static_cast<double>(low) - high), 0.0, 1.0);
  const double r = lum * (1.0 - 0.6 * t);
  const double g = lum * (0.7 + 0.3 * (1.0 - std::abs(2.0 * t - 1.0)));
  const double b = lum * (0.4 + 0.6 * t);
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int w = spec.width, h = spec.height;

  const double ow = std::round(rng.uniform(spec.object_min_fraction, spec.object_max_fraction) * w);
  const double oh = std::round(rng.uniform(spec.object_min_fraction, spec.object_max_fraction) * h);
  const double ox = std::floor(rng.uniform(0.0, w - ow + 1.0));
  const double oy = std::floor(rng.uniform(0.0, h - oh + 1.0));
  const Rect object{ox, oy, ox + ow, oy + oh};
  const double corner = std::min(spec.corner_radius, 0.5 * std::min(ow, oh));

  // Sub-component blocks on a regular grid inside the casing wall.
  const int bx = rng.uniform_int(spec.blocks_min, spec.blocks_max);
  const int by = rng.uniform_int(spec.blocks_min, spec.blocks_max);
  const double wall = std::max(2.0, std::round(0.04 * std::min(ow, oh)));
  const double gap = std::max(2.0, std::round(0.03 * std::min(ow, oh)));
  const double cell_w = (ow - 2 * wall - (bx - 1) * gap) / bx;
  const double cell_h = (oh - 2 * wall - (by - 1) * gap) / by;
  std::vector<Rect> blocks;
  std::vector<Material> block_material;
  for (int j = 0; j < by; ++j) {
    for (int i = 0; i < bx; ++i) {
      const double x0 = std::round(ox + wall + i * (cell_w + gap));
      const double y0 = std::round(oy + wall + j * (cell_h + gap));
      blocks.push_back({x0, y0, std::round(x0 + cell_w), std::round(y0 + cell_h)});
      block_material.push_back(spec.components[rng.below(spec.components.size())]);
    }
  }

  std::vector<Disc> discs;
  const int count = rng.uniform_int(spec.anomaly_min, spec.anomaly_max);
  for (int a = 0; a < count; ++a) {
    const double r = rng.uniform(spec.radius_min, spec.radius_max);
    const double margin = std::max(r, corner) + 1.0;
    const double cx = rng.uniform(object.x0 + margin, object.x1 - margin);
    const double cy = rng.uniform(object.y0 + margin, object.y1 - margin);
    discs.push_back({cx, cy, r});
  }

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<std::uint8_t> obj_bits(n, 0), anomaly_bits(n, 0);
  std::vector<float> high(n), low(n), z(n), pr(n), pg(n), pb(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      Material mat = spec.background;
      if (inside_rounded(object, corner, x, y)) {
        obj_bits[p] = 1;
        mat = spec.casing;
        for (std::size_t b = 0; b < blocks.size(); ++b)
          if (blocks[b].contains(x, y)) mat = block_material[b];
        for (const Disc& d : discs) {
          if ((x - d.x) * (x - d.x) + (y - d.y) * (y - d.y) <= d.r * d.r) anomaly_bits[p] = 1;
        }
      }
      double hv = mat.high, lv = mat.low;
      if (anomaly_bits[p]) {
        hv += spec.contrast_high;
        lv += spec.contrast_low;
      }
      if (spec.noise_sigma > 0.0) {
        hv += spec.noise_sigma * rng.normal();
        lv += spec.noise_sigma * rng.normal();
      }
      high[p] = finish(hv, ChannelRole::high, spec.quantize_bits);
      low[p] = finish(lv, ChannelRole::low, spec.quantize_bits);
      z[p] = finish(effective_z(high[p], low[p]), ChannelRole::effective_z, spec.quantize_bits);
      const PseudoColour c = pseudo_colour(high[p], low[p]);
      pr[p] = finish(c.r, ChannelRole::pseudo_r, spec.quantize_bits);
      pg[p] = finish(c.g, ChannelRole::pseudo_g, spec.quantize_bits);
      pb[p] = finish(c.b, ChannelRole::pseudo_b, spec.quantize_bits);
    }
  }

  std::vector<Plane> planes;
  planes.push_back({ChannelRole::high, std::move(high)});
  planes.push_back({ChannelRole::low, std::move(low)});
  planes.push_back({ChannelRole::effective_z, std::move(z)});
  planes.push_back({ChannelRole::pseudo_r, std::move(pr)});
  planes.push_back({ChannelRole::pseudo_g, std::move(pg)});
  planes.push_back({ChannelRole::pseudo_b, std::move(pb)});
  return Phantom{MultiChannelImage(w, h, std::move(planes)), ObjectMask(w, h, std::move(obj_bits)),
                 ObjectMask(w, h, std::move(anomaly_bits))};
}

std::vector<DatasetEntry> generate_dataset(int n, const PhantomSpec& spec, double anomaly_fraction,
                                           std::uint64_t seed, const std::filesystem::path& out_dir,
                                           int jobs) {
  if (n < 2) fail(ErrorCode::invalid_argument, "dataset size n must be >= 2");
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0))
    fail(ErrorCode::invalid_argument, "anomaly_fraction must lie in [0, 1]");
  spec.validate();
  const int anomalous = static_cast<int>(std::floor(n * anomaly_fraction + 0.5));
  if (anomalous > 0 && spec.anomaly_max < 1)
    fail(ErrorCode::invalid_argument, "anomalous samples requested but anomaly_max is 0");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream_seed(seed, Stream::anomaly_assignment));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<DatasetEntry> entries(n);
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d", i);
    entries[i].path = name;
  }
  for (int i = 0; i < anomalous; ++i) entries[order[i]].anomalous = true;

  const std::optional<int> depth =
      spec.quantize_bits > 0 && spec.quantize_bits < 16 ? std::optional<int>(spec.quantize_bits) : std::nullopt;
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    PhantomSpec s = spec;
    if (entries[i].anomalous) {
      s.anomaly_min = std::max(1, s.anomaly_min);
    } else {
      s.anomaly_min = s.anomaly_max = 0;
    }
    const Phantom ph = generate_phantom(s, derive_seed(seed, i));
    write_manifest(out_dir / entries[i].path, ph.image, &ph.object_mask, &ph.anomaly_mask, depth);
  });

  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const DatasetEntry& e : entries) index.push_back({{"path", e.path}, {"anomalous", e.anomalous}});
  std::ofstream out(out_dir / "index.json", std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + (out_dir / "index.json").string());
  out << index.dump(2) << '\n';
  if (!out) fail(ErrorCode::io, "failed writing index.json");
  return entries;
}

std::vector<DatasetEntry> read_index(const std::filesystem::path& index_path) {
  std::ifstream in(index_path);
  if (!in) fail(ErrorCode::io, "cannot open dataset index " + index_path.string());
  std::vector<DatasetEntry> entries;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_array()) fail(ErrorCode::data, "dataset index must be a JSON array");
    for (const auto& e : j) entries.push_back({e.at("path").get<std::string>(), e.at("anomalous").get<bool>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, std::string("malformed dataset index: ") + e.what());
  }
  return entries;
}

}  // namespace xseg
