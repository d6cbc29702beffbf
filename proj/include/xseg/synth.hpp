#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xseg/image.hpp"

namespace xseg {

/// Transmitted intensity of a material at the two tube energies.
struct Material {
  double high = 0.0;
  double low = 0.0;
};

struct PhantomSpec {
  int width = 256;
  int height = 256;
  // Object: rounded rectangle with a grid of sub-component blocks.
  double object_min_fraction = 0.6;  // object side / image side
  double object_max_fraction = 0.85;
  double corner_radius = 12.0;
  int blocks_min = 2;
  int blocks_max = 4;
  Material background{0.95, 0.95};
  Material casing{0.80, 0.74};
  std::vector<Material> components{{0.70, 0.60}, {0.62, 0.50}, {0.55, 0.40}, {0.50, 0.36}};
  // Anomaly concealments: discs added on top of the components.
  int anomaly_min = 1;
  int anomaly_max = 3;
  double radius_min = 12.0;
  double radius_max = 22.0;
  double contrast_high = -0.15;
  double contrast_low = 0.15;
  double noise_sigma = 0.01;
  int quantize_bits = 16;  // 0 keeps unquantized floats

  void validate() const;
};

struct Phantom {
  MultiChannelImage image;  // high, low, effective_z, pseudo_r, pseudo_g, pseudo_b
  ObjectMask object_mask;
  ObjectMask anomaly_mask;
};

/// z = clamp(0.5 + (low - high), 0, 1).
float effective_z(float high, float low);

/// Fixed lookup: luminance from the high-energy plane, hue band from (low - high).
struct PseudoColour {
  float r, g, b;
};
PseudoColour pseudo_colour(float high, float low);

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

struct DatasetEntry {
  std::string path;  // relative to the index file
  bool anomalous = false;
};

/// Writes n sample directories plus index.json into out_dir. Exactly
/// round(n*anomaly_fraction) samples contain anomalies.
std::vector<DatasetEntry> generate_dataset(int n, const PhantomSpec& spec, double anomaly_fraction,
                                           std::uint64_t seed,
                                           const std::filesystem::path& out_dir, int jobs = 1);

std::vector<DatasetEntry> read_index(const std::filesystem::path& index_path);

}  // namespace xseg
