#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xseg/image.hpp"

namespace xseg {

struct SlicConfig {
  int k = 256;                       // requested superpixel count
  double m = 10.0;                   // compactness weight
  int iterations = 10;
  double min_region_fraction = 0.25; // of S^2

  void validate(std::size_t pixel_count) const;
};

struct Center {
  double x = 0.0;
  double y = 0.0;
  std::vector<double> intensity;
};

/// Hard segmentation result. Ids are dense in [0, count).
struct Labeling {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
  int count = 0;
  std::vector<Center> centers;
};

/// Regular seeding grid derived from (width, height, K).
struct Grid {
  double interval = 1.0;  // S
  int cols = 1;
  int rows = 1;

  int size() const { return cols * rows; }
  int cell_of(int x, int y) const;
};

double grid_interval(std::size_t pixel_count, int k);
Grid make_grid(int width, int height, int k);

std::vector<Center> init_centers_grid(const MultiChannelImage& image, int k);
std::vector<Center> perturb_to_min_gradient(std::span<const Center> centers,
                                            const MultiChannelImage& image);

/// Gradient magnitude used for seed perturbation (coordinates clamped at the border).
double gradient_magnitude(const MultiChannelImage& image, int x, int y);

/// D = sqrt(dc^2 + (ds/S)^2 m^2).
double slic_distance(double px, double py, std::span<const double> pixel_intensity,
                     const Center& center, double interval, double m);

/// Windowed nearest-center assignment: each pixel considers centers within
/// +-S on both axes, falling back to a global search when none is in range.
std::vector<std::int32_t> assign_pixels(const MultiChannelImage& image,
                                        std::span<const Center> centers, double interval,
                                        double m);

std::vector<Center> update_centers(const MultiChannelImage& image,
                                   std::span<const std::int32_t> labels,
                                   std::span<const Center> previous);

/// Sum over pixels of D^2 to the assigned center.
double slic_objective(const MultiChannelImage& image, std::span<const std::int32_t> labels,
                      std::span<const Center> centers, double interval, double m);

/// Absorbs 4-connected fragments smaller than fraction*S^2 into their
/// largest neighbour, compacts ids in raster order and recomputes centers.
Labeling enforce_connectivity(const MultiChannelImage& image,
                              std::span<const std::int32_t> labels, double interval,
                              double min_region_fraction);

Labeling segment_slic(const MultiChannelImage& image, const SlicConfig& config);

/// Mean position and intensity per label.
std::vector<Center> compute_centers(const MultiChannelImage& image,
                                    std::span<const std::int32_t> labels, int count);

/// 16-bit grayscale PNG (id = sample) plus a JSON sidecar with the centers.
void write_labeling(const Labeling& labeling, const std::filesystem::path& png_path,
                    const std::filesystem::path& sidecar_path);
Labeling read_labeling(const std::filesystem::path& png_path,
                       const std::filesystem::path& sidecar_path);

}  // namespace xseg
