#pragma once

#include <span>
#include <vector>

#include "xseg/image.hpp"

namespace xseg {

/// Per-pixel feature vectors, pixel-major (pixel p occupies data[p*dim .. p*dim+dim)).
struct FeatureMap {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<float> data;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  std::span<const float> at(std::size_t p) const {
    return std::span<const float>(data).subspan(p * dim, dim);
  }
  std::vector<double> to_double() const { return {data.begin(), data.end()}; }
};

/// Read-only view of row-major 64-bit features used by the clustering kernels.
struct FeatureView {
  std::span<const double> data;
  std::size_t dim = 0;

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  const double* row(std::size_t p) const { return data.data() + p * dim; }
};

/// [(m/S)x, (m/S)y, I_1..I_C]: squared Euclidean distance in this space
/// equals dc^2 + (ds/S)^2 m^2.
FeatureMap features_raw(const MultiChannelImage& image, double m, double interval);
std::vector<double> features_raw_double(const MultiChannelImage& image, double m, double interval);

/// Per-pixel (x, y) pixel coordinates, row-major.
std::vector<double> pixel_positions(int width, int height);

}  // namespace xseg
