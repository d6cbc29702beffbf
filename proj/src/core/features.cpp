#include "xseg/features.hpp"

#include "xseg/error.hpp"

namespace xseg {

std::vector<double> features_raw_double(const MultiChannelImage& image, double m, double interval) {
  if (!(interval > 0.0)) fail(ErrorCode::invalid_argument, "S must be > 0");
  if (!(m >= 0.0)) fail(ErrorCode::invalid_argument, "m must be >= 0");
  const std::size_t channels = image.plane_count();
  const std::size_t dim = 2 + channels;
  const double scale = m / interval;
  const int w = image.width();
  std::vector<double> out(image.pixel_count() * dim);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    double* row = out.data() + p * dim;
    row[0] = scale * static_cast<double>(p % w);
    row[1] = scale * static_cast<double>(p / w);
    for (std::size_t c = 0; c < channels; ++c) row[2 + c] = image.samples(c)[p];
  }
  return out;
}

FeatureMap features_raw(const MultiChannelImage& image, double m, double interval) {
  const std::vector<double> values = features_raw_double(image, m, interval);
  FeatureMap out;
  out.width = image.width();
  out.height = image.height();
  out.dim = static_cast<int>(2 + image.plane_count());
  out.data.assign(values.begin(), values.end());
  return out;
}

std::vector<double> pixel_positions(int width, int height) {
  std::vector<double> pos(static_cast<std::size_t>(width) * height * 2);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      pos[2 * p] = x;
      pos[2 * p + 1] = y;
    }
  return pos;
}

}  // namespace xseg
