#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "xseg/classifier.hpp"
#include "xseg/conv_net.hpp"
#include "xseg/image.hpp"
#include "xseg/metrics.hpp"
#include "xseg/png_io.hpp"
#include "xseg/slic.hpp"
#include "xseg/soft_slic.hpp"

namespace xseg {

enum class SegmentationBackend { hard_slic, soft_slic };
enum class FeatureSource { raw, learned };

std::string_view to_string(SegmentationBackend backend);
SegmentationBackend parse_backend(std::string_view text);

struct PipelineConfig {
  ChannelMode mode = ChannelMode::hlz;
  SegmentationBackend backend = SegmentationBackend::soft_slic;
  SlicConfig slic;
  SoftSlicConfig soft;
  FeatureSource features = FeatureSource::raw;
  double tau = 0.5;
  bool crop_to_object = true;  // applies when the sample carries an object mask

  /// Defaults tuned for [0,1] intensities at 256x256.
  static PipelineConfig defaults();
};

/// Hard or soft segmentation of an already channel-selected image. The soft
/// backend clusters raw features, or net features when `net` is given.
Labeling segment_image(const MultiChannelImage& image, const PipelineConfig& config,
                       const ConvFeatureNet* net = nullptr);

/// Everything up to (but excluding) classification.
struct PreparedSample {
  MultiChannelImage image;  // selected channels, cropped when configured
  Offset offset;
  Labeling labeling;
  double interval = 1.0;
  std::vector<FeatureRow> features;
  std::optional<std::vector<SuperpixelClass>> truth;  // when an anomaly mask exists
};

PreparedSample prepare_sample(const Sample& sample, const PipelineConfig& config,
                              const ConvFeatureNet* net = nullptr);

struct PipelineResult {
  PreparedSample prepared;
  std::vector<SuperpixelLabel> labels;
  std::optional<ConfusionCounts> counts;
  std::optional<EvalReport> report;
};

PipelineResult run_pipeline(const Sample& sample, const PipelineConfig& config,
                            const BinaryClassifier& model, const ConvFeatureNet* net = nullptr);

ConfusionCounts confusion(std::span<const SuperpixelClass> truth,
                          std::span<const SuperpixelLabel> predicted);

/// Seeded shuffle of [0, n) split at floor(ratio*n).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n,
                                                                            double ratio,
                                                                            std::uint64_t seed);

/// Grayscale of the first plane with superpixel boundaries drawn green
/// (benign) or red (anomaly). Pixels on the image border count as boundary.
png::RgbImage render_overlay(const MultiChannelImage& image, const Labeling& labeling,
                             std::span<const SuperpixelLabel> labels);

bool is_boundary(const Labeling& labeling, int x, int y);

}  // namespace xseg
