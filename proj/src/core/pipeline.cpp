#include "xseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xseg/error.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

template <typename F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_with_stage(stage, e);
  }
}

struct Segmented {
  Labeling labeling;
  std::optional<FeatureMap> learned;
};

Segmented segment(const MultiChannelImage& image, const PipelineConfig& config,
                  const ConvFeatureNet* net) {
  Segmented out;
  if (config.backend == SegmentationBackend::hard_slic) {
    out.labeling = segment_slic(image, config.slic);
    return out;
  }
  config.soft.validate();
  if (static_cast<std::size_t>(config.soft.k) > image.pixel_count())
    fail(ErrorCode::invalid_argument, "K exceeds the pixel count");
  const double interval = make_grid(image.width(), image.height(), config.soft.k).interval;
  SoftSlicResult soft;
  if (net && config.features == FeatureSource::learned) {
    out.learned = forward(*net, image, false, config.soft.m, interval);
    soft = soft_slic_iterate(*out.learned, config.soft);
  } else {
    const std::vector<double> f = features_raw_double(image, config.soft.m, interval);
    soft = soft_slic_iterate(FeatureView{f, 2 + image.plane_count()}, image.width(), image.height(),
                             config.soft);
  }
  out.labeling = harden(soft.q, image, config.soft.min_region_fraction);
  return out;
}

}  // namespace

std::string_view to_string(SegmentationBackend backend) {
  return backend == SegmentationBackend::hard_slic ? "hard_slic" : "soft_slic";
}

SegmentationBackend parse_backend(std::string_view text) {
  if (text == "hard_slic") return SegmentationBackend::hard_slic;
  if (text == "soft_slic") return SegmentationBackend::soft_slic;
  fail(ErrorCode::invalid_argument, "unknown backend '" + std::string(text) + "'");
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.slic.k = 256;
  c.slic.m = 0.5;
  c.slic.iterations = 10;
  c.soft.k = 256;
  c.soft.m = 0.5;
  c.soft.beta = 400.0;
  c.soft.iterations = 10;
  return c;
}

Labeling segment_image(const MultiChannelImage& image, const PipelineConfig& config,
                       const ConvFeatureNet* net) {
  return segment(image, config, net).labeling;
}

PreparedSample prepare_sample(const Sample& sample, const PipelineConfig& config,
                              const ConvFeatureNet* net) {
  if (!(config.tau >= 0.0 && config.tau <= 1.0))
    fail(ErrorCode::invalid_argument, "tau must lie in [0, 1]");
  MultiChannelImage selected =
      staged("channel selection", [&] { return select_channels(sample.image, config.mode); });
  Offset offset;
  std::optional<ObjectMask> anomaly = sample.anomaly_mask;
  if (config.crop_to_object && sample.object_mask) {
    auto cropped = staged("object crop", [&] { return apply_object_mask(selected, *sample.object_mask); });
    selected = std::move(cropped.first);
    offset = cropped.second;
    if (anomaly) anomaly = crop_mask(*anomaly, offset, selected.width(), selected.height());
  }

  // Small crops cannot host the requested K superpixels; cap K at the pixel count.
  PipelineConfig effective = config;
  const int cap = static_cast<int>(std::min<std::size_t>(selected.pixel_count(), 1u << 30));
  effective.slic.k = std::min(effective.slic.k, cap);
  effective.soft.k = std::min(effective.soft.k, cap);
  const Segmented seg = staged("segmentation", [&] { return segment(selected, effective, net); });

  PreparedSample out{std::move(selected), offset, seg.labeling, 1.0, {}, std::nullopt};
  const int k = config.backend == SegmentationBackend::hard_slic ? effective.slic.k : effective.soft.k;
  out.interval = config.backend == SegmentationBackend::hard_slic
                     ? grid_interval(out.image.pixel_count(), k)
                     : make_grid(out.image.width(), out.image.height(), k).interval;
  out.features = staged("pooling", [&] {
    return pool_superpixel_features(out.image, out.labeling, out.interval,
                                    seg.learned ? &*seg.learned : nullptr);
  });
  if (anomaly)
    out.truth = staged("ground truth", [&] {
      return label_superpixels_from_mask(out.labeling, *anomaly, config.tau);
    });
  return out;
}

PipelineResult run_pipeline(const Sample& sample, const PipelineConfig& config,
                            const BinaryClassifier& model, const ConvFeatureNet* net) {
  PipelineResult r{prepare_sample(sample, config, net), {}, std::nullopt, std::nullopt};
  r.labels = staged("classification", [&] { return classify_superpixels(model, r.prepared.features); });
  if (r.prepared.truth) {
    r.counts = confusion(*r.prepared.truth, r.labels);
    if (r.counts->total() > 0) r.report = compute_metrics(*r.counts);
  }
  return r;
}

ConfusionCounts confusion(std::span<const SuperpixelClass> truth,
                          std::span<const SuperpixelLabel> predicted) {
  if (truth.size() != predicted.size())
    fail(ErrorCode::data, "truth and prediction counts differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool actual = truth[i] == SuperpixelClass::anomaly;
    const bool said = predicted[i].value == SuperpixelClass::anomaly;
    if (actual && said) ++c.tp;
    else if (actual) ++c.fn;
    else if (said) ++c.fp;
    else ++c.tn;
  }
  return c;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n,
                                                                            double ratio,
                                                                            std::uint64_t seed) {
  if (n < 2) fail(ErrorCode::invalid_argument, "split needs at least 2 items");
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::invalid_argument, "split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream_seed(seed, Stream::split));
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t cut = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  cut = std::clamp<std::size_t>(cut, 1, n - 1);
  std::vector<std::size_t> train(order.begin(), order.begin() + cut);
  std::vector<std::size_t> test(order.begin() + cut, order.end());
  return {std::move(train), std::move(test)};
}

bool is_boundary(const Labeling& labeling, int x, int y) {
  const int w = labeling.width, h = labeling.height;
  if (x == 0 || y == 0 || x == w - 1 || y == h - 1) return true;
  const std::int32_t l = labeling.labels[static_cast<std::size_t>(y) * w + x];
  return labeling.labels[static_cast<std::size_t>(y) * w + x - 1] != l ||
         labeling.labels[static_cast<std::size_t>(y) * w + x + 1] != l ||
         labeling.labels[static_cast<std::size_t>(y - 1) * w + x] != l ||
         labeling.labels[static_cast<std::size_t>(y + 1) * w + x] != l;
}

png::RgbImage render_overlay(const MultiChannelImage& image, const Labeling& labeling,
                             std::span<const SuperpixelLabel> labels) {
  const int w = image.width(), h = image.height();
  if (labeling.width != w || labeling.height != h)
    fail(ErrorCode::data, "labeling/image dimension mismatch");
  if (labels.size() != static_cast<std::size_t>(labeling.count))
    fail(ErrorCode::data, "one label per superpixel is required");
  png::RgbImage out{w, h, std::vector<std::uint8_t>(image.pixel_count() * 3)};
  const auto base = image.samples(0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      std::uint8_t* px = out.samples.data() + 3 * p;
      if (is_boundary(labeling, x, y)) {
        const bool anomaly = labels[labeling.labels[p]].value == SuperpixelClass::anomaly;
        px[0] = anomaly ? 255 : 0;
        px[1] = anomaly ? 0 : 255;
        px[2] = 0;
      } else {
        const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(base[p], 0.0f, 1.0f) * 255.0f));
        px[0] = px[1] = px[2] = g;
      }
    }
  }
  return out;
}

}  // namespace xseg
