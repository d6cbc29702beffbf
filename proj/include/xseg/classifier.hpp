#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "xseg/features.hpp"
#include "xseg/image.hpp"
#include "xseg/slic.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

enum class SuperpixelClass : std::uint8_t { benign = 0, anomaly = 1 };

struct SuperpixelLabel {
  SuperpixelClass value = SuperpixelClass::benign;
  double probability = 0.0;  // of anomaly
};

using FeatureRow = std::vector<double>;

/// Per superpixel: [mean, std, min, max] per channel, pixel count / S^2,
/// centroid (x, y) normalized to [0,1], then the mean learned feature when
/// `learned` is given. Rows ordered by superpixel id.
std::vector<FeatureRow> pool_superpixel_features(const MultiChannelImage& image,
                                                 const Labeling& labeling, double interval,
                                                 const FeatureMap* learned = nullptr);

/// Anomaly iff |pixels in mask| / |pixels| >= tau.
std::vector<SuperpixelClass> label_superpixels_from_mask(const Labeling& labeling,
                                                         const ObjectMask& anomaly_mask,
                                                         double tau = 0.5);

enum class ClassifierKind { logistic, mlp };

struct BinaryClassifier {
  ClassifierKind kind = ClassifierKind::logistic;
  int input_dim = 0;
  int hidden = 0;
  std::vector<double> mean;
  std::vector<double> scale;  // per-dimension std (1 where the std is 0)
  std::vector<Tensor> params;

  /// Standardizes x with the stored statistics.
  std::vector<double> standardize(std::span<const double> x) const;
  /// Raw decision value; sigmoid(score) is the anomaly probability.
  double score(std::span<const double> x) const;
};

struct ClassifierTrainConfig {
  ClassifierKind kind = ClassifierKind::logistic;
  int hidden = 32;
  int epochs = 100;
  OptimizerState optimizer;
  bool balance_classes = true;  // inverse-frequency weighting
  std::uint64_t seed = 1;

  void validate() const;
};

struct ClassifierEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

BinaryClassifier train_classifier(std::span<const FeatureRow> features,
                                  std::span<const SuperpixelClass> labels,
                                  const ClassifierTrainConfig& config,
                                  const std::function<void(const ClassifierEpoch&)>& on_epoch = {});

std::vector<SuperpixelLabel> classify_superpixels(const BinaryClassifier& model,
                                                  std::span<const FeatureRow> features);

double sigmoid(double x);

/// Checkpoint (binary tensors) plus a JSON manifest of hyperparameters.
void save_classifier(const BinaryClassifier& model, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& manifest);
BinaryClassifier load_classifier(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& manifest);

/// CSV: superpixel_id,probability,label
void write_predictions_csv(const std::filesystem::path& path,
                           std::span<const SuperpixelLabel> labels);

}  // namespace xseg
