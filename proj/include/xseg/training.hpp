#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xseg/conv_net.hpp"
#include "xseg/losses.hpp"
#include "xseg/soft_slic.hpp"

namespace xseg {

/// One image with per-pixel target distributions for the reconstruction loss.
struct TrainingInstance {
  MultiChannelImage image;
  std::vector<double> targets;  // N x classes
  int classes = 3;
};

struct FeatureTrainConfig {
  SoftSlicConfig soft;  // k, v, beta, m
  LossConfig loss;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double compactness = 0.0;
  double total = 0.0;
};

/// Training-mode forward through net, soft clustering and both losses.
LossBreakdown evaluate_loss(const ConvFeatureNet& net, const TrainingInstance& instance,
                            const FeatureTrainConfig& config);

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
  NetTape tape;
};

/// Exact reverse-mode gradients of the total loss w.r.t. every net parameter,
/// unrolled through all soft iterations.
BackwardResult backward(const ConvFeatureNet& net, const TrainingInstance& instance,
                        const FeatureTrainConfig& config);

struct GradCheckOptions {
  double eps = 1e-3;
  int samples_per_tensor = 6;
  std::uint64_t seed = 7;
  /// Test hook applied to the analytic gradients before comparison.
  std::function<void(Gradients&)> tamper;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped = 0;  // samples whose difference interval crossed a ReLU/pool kink
  std::string worst;
};

/// Compares analytic gradients with central differences on a sampled subset of
/// parameters; relative error = |a - fd| / max(|a|, |fd|, 1e-8).
GradCheckResult grad_check(const ConvFeatureNet& net, const TrainingInstance& instance,
                           const FeatureTrainConfig& config, const GradCheckOptions& options = {});

struct FeatureTrainProgress {
  int step = 0;
  LossBreakdown loss;
};

/// Mini-batch SGD over instances: gradients averaged over batch_size images,
/// running statistics updated after each forward.
void train_feature_net(ConvFeatureNet& net, const std::vector<TrainingInstance>& instances,
                       const FeatureTrainConfig& config, OptimizerState& optimizer, int steps,
                       std::uint64_t seed,
                       const std::function<void(const FeatureTrainProgress&)>& on_step = {});

}  // namespace xseg
