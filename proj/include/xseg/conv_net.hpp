#pragma once

#include <cstdint>
#include <vector>

#include "xseg/features.hpp"
#include "xseg/image.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

struct NetConfig {
  int in_channels = 3;
  int width = 64;    // output channels of every 3x3 conv block
  int learned = 3;   // channels produced by the 1x1 head
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
};

inline constexpr int kConvBlocks = 5;

/// Five conv3x3 -> batch-norm -> ReLU blocks with 2x2 max pooling after
/// blocks 2 and 4. Outputs of blocks 2, 4 and 5 are bilinearly upsampled to
/// full resolution, concatenated and mixed by a 1x1 head.
class ConvFeatureNet {
 public:
  ConvFeatureNet(const NetConfig& config, std::uint64_t seed);
  /// Rebuilds a net from checkpoint tensors.
  ConvFeatureNet(const NetConfig& config, const std::vector<Tensor>& tensors);

  const NetConfig& config() const { return config_; }

  /// Trainable tensors: conv{i}.weight/bias, bn{i}.scale/shift, head.weight/bias.
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }

  /// Batch-norm running statistics: bn{i}.running_mean / running_var.
  std::vector<Tensor>& buffers() { return buffers_; }
  const std::vector<Tensor>& buffers() const { return buffers_; }

  /// parameters() followed by buffers(), for checkpointing.
  std::vector<Tensor> state() const;

 private:
  NetConfig config_;
  std::vector<Tensor> params_;
  std::vector<Tensor> buffers_;
};

/// Channel-major activation (channels x height x width).
struct Activation {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

struct BlockRecord {
  Activation input;        // block input
  Activation normalized;   // x_hat after batch norm, before scale/shift
  Activation output;       // after ReLU
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<double> batch_var;
};

/// Everything the backward pass needs from one forward evaluation.
struct NetTape {
  bool training = false;
  std::vector<BlockRecord> blocks;      // kConvBlocks entries
  Activation pooled1, pooled2;
  std::vector<std::int32_t> pool1_argmax, pool2_argmax;
  Activation head_input;                // concat(a2, up(a4), up(a5))
};

struct NetOutput {
  Activation learned;  // learned x H x W
  NetTape tape;
};

NetOutput net_forward(const ConvFeatureNet& net, const MultiChannelImage& image, bool training);

/// d(loss)/d(parameters) given d(loss)/d(learned output).
Gradients net_backward(const ConvFeatureNet& net, const NetTape& tape,
                       const Activation& grad_learned);

/// Folds the tape's batch statistics into the running buffers.
void update_running_stats(ConvFeatureNet& net, const NetTape& tape);

/// Hash of every ReLU mask bit and pooling argmax. Two forwards with equal
/// signatures lie on the same piecewise-smooth branch.
std::uint64_t activation_signature(const NetTape& tape);

/// Concatenates [(m/S)x, (m/S)y, intensities, learned] per pixel.
std::vector<double> assemble_features(const MultiChannelImage& image, const Activation& learned,
                                      double m, double interval);

/// Full feature map: positional + intensity + learned channels.
FeatureMap forward(const ConvFeatureNet& net, const MultiChannelImage& image, bool training,
                   double m, double interval);

}  // namespace xseg
