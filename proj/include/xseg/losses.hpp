#pragma once

#include <span>
#include <vector>

#include "xseg/soft_slic.hpp"

namespace xseg {

struct LossConfig {
  double lambda = 1e-4;  // compactness weight

  void validate() const;
};

inline constexpr double kLogEpsilon = 1e-10;

struct LossValue {
  double value = 0.0;
  std::vector<double> grad_q;  // d(value)/d(Q), same layout as SoftAssociation::weights
};

/// Cross-entropy between per-pixel target distributions (N x classes) and
/// their pixel -> superpixel -> pixel reconstruction through Q.
double reconstruction_loss(std::span<const double> targets, int classes, const SoftAssociation& q);
LossValue reconstruction_loss_with_grad(std::span<const double> targets, int classes,
                                        const SoftAssociation& q);

/// Mean squared distance between pixel positions (N x 2) and their
/// reconstruction through Q.
double compactness_loss(const SoftAssociation& q, std::span<const double> positions);
LossValue compactness_loss_with_grad(const SoftAssociation& q, std::span<const double> positions);

double total_loss(double reconstruction, double compactness, const LossConfig& config);

/// One-hot rows from integer class ids.
std::vector<double> one_hot(std::span<const int> classes_per_pixel, int classes);

}  // namespace xseg
