#include "xseg/losses.hpp"

#include <cmath>

#include "xseg/error.hpp"

namespace xseg {

namespace {

void check_targets(std::span<const double> targets, int classes, std::size_t pixels) {
  if (classes < 1) fail(ErrorCode::invalid_argument, "class count must be >= 1");
  if (targets.size() != pixels * static_cast<std::size_t>(classes))
    fail(ErrorCode::data, "target rows do not match the association");
  for (std::size_t p = 0; p < pixels; ++p) {
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double t = targets[p * classes + c];
      if (!(t >= 0.0) || !std::isfinite(t)) fail(ErrorCode::data, "invalid target distribution");
      sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-6) fail(ErrorCode::data, "invalid target distribution");
  }
}

// Shared forward/backward for both losses: both compare values with their
// reconstruction through Q.
struct Reconstruction {
  std::vector<double> superpixel;
  std::vector<double> pixel;
};

Reconstruction reconstruct(std::span<const double> values, int channels, const SoftAssociation& q) {
  Reconstruction r;
  r.superpixel = pixel_to_superpixel(values, channels, q);
  r.pixel = superpixel_to_pixel(r.superpixel, channels, q);
  return r;
}

std::vector<double> backprop_reconstruction(std::span<const double> values, int channels,
                                            const SoftAssociation& q, const Reconstruction& r,
                                            std::span<const double> grad_pixel) {
  std::vector<double> grad_q(q.weights.size(), 0.0);
  std::vector<double> grad_sp(r.superpixel.size(), 0.0);
  superpixel_to_pixel_backward(r.superpixel, channels, q, grad_pixel, grad_sp, grad_q);
  pixel_to_superpixel_backward(values, channels, q, r.superpixel, grad_sp, {}, grad_q);
  return grad_q;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    fail(ErrorCode::invalid_argument, "lambda must be finite and >= 0");
}

double reconstruction_loss(std::span<const double> targets, int classes, const SoftAssociation& q) {
  const std::size_t n = q.candidates.pixel_count();
  check_targets(targets, classes, n);
  const Reconstruction r = reconstruct(targets, classes, q);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] != 0.0) loss -= targets[i] * std::log(r.pixel[i] + kLogEpsilon);
  return loss / static_cast<double>(n);
}

LossValue reconstruction_loss_with_grad(std::span<const double> targets, int classes,
                                        const SoftAssociation& q) {
  const std::size_t n = q.candidates.pixel_count();
  check_targets(targets, classes, n);
  const Reconstruction r = reconstruct(targets, classes, q);
  LossValue out;
  std::vector<double> grad_pixel(targets.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == 0.0) continue;
    out.value -= targets[i] * std::log(r.pixel[i] + kLogEpsilon);
    grad_pixel[i] = -inv_n * targets[i] / (r.pixel[i] + kLogEpsilon);
  }
  out.value *= inv_n;
  out.grad_q = backprop_reconstruction(targets, classes, q, r, grad_pixel);
  return out;
}

double compactness_loss(const SoftAssociation& q, std::span<const double> positions) {
  const std::size_t n = q.candidates.pixel_count();
  if (positions.size() != 2 * n) fail(ErrorCode::data, "position rows do not match the association");
  const Reconstruction r = reconstruct(positions, 2, q);
  double loss = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double d = positions[i] - r.pixel[i];
    loss += d * d;
  }
  return loss / static_cast<double>(n);
}

LossValue compactness_loss_with_grad(const SoftAssociation& q, std::span<const double> positions) {
  const std::size_t n = q.candidates.pixel_count();
  if (positions.size() != 2 * n) fail(ErrorCode::data, "position rows do not match the association");
  const Reconstruction r = reconstruct(positions, 2, q);
  LossValue out;
  std::vector<double> grad_pixel(positions.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double d = positions[i] - r.pixel[i];
    out.value += d * d;
    grad_pixel[i] = -2.0 * inv_n * d;
  }
  out.value *= inv_n;
  out.grad_q = backprop_reconstruction(positions, 2, q, r, grad_pixel);
  return out;
}

double total_loss(double reconstruction, double compactness, const LossConfig& config) {
  return reconstruction + config.lambda * compactness;
}

std::vector<double> one_hot(std::span<const int> classes_per_pixel, int classes) {
  std::vector<double> out(classes_per_pixel.size() * classes, 0.0);
  for (std::size_t p = 0; p < classes_per_pixel.size(); ++p) {
    const int c = classes_per_pixel[p];
    if (c < 0 || c >= classes) fail(ErrorCode::data, "class id out of range");
    out[p * classes + c] = 1.0;
  }
  return out;
}

}  // namespace xseg
