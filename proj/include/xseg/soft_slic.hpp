#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "xseg/features.hpp"
#include "xseg/image.hpp"
#include "xseg/slic.hpp"

namespace xseg {

inline constexpr int kCandidates = 9;
inline constexpr std::int32_t kMaskedCandidate = -1;

struct SoftSlicConfig {
  int k = 256;
  int iterations = 10;  // soft rounds v
  double beta = 1.0;
  double m = 10.0;
  double min_region_fraction = 0.25;

  void validate() const;
};

/// For every pixel, the ids of the 3x3 grid neighbourhood around its cell.
/// Out-of-grid neighbours hold kMaskedCandidate.
struct CandidateMap {
  int width = 0;
  int height = 0;
  Grid grid;
  std::vector<std::int32_t> ids;  // pixel-major, kCandidates per pixel

  std::size_t pixel_count() const { return ids.size() / kCandidates; }
  int superpixel_count() const { return grid.size(); }
  std::span<const std::int32_t> of(std::size_t p) const {
    return std::span<const std::int32_t>(ids).subspan(p * kCandidates, kCandidates);
  }
};

CandidateMap build_candidate_map(int width, int height, int k);

/// Row-stochastic association of each pixel with its candidate superpixels.
struct SoftAssociation {
  CandidateMap candidates;
  std::vector<double> weights;  // pixel-major, kCandidates per pixel; masked slots are 0

  double at(std::size_t p, int slot) const { return weights[p * kCandidates + slot]; }
};

struct SoftCenters {
  int count = 0;
  int dim = 0;
  std::vector<double> values;  // count x dim

  std::span<const double> at(int k) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(k) * dim, dim);
  }
};

/// Mean feature of each grid cell; cells without pixels take the feature of
/// the pixel nearest their grid position.
SoftCenters initial_soft_centers(FeatureView features, const CandidateMap& candidates);

SoftAssociation soft_assign(FeatureView features, const SoftCenters& centers,
                            const CandidateMap& candidates, double beta);
SoftAssociation soft_assign(const FeatureMap& features, const SoftCenters& centers,
                            const CandidateMap& candidates, double beta);

/// Association-weighted feature means; zero-mass centers keep `previous`.
SoftCenters soft_update_centers(FeatureView features, const SoftAssociation& q,
                                const SoftCenters& previous);

/// Intermediate states of an unrolled run, needed for backpropagation.
struct SoftSlicTrace {
  std::vector<SoftCenters> centers;          // v+1 entries, centers[0] is the initialization
  std::vector<SoftAssociation> associations; // v entries
};

struct SoftSlicResult {
  SoftAssociation q;
  SoftCenters centers;
  SoftSlicTrace trace;  // empty unless recording was requested
};

SoftSlicResult soft_slic_iterate(FeatureView features, int width, int height,
                                 const SoftSlicConfig& config, bool record = false);
SoftSlicResult soft_slic_iterate(const FeatureMap& features, const SoftSlicConfig& config,
                                 bool record = false);

/// Per-pixel argmax candidate, ties to the lowest superpixel id.
std::vector<std::int32_t> argmax_labels(const SoftAssociation& q);

/// argmax followed by connectivity enforcement; centers come from `image`.
Labeling harden(const SoftAssociation& q, const MultiChannelImage& image,
                double min_region_fraction);

/// Column-normalized weighted average of per-pixel values (N x channels) -> K x channels.
std::vector<double> pixel_to_superpixel(std::span<const double> values, int channels,
                                        const SoftAssociation& q);
/// Row-weighted scatter of per-superpixel values (K x channels) -> N x channels.
std::vector<double> superpixel_to_pixel(std::span<const double> sp_values, int channels,
                                        const SoftAssociation& q);

// Reverse-mode companions. Each adds into the provided gradient buffers.

/// Given d(loss)/d(output) of pixel_to_superpixel, accumulates into
/// d/d(values) and d/d(Q).
void pixel_to_superpixel_backward(std::span<const double> values, int channels,
                                  const SoftAssociation& q, std::span<const double> sp_values,
                                  std::span<const double> grad_sp, std::span<double> grad_values,
                                  std::span<double> grad_q);

void superpixel_to_pixel_backward(std::span<const double> sp_values, int channels,
                                  const SoftAssociation& q, std::span<const double> grad_out,
                                  std::span<double> grad_sp, std::span<double> grad_q);

/// Backpropagates through all recorded soft iterations and the center
/// initialization. `grad_q` is d(loss)/d(final Q); `grad_centers` (optional,
/// may be empty) is d(loss)/d(final centers). Returns d(loss)/d(features).
std::vector<double> soft_slic_backward(FeatureView features, const SoftSlicTrace& trace,
                                       const SoftSlicConfig& config,
                                       std::span<const double> grad_q,
                                       std::span<const double> grad_centers);

}  // namespace xseg
