#include "xseg/soft_slic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xseg/error.hpp"

namespace xseg {

namespace {

double squared_distance(const double* f, const double* c, std::size_t dim) {
  double d = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double diff = f[j] - c[j];
    d += diff * diff;
  }
  return d;
}

void check_features(FeatureView features, std::size_t pixels) {
  if (features.dim == 0) fail(ErrorCode::data, "feature dimensionality must be positive");
  if (features.rows() != pixels || features.data.size() != pixels * features.dim)
    fail(ErrorCode::data, "feature map does not match the candidate map");
}

// Pixel index standing in for an empty grid cell: the pixel at its grid position.
std::size_t fallback_pixel(const CandidateMap& cm, int k) {
  const Grid& g = cm.grid;
  const int ix = k % g.cols, iy = k / g.cols;
  const long x = std::clamp(std::lround((ix + 0.5) * g.interval), 0L, static_cast<long>(cm.width - 1));
  const long y = std::clamp(std::lround((iy + 0.5) * g.interval), 0L, static_cast<long>(cm.height - 1));
  return static_cast<std::size_t>(y) * cm.width + static_cast<std::size_t>(x);
}

std::vector<std::size_t> cell_counts(const CandidateMap& cm) {
  std::vector<std::size_t> counts(cm.superpixel_count(), 0);
  for (std::size_t p = 0; p < cm.pixel_count(); ++p) ++counts[cm.ids[p * kCandidates + 4]];
  return counts;
}

std::vector<double> masses(const SoftAssociation& q) {
  std::vector<double> mass(q.candidates.superpixel_count(), 0.0);
  const std::size_t n = q.candidates.pixel_count();
  for (std::size_t p = 0; p < n; ++p)
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t k = q.candidates.ids[p * kCandidates + i];
      if (k >= 0) mass[k] += q.weights[p * kCandidates + i];
    }
  return mass;
}

}  // namespace

void SoftSlicConfig::validate() const {
  if (k < 1) fail(ErrorCode::invalid_argument, "K must be >= 1");
  if (iterations < 1) fail(ErrorCode::invalid_argument, "soft iterations v must be >= 1");
  if (!(beta > 0.0) || !std::isfinite(beta))
    fail(ErrorCode::invalid_argument, "beta must be finite and > 0");
  if (!(m > 0.0)) fail(ErrorCode::invalid_argument, "compactness m must be > 0");
  if (!(min_region_fraction > 0.0 && min_region_fraction <= 1.0))
    fail(ErrorCode::invalid_argument, "min_region_fraction must lie in (0, 1]");
}

CandidateMap build_candidate_map(int width, int height, int k) {
  CandidateMap cm;
  cm.width = width;
  cm.height = height;
  cm.grid = make_grid(width, height, k);
  const Grid& g = cm.grid;
  cm.ids.resize(static_cast<std::size_t>(width) * height * kCandidates);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int cell = g.cell_of(x, y);
      const int cx = cell % g.cols, cy = cell / g.cols;
      std::int32_t* slot = cm.ids.data() + (static_cast<std::size_t>(y) * width + x) * kCandidates;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = cx + dx, ny = cy + dy;
          const bool valid = nx >= 0 && ny >= 0 && nx < g.cols && ny < g.rows;
          *slot++ = valid ? ny * g.cols + nx : kMaskedCandidate;
        }
    }
  }
  return cm;
}

SoftCenters initial_soft_centers(FeatureView features, const CandidateMap& candidates) {
  const std::size_t n = candidates.pixel_count();
  check_features(features, n);
  const int k = candidates.superpixel_count();
  const std::size_t dim = features.dim;
  SoftCenters c{k, static_cast<int>(dim), std::vector<double>(static_cast<std::size_t>(k) * dim, 0.0)};
  const std::vector<std::size_t> counts = cell_counts(candidates);
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t cell = candidates.ids[p * kCandidates + 4];
    const double* f = features.row(p);
    double* out = c.values.data() + static_cast<std::size_t>(cell) * dim;
    for (std::size_t j = 0; j < dim; ++j) out[j] += f[j];
  }
  for (int cell = 0; cell < k; ++cell) {
    double* out = c.values.data() + static_cast<std::size_t>(cell) * dim;
    if (counts[cell] == 0) {
      const double* f = features.row(fallback_pixel(candidates, cell));
      std::copy(f, f + dim, out);
    } else {
      for (std::size_t j = 0; j < dim; ++j) out[j] /= static_cast<double>(counts[cell]);
    }
  }
  return c;
}

SoftAssociation soft_assign(FeatureView features, const SoftCenters& centers,
                            const CandidateMap& candidates, double beta) {
  const std::size_t n = candidates.pixel_count();
  check_features(features, n);
  if (static_cast<std::size_t>(centers.dim) != features.dim)
    fail(ErrorCode::data, "feature and center dimensionality differ");
  if (centers.count != candidates.superpixel_count())
    fail(ErrorCode::data, "center count does not match the candidate grid");
  for (double v : features.data)
    if (!std::isfinite(v)) fail(ErrorCode::numeric, "non-finite feature input to soft_assign");

  SoftAssociation q{candidates, std::vector<double>(n * kCandidates, 0.0)};
  const std::size_t dim = features.dim;
  double logits[kCandidates];
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t* ids = candidates.ids.data() + p * kCandidates;
    const double* f = features.row(p);
    double top = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kCandidates; ++i) {
      if (ids[i] < 0) continue;
      logits[i] = -beta * squared_distance(f, centers.values.data() + static_cast<std::size_t>(ids[i]) * dim, dim);
      top = std::max(top, logits[i]);
    }
    double sum = 0.0;
    double* row = q.weights.data() + p * kCandidates;
    for (int i = 0; i < kCandidates; ++i) {
      if (ids[i] < 0) continue;
      row[i] = std::exp(logits[i] - top);
      sum += row[i];
    }
    for (int i = 0; i < kCandidates; ++i) row[i] /= sum;
  }
  return q;
}

SoftAssociation soft_assign(const FeatureMap& features, const SoftCenters& centers,
                            const CandidateMap& candidates, double beta) {
  const std::vector<double> f = features.to_double();
  return soft_assign(FeatureView{f, static_cast<std::size_t>(features.dim)}, centers, candidates, beta);
}

SoftCenters soft_update_centers(FeatureView features, const SoftAssociation& q,
                                const SoftCenters& previous) {
  const CandidateMap& cm = q.candidates;
  const std::size_t n = cm.pixel_count();
  check_features(features, n);
  const std::size_t dim = features.dim;
  const int k = cm.superpixel_count();
  std::vector<double> mass(k, 0.0);
  std::vector<double> acc(static_cast<std::size_t>(k) * dim, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double* f = features.row(p);
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = cm.ids[p * kCandidates + i];
      if (id < 0) continue;
      const double w = q.weights[p * kCandidates + i];
      mass[id] += w;
      double* a = acc.data() + static_cast<std::size_t>(id) * dim;
      for (std::size_t j = 0; j < dim; ++j) a[j] += w * f[j];
    }
  }
  SoftCenters out = previous;
  for (int id = 0; id < k; ++id) {
    if (!(mass[id] > 0.0)) continue;
    for (std::size_t j = 0; j < dim; ++j)
      out.values[static_cast<std::size_t>(id) * dim + j] = acc[static_cast<std::size_t>(id) * dim + j] / mass[id];
  }
  return out;
}

SoftSlicResult soft_slic_iterate(FeatureView features, int width, int height,
                                 const SoftSlicConfig& config, bool record) {
  config.validate();
  const CandidateMap cm = build_candidate_map(width, height, config.k);
  SoftCenters centers = initial_soft_centers(features, cm);
  SoftSlicResult result;
  if (record) result.trace.centers.push_back(centers);
  for (int t = 0; t < config.iterations; ++t) {
    SoftAssociation q = soft_assign(features, centers, cm, config.beta);
    centers = soft_update_centers(features, q, centers);
    if (record) {
      result.trace.associations.push_back(q);
      result.trace.centers.push_back(centers);
    }
    if (t + 1 == config.iterations) result.q = std::move(q);
  }
  result.centers = std::move(centers);
  return result;
}

SoftSlicResult soft_slic_iterate(const FeatureMap& features, const SoftSlicConfig& config,
                                 bool record) {
  const std::vector<double> f = features.to_double();
  return soft_slic_iterate(FeatureView{f, static_cast<std::size_t>(features.dim)}, features.width,
                           features.height, config, record);
}

std::vector<std::int32_t> argmax_labels(const SoftAssociation& q) {
  const std::size_t n = q.candidates.pixel_count();
  std::vector<std::int32_t> labels(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::int32_t best_id = -1;
    double best = -1.0;
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = q.candidates.ids[p * kCandidates + i];
      if (id < 0) continue;
      const double w = q.weights[p * kCandidates + i];
      if (w > best || (w == best && id < best_id)) {
        best = w;
        best_id = id;
      }
    }
    labels[p] = best_id;
  }
  return labels;
}

Labeling harden(const SoftAssociation& q, const MultiChannelImage& image,
                double min_region_fraction) {
  if (static_cast<std::size_t>(image.width()) != static_cast<std::size_t>(q.candidates.width) ||
      image.height() != q.candidates.height)
    fail(ErrorCode::data, "association and image dimensions differ");
  const std::vector<std::int32_t> labels = argmax_labels(q);
  return enforce_connectivity(image, labels, q.candidates.grid.interval, min_region_fraction);
}

std::vector<double> pixel_to_superpixel(std::span<const double> values, int channels,
                                        const SoftAssociation& q) {
  const CandidateMap& cm = q.candidates;
  const std::size_t n = cm.pixel_count();
  const std::size_t c = static_cast<std::size_t>(channels);
  if (values.size() != n * c) fail(ErrorCode::data, "per-pixel values do not match the association");
  const int k = cm.superpixel_count();
  std::vector<double> mass(k, 0.0);
  std::vector<double> out(static_cast<std::size_t>(k) * c, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = cm.ids[p * kCandidates + i];
      if (id < 0) continue;
      const double w = q.weights[p * kCandidates + i];
      mass[id] += w;
      for (std::size_t j = 0; j < c; ++j) out[id * c + j] += w * values[p * c + j];
    }
  }
  for (int id = 0; id < k; ++id) {
    if (!(mass[id] > 0.0)) continue;
    for (std::size_t j = 0; j < c; ++j) out[id * c + j] /= mass[id];
  }
  return out;
}

std::vector<double> superpixel_to_pixel(std::span<const double> sp_values, int channels,
                                        const SoftAssociation& q) {
  const CandidateMap& cm = q.candidates;
  const std::size_t n = cm.pixel_count();
  const std::size_t c = static_cast<std::size_t>(channels);
  if (sp_values.size() != static_cast<std::size_t>(cm.superpixel_count()) * c)
    fail(ErrorCode::data, "per-superpixel values do not match the association");
  std::vector<double> out(n * c, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = cm.ids[p * kCandidates + i];
      if (id < 0) continue;
      const double w = q.weights[p * kCandidates + i];
      for (std::size_t j = 0; j < c; ++j) out[p * c + j] += w * sp_values[id * c + j];
    }
  }
  return out;
}

void pixel_to_superpixel_backward(std::span<const double> values, int channels,
                                  const SoftAssociation& q, std::span<const double> sp_values,
                                  std::span<const double> grad_sp, std::span<double> grad_values,
                                  std::span<double> grad_q) {
  const CandidateMap& cm = q.candidates;
  const std::size_t n = cm.pixel_count();
  const std::size_t c = static_cast<std::size_t>(channels);
  const int k = cm.superpixel_count();
  const std::vector<double> mass = masses(q);
  // sp = A / M  =>  dA = g / M,  dM = -(g . sp) / M
  std::vector<double> grad_a(static_cast<std::size_t>(k) * c, 0.0);
  std::vector<double> grad_m(k, 0.0);
  for (int id = 0; id < k; ++id) {
    if (!(mass[id] > 0.0)) continue;
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      grad_a[id * c + j] = grad_sp[id * c + j] / mass[id];
      dot += grad_sp[id * c + j] * sp_values[id * c + j];
    }
    grad_m[id] = -dot / mass[id];
  }
  for (std::size_t p = 0; p < n; ++p) {
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = cm.ids[p * kCandidates + i];
      if (id < 0 || !(mass[id] > 0.0)) continue;
      const double w = q.weights[p * kCandidates + i];
      double g = grad_m[id];
      for (std::size_t j = 0; j < c; ++j) {
        g += grad_a[id * c + j] * values[p * c + j];
        if (!grad_values.empty()) grad_values[p * c + j] += w * grad_a[id * c + j];
      }
      if (!grad_q.empty()) grad_q[p * kCandidates + i] += g;
    }
  }
}

void superpixel_to_pixel_backward(std::span<const double> sp_values, int channels,
                                  const SoftAssociation& q, std::span<const double> grad_out,
                                  std::span<double> grad_sp, std::span<double> grad_q) {
  const CandidateMap& cm = q.candidates;
  const std::size_t n = cm.pixel_count();
  const std::size_t c = static_cast<std::size_t>(channels);
  for (std::size_t p = 0; p < n; ++p) {
    for (int i = 0; i < kCandidates; ++i) {
      const std::int32_t id = cm.ids[p * kCandidates + i];
      if (id < 0) continue;
      const double w = q.weights[p * kCandidates + i];
      double g = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        g += grad_out[p * c + j] * sp_values[id * c + j];
        if (!grad_sp.empty()) grad_sp[id * c + j] += w * grad_out[p * c + j];
      }
      if (!grad_q.empty()) grad_q[p * kCandidates + i] += g;
    }
  }
}

std::vector<double> soft_slic_backward(FeatureView features, const SoftSlicTrace& trace,
                                       const SoftSlicConfig& config,
                                       std::span<const double> grad_q,
                                       std::span<const double> grad_centers) {
  const std::size_t v = trace.associations.size();
  if (v == 0 || trace.centers.size() != v + 1)
    fail(ErrorCode::state, "soft_slic_backward needs a recorded forward pass");
  const CandidateMap& cm = trace.associations.front().candidates;
  const std::size_t n = cm.pixel_count();
  check_features(features, n);
  const std::size_t dim = features.dim;
  const int k = cm.superpixel_count();
  const double beta = config.beta;

  std::vector<double> grad_f(n * dim, 0.0);
  std::vector<double> grad_c(static_cast<std::size_t>(k) * dim, 0.0);
  if (!grad_centers.empty()) std::copy(grad_centers.begin(), grad_centers.end(), grad_c.begin());
  std::vector<double> gq(n * kCandidates);
  std::vector<double> grad_prev(static_cast<std::size_t>(k) * dim);
  std::vector<double> grad_s(static_cast<std::size_t>(k) * dim);
  std::vector<double> grad_m(k);

  for (std::size_t t = v; t-- > 0;) {
    const SoftAssociation& q = trace.associations[t];
    const SoftCenters& prev = trace.centers[t];
    const SoftCenters& next = trace.centers[t + 1];
    if (t + 1 == v && !grad_q.empty())
      std::copy(grad_q.begin(), grad_q.end(), gq.begin());
    else
      std::fill(gq.begin(), gq.end(), 0.0);
    std::fill(grad_prev.begin(), grad_prev.end(), 0.0);

    // Center update: next = S / M, or prev when M == 0.
    const std::vector<double> mass = masses(q);
    for (int id = 0; id < k; ++id) {
      const std::size_t off = static_cast<std::size_t>(id) * dim;
      if (!(mass[id] > 0.0)) {
        for (std::size_t j = 0; j < dim; ++j) grad_prev[off + j] += grad_c[off + j];
        grad_m[id] = 0.0;
        std::fill(grad_s.begin() + off, grad_s.begin() + off + dim, 0.0);
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        grad_s[off + j] = grad_c[off + j] / mass[id];
        dot += grad_c[off + j] * next.values[off + j];
      }
      grad_m[id] = -dot / mass[id];
    }
    for (std::size_t p = 0; p < n; ++p) {
      const double* f = features.row(p);
      double* gf = grad_f.data() + p * dim;
      for (int i = 0; i < kCandidates; ++i) {
        const std::int32_t id = cm.ids[p * kCandidates + i];
        if (id < 0 || !(mass[id] > 0.0)) continue;
        const double w = q.weights[p * kCandidates + i];
        const double* gs = grad_s.data() + static_cast<std::size_t>(id) * dim;
        double g = grad_m[id];
        for (std::size_t j = 0; j < dim; ++j) {
          g += gs[j] * f[j];
          gf[j] += w * gs[j];
        }
        gq[p * kCandidates + i] += g;
      }
    }

    // Softmax over candidates of -beta * ||f - c||^2.
    for (std::size_t p = 0; p < n; ++p) {
      const double* f = features.row(p);
      double* gf = grad_f.data() + p * dim;
      const double* w = q.weights.data() + p * kCandidates;
      const double* g = gq.data() + p * kCandidates;
      double s = 0.0;
      for (int i = 0; i < kCandidates; ++i) s += w[i] * g[i];
      for (int i = 0; i < kCandidates; ++i) {
        const std::int32_t id = cm.ids[p * kCandidates + i];
        if (id < 0) continue;
        const double gd = -beta * w[i] * (g[i] - s);
        if (gd == 0.0) continue;
        const double* c = prev.values.data() + static_cast<std::size_t>(id) * dim;
        double* gc = grad_prev.data() + static_cast<std::size_t>(id) * dim;
        for (std::size_t j = 0; j < dim; ++j) {
          const double d = 2.0 * gd * (f[j] - c[j]);
          gf[j] += d;
          gc[j] -= d;
        }
      }
    }
    grad_c.swap(grad_prev);
  }

  // Initialization: cell means (or the fallback pixel for empty cells).
  const std::vector<std::size_t> counts = cell_counts(cm);
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t cell = cm.ids[p * kCandidates + 4];
    const double inv = 1.0 / static_cast<double>(counts[cell]);
    const double* gc = grad_c.data() + static_cast<std::size_t>(cell) * dim;
    double* gf = grad_f.data() + p * dim;
    for (std::size_t j = 0; j < dim; ++j) gf[j] += gc[j] * inv;
  }
  for (int cell = 0; cell < k; ++cell) {
    if (counts[cell] != 0) continue;
    const double* gc = grad_c.data() + static_cast<std::size_t>(cell) * dim;
    double* gf = grad_f.data() + fallback_pixel(cm, cell) * dim;
    for (std::size_t j = 0; j < dim; ++j) gf[j] += gc[j];
  }
  return grad_f;
}

}  // namespace xseg
