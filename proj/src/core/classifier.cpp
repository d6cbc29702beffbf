#include "xseg/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "xseg/error.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

void check_labeling(const Labeling& labeling, int width, int height) {
  if (labeling.width != width || labeling.height != height)
    fail(ErrorCode::data, "labeling/image dimension mismatch");
  if (labeling.labels.size() != static_cast<std::size_t>(width) * height)
    fail(ErrorCode::data, "labeling/image dimension mismatch");
}

struct Forward {
  std::vector<double> hidden;  // post-ReLU activations (mlp only)
  double score = 0.0;
};

Forward run(const BinaryClassifier& m, std::span<const double> z) {
  Forward f;
  const std::size_t d = static_cast<std::size_t>(m.input_dim);
  if (m.kind == ClassifierKind::logistic) {
    const auto& w = m.params[0].values;
    double s = m.params[1].values[0];
    for (std::size_t j = 0; j < d; ++j) s += w[j] * z[j];
    f.score = s;
    return f;
  }
  const auto& w1 = m.params[0].values;
  const auto& b1 = m.params[1].values;
  const auto& w2 = m.params[2].values;
  f.hidden.resize(m.hidden);
  double s = m.params[3].values[0];
  for (int h = 0; h < m.hidden; ++h) {
    double a = b1[h];
    for (std::size_t j = 0; j < d; ++j) a += w1[h * d + j] * z[j];
    f.hidden[h] = std::max(0.0, a);
    s += w2[h] * f.hidden[h];
  }
  f.score = s;
  return f;
}

// Numerically stable binary cross-entropy on a logit.
double bce_with_logit(double score, double target) {
  return std::max(score, 0.0) - score * target + std::log1p(std::exp(-std::abs(score)));
}

std::vector<Tensor> init_params(ClassifierKind kind, int dim, int hidden, Rng& rng) {
  if (kind == ClassifierKind::logistic)
    return {{"clf.weight", {1, dim}, std::vector<float>(dim, 0.0f)}, {"clf.bias", {1}, {0.0f}}};
  auto xavier = [&rng](int fan_in, int fan_out, std::size_t n) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return v;
  };
  return {{"clf.hidden.weight", {hidden, dim}, xavier(dim, hidden, static_cast<std::size_t>(hidden) * dim)},
          {"clf.hidden.bias", {hidden}, std::vector<float>(hidden, 0.0f)},
          {"clf.out.weight", {1, hidden}, xavier(hidden, 1, hidden)},
          {"clf.out.bias", {1}, {0.0f}}};
}

const char* kind_name(ClassifierKind k) { return k == ClassifierKind::logistic ? "logistic" : "mlp"; }

}  // namespace

std::vector<FeatureRow> pool_superpixel_features(const MultiChannelImage& image,
                                                 const Labeling& labeling, double interval,
                                                 const FeatureMap* learned) {
  const int w = image.width(), h = image.height();
  check_labeling(labeling, w, h);
  if (!(interval > 0.0)) fail(ErrorCode::invalid_argument, "S must be > 0");
  const std::size_t channels = image.plane_count();
  std::size_t learned_offset = 0, learned_dim = 0;
  if (learned) {
    if (learned->width != w || learned->height != h)
      fail(ErrorCode::data, "learned feature map dimension mismatch");
    learned_offset = 2 + channels;
    if (static_cast<std::size_t>(learned->dim) < learned_offset)
      fail(ErrorCode::data, "learned feature map has too few channels");
    learned_dim = learned->dim - learned_offset;
  }
  const int k = labeling.count;
  const std::size_t n = image.pixel_count();

  std::vector<std::size_t> count(k, 0);
  std::vector<double> sx(k, 0.0), sy(k, 0.0);
  std::vector<double> sum(k * channels, 0.0), sq(k * channels, 0.0);
  std::vector<double> lo(k * channels, std::numeric_limits<double>::infinity());
  std::vector<double> hi(k * channels, -std::numeric_limits<double>::infinity());
  std::vector<double> lsum(k * learned_dim, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t id = labeling.labels[p];
    if (id < 0 || id >= k) fail(ErrorCode::data, "label id out of range");
    ++count[id];
    sx[id] += static_cast<double>(p % w);
    sy[id] += static_cast<double>(p / w);
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = image.samples(c)[p];
      sum[id * channels + c] += v;
      lo[id * channels + c] = std::min(lo[id * channels + c], v);
      hi[id * channels + c] = std::max(hi[id * channels + c], v);
    }
    if (learned) {
      const float* f = learned->data.data() + p * learned->dim + learned_offset;
      for (std::size_t j = 0; j < learned_dim; ++j) lsum[id * learned_dim + j] += f[j];
    }
  }
  // Second pass for a cancellation-free population variance.
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t id = labeling.labels[p];
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = image.samples(c)[p] - sum[id * channels + c] / count[id];
      sq[id * channels + c] += d * d;
    }
  }

  std::vector<FeatureRow> rows(k);
  for (int id = 0; id < k; ++id) {
    FeatureRow& row = rows[id];
    const double cnt = static_cast<double>(count[id]);
    if (count[id] == 0) {
      row.assign(4 * channels + 3 + learned_dim, 0.0);
      continue;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      row.push_back(sum[id * channels + c] / cnt);
      row.push_back(std::sqrt(sq[id * channels + c] / cnt));
      row.push_back(lo[id * channels + c]);
      row.push_back(hi[id * channels + c]);
    }
    row.push_back(cnt / (interval * interval));
    row.push_back((sx[id] / cnt + 0.5) / w);
    row.push_back((sy[id] / cnt + 0.5) / h);
    for (std::size_t j = 0; j < learned_dim; ++j) row.push_back(lsum[id * learned_dim + j] / cnt);
  }
  return rows;
}

std::vector<SuperpixelClass> label_superpixels_from_mask(const Labeling& labeling,
                                                         const ObjectMask& anomaly_mask, double tau) {
  check_labeling(labeling, anomaly_mask.width, anomaly_mask.height);
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::invalid_argument, "tau must lie in [0, 1]");
  std::vector<std::size_t> total(labeling.count, 0), inside(labeling.count, 0);
  for (std::size_t p = 0; p < labeling.labels.size(); ++p) {
    const std::int32_t id = labeling.labels[p];
    if (id < 0 || id >= labeling.count) fail(ErrorCode::data, "label id out of range");
    ++total[id];
    if (anomaly_mask.bits[p]) ++inside[id];
  }
  std::vector<SuperpixelClass> out(labeling.count, SuperpixelClass::benign);
  for (int id = 0; id < labeling.count; ++id) {
    // Exact rational comparison so that 0.5 overlap at tau 0.5 is inclusive.
    if (total[id] > 0 && static_cast<double>(inside[id]) >= tau * static_cast<double>(total[id]))
      out[id] = SuperpixelClass::anomaly;
  }
  return out;
}

std::vector<double> BinaryClassifier::standardize(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(input_dim))
    fail(ErrorCode::data, "feature dimension " + std::to_string(x.size()) +
                              " does not match the classifier (" + std::to_string(input_dim) + ")");
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / scale[j];
  return z;
}

double BinaryClassifier::score(std::span<const double> x) const {
  const std::vector<double> z = standardize(x);
  return run(*this, z).score;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void ClassifierTrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::invalid_argument, "epochs must be >= 1");
  if (kind == ClassifierKind::mlp && hidden < 1)
    fail(ErrorCode::invalid_argument, "hidden units must be >= 1");
  optimizer.validate();
}

BinaryClassifier train_classifier(std::span<const FeatureRow> features,
                                  std::span<const SuperpixelClass> labels,
                                  const ClassifierTrainConfig& config,
                                  const std::function<void(const ClassifierEpoch&)>& on_epoch) {
  config.validate();
  if (features.empty()) fail(ErrorCode::data, "empty training set");
  if (features.size() != labels.size()) fail(ErrorCode::data, "feature and label counts differ");
  const std::size_t n = features.size();
  const std::size_t d = features[0].size();
  if (d == 0) fail(ErrorCode::data, "empty feature vectors");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != d) fail(ErrorCode::data, "inconsistent feature dimensions");
    for (double v : features[i])
      if (!std::isfinite(v)) fail(ErrorCode::numeric, "non-finite feature value");
    if (labels[i] == SuperpixelClass::anomaly) ++positives;
  }
  if (positives == 0 || positives == n)
    fail(ErrorCode::data, "training set contains a single class");

  BinaryClassifier model;
  model.kind = config.kind;
  model.input_dim = static_cast<int>(d);
  model.hidden = config.kind == ClassifierKind::mlp ? config.hidden : 0;
  model.mean.assign(d, 0.0);
  model.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += features[i][j];
  for (double& m : model.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = features[i][j] - model.mean[j];
      model.scale[j] += dv * dv;
    }
  for (double& s : model.scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }

  std::vector<std::vector<double>> z(n);
  std::vector<double> target(n), weight(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = model.standardize(features[i]);
    target[i] = labels[i] == SuperpixelClass::anomaly ? 1.0 : 0.0;
    if (config.balance_classes) {
      const double cls = target[i] > 0.5 ? static_cast<double>(positives) : static_cast<double>(n - positives);
      weight[i] = static_cast<double>(n) / (2.0 * cls);
    }
  }

  Rng rng(config.seed);
  model.params = init_params(config.kind, static_cast<int>(d), model.hidden, rng);
  OptimizerState opt = config.optimizer;
  opt.velocity.clear();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(opt.batch_size);
  std::size_t batch_index = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
      const std::size_t end = std::min(n, start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      Gradients grads = zero_gradients(model.params);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Forward f = run(model, z[i]);
        batch_loss += weight[i] * bce_with_logit(f.score, target[i]);
        if ((f.score >= 0.0) == (target[i] > 0.5)) ++correct;
        const double g = weight[i] * (sigmoid(f.score) - target[i]) * inv;
        if (model.kind == ClassifierKind::logistic) {
          for (std::size_t j = 0; j < d; ++j) grads[0][j] += g * z[i][j];
          grads[1][0] += g;
        } else {
          const auto& w2 = model.params[2].values;
          for (int h = 0; h < model.hidden; ++h) {
            grads[2][h] += g * f.hidden[h];
            if (f.hidden[h] <= 0.0) continue;
            const double gh = g * w2[h];
            grads[1][h] += gh;
            for (std::size_t j = 0; j < d; ++j) grads[0][h * d + j] += gh * z[i][j];
          }
          grads[3][0] += g;
        }
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorCode::numeric, "NaN loss at batch " + std::to_string(batch_index));
      epoch_loss += batch_loss;
      sgd_step(model.params, grads, opt);
    }
    if (on_epoch)
      on_epoch({epoch, epoch_loss / static_cast<double>(n),
                static_cast<double>(correct) / static_cast<double>(n)});
  }
  return model;
}

std::vector<SuperpixelLabel> classify_superpixels(const BinaryClassifier& model,
                                                  std::span<const FeatureRow> features) {
  std::vector<SuperpixelLabel> out;
  out.reserve(features.size());
  for (const FeatureRow& row : features) {
    const double p = sigmoid(model.score(row));
    out.push_back({p >= 0.5 ? SuperpixelClass::anomaly : SuperpixelClass::benign, p});
  }
  return out;
}

void save_classifier(const BinaryClassifier& model, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& manifest) {
  write_checkpoint(checkpoint, model.params);
  nlohmann::json j;
  j["kind"] = kind_name(model.kind);
  j["input_dim"] = model.input_dim;
  j["hidden"] = model.hidden;
  j["mean"] = model.mean;
  j["scale"] = model.scale;
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

BinaryClassifier load_classifier(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::io, "cannot open classifier manifest " + manifest.string());
  BinaryClassifier model;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "logistic") model.kind = ClassifierKind::logistic;
    else if (kind == "mlp") model.kind = ClassifierKind::mlp;
    else fail(ErrorCode::data, "unknown classifier kind " + kind);
    model.input_dim = j.at("input_dim").get<int>();
    model.hidden = j.at("hidden").get<int>();
    model.mean = j.at("mean").get<std::vector<double>>();
    model.scale = j.at("scale").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, std::string("malformed classifier manifest: ") + e.what());
  }
  const std::size_t d = static_cast<std::size_t>(model.input_dim);
  if (model.mean.size() != d || model.scale.size() != d)
    fail(ErrorCode::data, "classifier normalization does not match input_dim");
  const std::vector<Tensor> tensors = read_checkpoint(checkpoint);
  const std::vector<std::string> names =
      model.kind == ClassifierKind::logistic
          ? std::vector<std::string>{"clf.weight", "clf.bias"}
          : std::vector<std::string>{"clf.hidden.weight", "clf.hidden.bias", "clf.out.weight", "clf.out.bias"};
  const std::vector<std::size_t> sizes =
      model.kind == ClassifierKind::logistic
          ? std::vector<std::size_t>{d, 1}
          : std::vector<std::size_t>{d * model.hidden, static_cast<std::size_t>(model.hidden),
                                     static_cast<std::size_t>(model.hidden), 1};
  for (std::size_t i = 0; i < names.size(); ++i) {
    model.params.push_back(find_tensor(tensors, names[i]));
    if (model.params.back().values.size() != sizes[i])
      fail(ErrorCode::data, "classifier tensor " + names[i] + " has the wrong size");
  }
  return model;
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const SuperpixelLabel> labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "superpixel_id,probability,label\n";
  char buf[64];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", labels[i].probability);
    out << i << ',' << buf << ',' << (labels[i].value == SuperpixelClass::anomaly ? "anomaly" : "benign")
        << '\n';
  }
}

}  // namespace xseg
