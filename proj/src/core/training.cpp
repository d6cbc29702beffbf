#include "xseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xseg/error.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

struct ForwardState {
  NetOutput net;
  std::vector<double> features;
  std::size_t dim = 0;
  SoftSlicResult soft;
  LossBreakdown loss;
  LossValue rcon, comp;
};

ForwardState run_forward(const ConvFeatureNet& net, const TrainingInstance& instance,
                         const FeatureTrainConfig& config, bool record, bool with_grad) {
  config.soft.validate();
  config.loss.validate();
  const MultiChannelImage& image = instance.image;
  const double interval = make_grid(image.width(), image.height(), config.soft.k).interval;
  ForwardState st;
  st.net = net_forward(net, image, true);
  st.features = assemble_features(image, st.net.learned, config.soft.m, interval);
  st.dim = 2 + image.plane_count() + st.net.learned.channels;
  const FeatureView view{st.features, st.dim};
  st.soft = soft_slic_iterate(view, image.width(), image.height(), config.soft, record);
  const std::vector<double> pos = pixel_positions(image.width(), image.height());
  if (with_grad) {
    st.rcon = reconstruction_loss_with_grad(instance.targets, instance.classes, st.soft.q);
    st.comp = compactness_loss_with_grad(st.soft.q, pos);
    st.loss.reconstruction = st.rcon.value;
    st.loss.compactness = st.comp.value;
  } else {
    st.loss.reconstruction = reconstruction_loss(instance.targets, instance.classes, st.soft.q);
    st.loss.compactness = compactness_loss(st.soft.q, pos);
  }
  st.loss.total = total_loss(st.loss.reconstruction, st.loss.compactness, config.loss);
  if (!std::isfinite(st.loss.total)) fail(ErrorCode::numeric, "non-finite training loss");
  return st;
}

}  // namespace

LossBreakdown evaluate_loss(const ConvFeatureNet& net, const TrainingInstance& instance,
                            const FeatureTrainConfig& config) {
  return run_forward(net, instance, config, false, false).loss;
}

BackwardResult backward(const ConvFeatureNet& net, const TrainingInstance& instance,
                        const FeatureTrainConfig& config) {
  ForwardState st = run_forward(net, instance, config, true, true);
  std::vector<double> grad_q = st.rcon.grad_q;
  for (std::size_t i = 0; i < grad_q.size(); ++i) grad_q[i] += config.loss.lambda * st.comp.grad_q[i];

  const std::vector<double> grad_f =
      soft_slic_backward(FeatureView{st.features, st.dim}, st.soft.trace, config.soft, grad_q, {});

  const Activation& learned = st.net.learned;
  const std::size_t n = learned.plane();
  const std::size_t raw_dim = st.dim - learned.channels;
  Activation grad_learned{learned.channels, learned.height, learned.width,
                          std::vector<double>(learned.data.size())};
  for (int l = 0; l < learned.channels; ++l)
    for (std::size_t p = 0; p < n; ++p) grad_learned.data[l * n + p] = grad_f[p * st.dim + raw_dim + l];

  BackwardResult out;
  out.loss = st.loss;
  out.grads = net_backward(net, st.net.tape, grad_learned);
  out.tape = std::move(st.net.tape);
  return out;
}

GradCheckResult grad_check(const ConvFeatureNet& net, const TrainingInstance& instance,
                           const FeatureTrainConfig& config, const GradCheckOptions& options) {
  BackwardResult base = backward(net, instance, config);
  if (options.tamper) options.tamper(base.grads);
  const std::uint64_t signature = activation_signature(base.tape);

  ConvFeatureNet probe = net;
  Rng rng(options.seed);
  GradCheckResult result;
  auto eval = [&](std::size_t t, std::size_t i, float value, std::uint64_t& sig) {
    probe.parameters()[t].values[i] = value;
    ForwardState st = run_forward(probe, instance, config, false, false);
    sig = activation_signature(st.net.tape);
    return st.loss.total;
  };
  for (std::size_t t = 0; t < probe.parameters().size(); ++t) {
    const std::size_t size = probe.parameters()[t].values.size();
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t take = std::min<std::size_t>(size, static_cast<std::size_t>(options.samples_per_tensor));
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t i = order[s];
      const float original = probe.parameters()[t].values[i];
      const float plus = static_cast<float>(original + options.eps);
      const float minus = static_cast<float>(original - options.eps);
      std::uint64_t sig_plus = 0, sig_minus = 0;
      const double l_plus = eval(t, i, plus, sig_plus);
      const double l_minus = eval(t, i, minus, sig_minus);
      probe.parameters()[t].values[i] = original;
      if (sig_plus != signature || sig_minus != signature) {
        ++result.skipped;
        continue;
      }
      const double fd = (l_plus - l_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double analytic = base.grads[t][i];
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
      const double rel = std::abs(analytic - fd) / denom;
      ++result.checked;
      if (rel >= result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst = probe.parameters()[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

void train_feature_net(ConvFeatureNet& net, const std::vector<TrainingInstance>& instances,
                       const FeatureTrainConfig& config, OptimizerState& optimizer, int steps,
                       std::uint64_t seed,
                       const std::function<void(const FeatureTrainProgress&)>& on_step) {
  optimizer.validate();
  if (instances.empty()) fail(ErrorCode::data, "no training instances");
  if (steps < 0) fail(ErrorCode::invalid_argument, "steps must be >= 0");
  Rng rng(seed);
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min<std::size_t>(instances.size(), optimizer.batch_size);

  for (int step = 0; step < steps; ++step) {
    Gradients grads = zero_gradients(net.parameters());
    FeatureTrainProgress progress;
    progress.step = step;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const BackwardResult r = backward(net, instances[order[cursor++]], config);
      accumulate(grads, r.grads, 1.0 / static_cast<double>(batch));
      update_running_stats(net, r.tape);
      progress.loss.reconstruction += r.loss.reconstruction / batch;
      progress.loss.compactness += r.loss.compactness / batch;
      progress.loss.total += r.loss.total / batch;
    }
    sgd_step(net.parameters(), grads, optimizer);
    if (on_step) on_step(progress);
  }
}

}  // namespace xseg
