#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "xseg/error.hpp"
#include "xseg/losses.hpp"
#include "xseg/training.hpp"

using namespace xseg;
using xseg::test::TempDir;

namespace {

void set_weight(SoftAssociation& q, std::size_t p, int id, double w) {
  for (int i = 0; i < kCandidates; ++i)
    if (q.candidates.ids[p * kCandidates + i] == id) {
      q.weights[p * kCandidates + i] = w;
      return;
    }
  FAIL("id is not a candidate");
}

SoftAssociation blank_association(int w, int h, int k) {
  SoftAssociation q{build_candidate_map(w, h, k), {}};
  q.weights.assign(q.candidates.ids.size(), 0.0);
  return q;
}

SoftAssociation random_association(int w, int h, int k, Rng& rng) {
  const CandidateMap cm = build_candidate_map(w, h, k);
  std::vector<double> f(cm.pixel_count() * 2);
  for (double& v : f) v = rng.uniform(-1, 1);
  const FeatureView view{f, 2};
  return soft_assign(view, initial_soft_centers(view, cm), cm, 2.0);
}

// Instance with three target classes: outside a box, inside it, and a small patch.
TrainingInstance make_instance(int size, int channels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> cls(static_cast<std::size_t>(size) * size);
  const auto img = test::make_image(size, size, channels, [&](int c, int x, int y) {
    const bool inside = x >= size / 4 && x < 3 * size / 4 && y >= size / 4 && y < 3 * size / 4;
    const bool patch = inside && x >= size / 2 && y >= size / 2;
    if (c == 0) cls[static_cast<std::size_t>(y) * size + x] = patch ? 2 : inside ? 1 : 0;
    const double base = patch ? 0.8 : inside ? 0.5 : 0.1;
    return std::clamp(base + 0.05 * (c + 1) * rng.uniform(-1, 1), 0.0, 1.0);
  });
  return {img, one_hot(cls, 3), 3};
}

NetConfig net_config(int in_channels, int width) {
  NetConfig c;
  c.in_channels = in_channels;
  c.width = width;
  c.learned = 3;
  return c;
}

}  // namespace

TEST_CASE("one_hot") {
  const std::vector<int> cls{0, 2, 1};
  CHECK(one_hot(cls, 3) == std::vector<double>{1, 0, 0, 0, 0, 1, 0, 1, 0});
  CHECK_THROWS_AS(one_hot(std::vector<int>{3}, 3), Error);
}

TEST_CASE("reconstruction_loss examples") {
  SUBCASE("perfect reconstruction") {
    SoftAssociation q = blank_association(4, 2, 2);
    REQUIRE(q.candidates.superpixel_count() == 2);
    std::vector<int> cls(8);
    for (std::size_t p = 0; p < 8; ++p) {
      const int id = (p % 4) < 2 ? 0 : 1;
      set_weight(q, p, id, 1.0);
      cls[p] = id == 0 ? 2 : 0;
    }
    CHECK(reconstruction_loss(one_hot(cls, 3), 3, q) == doctest::Approx(-std::log(1.0 + kLogEpsilon)));
  }
  SUBCASE("uniform targets cost log C for any Q") {
    Rng rng(2);
    for (int classes : {2, 3, 5}) {
      const SoftAssociation q = random_association(9, 7, 6, rng);
      const std::vector<double> targets(63 * classes, 1.0 / classes);
      CHECK(reconstruction_loss(targets, classes, q) == doctest::Approx(std::log(classes)).epsilon(1e-9));
    }
  }
  SUBCASE("four pixels, two superpixels by hand") {
    SoftAssociation q = blank_association(4, 1, 2);
    const double W[4][2] = {{1, 0}, {0.5, 0.5}, {0.5, 0.5}, {0, 1}};
    for (std::size_t p = 0; p < 4; ++p)
      for (int k = 0; k < 2; ++k)
        if (W[p][k] > 0) set_weight(q, p, k, W[p][k]);
    const std::vector<int> cls{0, 0, 1, 1};
    // Superpixel means [0.75, 0.25] and [0.25, 0.75]; the middle pixels reconstruct to [0.5, 0.5].
    const double expected = -(std::log(0.75 + kLogEpsilon) + 2 * std::log(0.5 + kLogEpsilon) +
                              std::log(0.75 + kLogEpsilon)) / 4;
    CHECK(reconstruction_loss(one_hot(cls, 2), 2, q) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("invalid targets") {
    Rng rng(3);
    const SoftAssociation q = random_association(3, 3, 1, rng);
    CHECK_THROWS_AS(reconstruction_loss(std::vector<double>(18, 0.7), 2, q), Error);
    CHECK_THROWS_AS(reconstruction_loss(std::vector<double>(4, 0.5), 2, q), Error);
  }
}

TEST_CASE("compactness_loss examples") {
  SUBCASE("one pixel per superpixel") {
    SoftAssociation q = blank_association(3, 1, 3);
    REQUIRE(q.candidates.superpixel_count() == 3);
    for (std::size_t p = 0; p < 3; ++p) set_weight(q, p, static_cast<int>(p), 1.0);
    CHECK(compactness_loss(q, pixel_positions(3, 1)) == 0.0);
  }
  SUBCASE("pixels at x=0 and x=2 in one superpixel") {
    SoftAssociation q = blank_association(2, 1, 1);
    set_weight(q, 0, 0, 1.0);
    set_weight(q, 1, 0, 1.0);
    CHECK(compactness_loss(q, std::vector<double>{0, 0, 2, 0}) == doctest::Approx(1.0));
  }
  SUBCASE("translation invariance and quadratic scaling") {
    Rng rng(5);
    const SoftAssociation q = random_association(10, 8, 6, rng);
    const auto pos = pixel_positions(10, 8);
    const double base = compactness_loss(q, pos);
    CHECK(base > 0);
    auto moved = pos, scaled = pos;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      moved[i] += (i % 2 ? -37.5 : 12.25);
      scaled[i] *= 3.0;
    }
    CHECK(compactness_loss(q, moved) == doctest::Approx(base).epsilon(1e-9));
    CHECK(compactness_loss(q, scaled) == doctest::Approx(9 * base).epsilon(1e-9));
  }
}

TEST_CASE("total_loss") {
  LossConfig c;
  CHECK(total_loss(0.5, 100, c) == doctest::Approx(0.51));
  c.lambda = 0;
  CHECK(total_loss(0.5, 100, c) == 0.5);
  c.lambda = 1e-4;
  CHECK(total_loss(0.5, 0, c) == 0.5);
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("loss gradients with respect to Q match finite differences") {
  Rng rng(8);
  const SoftAssociation q = random_association(6, 5, 4, rng);
  std::vector<double> targets(30 * 3);
  for (std::size_t p = 0; p < 30; ++p) {
    double a = rng.uniform(0.1, 1), b = rng.uniform(0.1, 1), c = rng.uniform(0.1, 1);
    const double s = a + b + c;
    targets[p * 3] = a / s;
    targets[p * 3 + 1] = b / s;
    targets[p * 3 + 2] = c / s;
  }
  const auto pos = pixel_positions(6, 5);
  const LossValue r = reconstruction_loss_with_grad(targets, 3, q);
  const LossValue k = compactness_loss_with_grad(q, pos);
  CHECK(r.value == doctest::Approx(reconstruction_loss(targets, 3, q)));
  CHECK(k.value == doctest::Approx(compactness_loss(q, pos)));
  const double eps = 1e-6;
  for (std::size_t i = 0; i < q.weights.size(); ++i) {
    if (q.candidates.ids[i] < 0) continue;
    SoftAssociation up = q, down = q;
    up.weights[i] += eps;
    down.weights[i] -= eps;
    const double fr = (reconstruction_loss(targets, 3, up) - reconstruction_loss(targets, 3, down)) / (2 * eps);
    const double fk = (compactness_loss(up, pos) - compactness_loss(down, pos)) / (2 * eps);
    CHECK(r.grad_q[i] == doctest::Approx(fr).epsilon(1e-4).scale(1e-3));
    CHECK(k.grad_q[i] == doctest::Approx(fk).epsilon(1e-4).scale(1e-3));
  }
}

TEST_CASE("losses are non-negative on random valid inputs") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const SoftAssociation q = random_association(rng.uniform_int(3, 12), rng.uniform_int(3, 12),
                                                 rng.uniform_int(1, 9), rng);
    const std::size_t n = q.candidates.pixel_count();
    std::vector<int> cls(n);
    for (int& c : cls) c = rng.uniform_int(0, 2);
    const double r = reconstruction_loss(one_hot(cls, 3), 3, q);
    const double c = compactness_loss(q, pixel_positions(q.candidates.width, q.candidates.height));
    CHECK(total_loss(r, c, LossConfig{}) >= 0.0);
  }
}

TEST_CASE("backward through the whole pipeline") {
  const TrainingInstance inst = make_instance(8, 3, 1);
  const ConvFeatureNet net(net_config(3, 4), 11);
  FeatureTrainConfig cfg;
  cfg.soft.k = 4;
  cfg.soft.iterations = 2;
  cfg.soft.beta = 1.0;
  cfg.soft.m = 1.0;
  cfg.loss.lambda = 1e-4;

  SUBCASE("gradient check on the 8x8 reference instance") {
    // Feature dim 2 + 3 + 3 = 8.
    const GradCheckResult r = grad_check(net, inst, cfg);
    INFO("worst: " << r.worst);
    CHECK(r.checked >= 40);
    CHECK(r.max_relative_error <= 1e-3);
  }
  SUBCASE("a doubled tensor gradient is caught") {
    GradCheckOptions opt;
    opt.tamper = [](Gradients& g) {
      for (double& v : g[20]) v *= 2.0;
    };
    CHECK(grad_check(net, inst, cfg, opt).max_relative_error >= 0.33);
  }
  SUBCASE("reconstruction path alone") {
    cfg.loss.lambda = 0.0;
    CHECK(grad_check(net, inst, cfg).max_relative_error <= 1e-3);
  }
  SUBCASE("gradient is affine in lambda") {
    cfg.loss.lambda = 0.0;
    const Gradients g0 = backward(net, inst, cfg).grads;
    cfg.loss.lambda = 1.0;
    const Gradients g1 = backward(net, inst, cfg).grads;
    cfg.loss.lambda = 1e-4;
    const Gradients gm = backward(net, inst, cfg).grads;
    for (std::size_t t = 0; t < g0.size(); ++t) {
      double scale = 0.0;
      for (double v : g0[t]) scale = std::max(scale, std::abs(v));
      for (std::size_t i = 0; i < g0[t].size(); ++i) {
        const double expect = g0[t][i] + 1e-4 * (g1[t][i] - g0[t][i]);
        CHECK(std::abs(gm[t][i] - expect) <= 1e-9 * scale + 1e-15);
      }
    }
  }
  SUBCASE("a single superpixel detaches Q from the features") {
    cfg.soft.k = 1;
    cfg.loss.lambda = 0.0;
    const BackwardResult r = backward(net, inst, cfg);
    for (const auto& g : r.grads)
      for (double v : g) CHECK(v == 0.0);
  }
  SUBCASE("loss breakdown agrees with evaluate_loss") {
    const LossBreakdown a = evaluate_loss(net, inst, cfg), b = backward(net, inst, cfg).loss;
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
    CHECK(a.total == doctest::Approx(a.reconstruction + 1e-4 * a.compactness));
  }
}

TEST_CASE("sgd_step") {
  std::vector<Tensor> params{{"w", {1}, {0.0f}}};
  OptimizerState opt;
  SUBCASE("momentum recurrence") {
    sgd_step(params, Gradients{{1.0}}, opt);
    CHECK(params[0].values[0] == doctest::Approx(-0.0002).epsilon(1e-6));
    const float after_one = params[0].values[0];
    sgd_step(params, Gradients{{1.0}}, opt);
    CHECK(params[0].values[0] - after_one == doctest::Approx(-0.00038).epsilon(1e-5));
  }
  SUBCASE("zero gradient and velocity is a fixed point") {
    params[0].values[0] = 1.5f;
    sgd_step(params, Gradients{{0.0}}, opt);
    CHECK(params[0].values[0] == 1.5f);
  }
  SUBCASE("no momentum is plain descent") {
    opt.momentum = 0.0;
    opt.learning_rate = 0.1;
    sgd_step(params, Gradients{{2.0}}, opt);
    sgd_step(params, Gradients{{2.0}}, opt);
    CHECK(params[0].values[0] == doctest::Approx(-0.4));
  }
  SUBCASE("shape and hyperparameter errors") {
    CHECK_THROWS_AS(sgd_step(params, Gradients{{1.0, 2.0}}, opt), Error);
    CHECK_THROWS_AS(sgd_step(params, Gradients{}, opt), Error);
    opt.momentum = 1.0;
    CHECK_THROWS_AS(opt.validate(), Error);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  const ConvFeatureNet net(net_config(2, 3), 5);
  std::vector<Tensor> tensors = net.state();
  OptimizerState opt;
  opt.learning_rate = 0.01;
  opt.momentum = 0.5;
  opt.batch_size = 7;
  std::vector<Tensor> params = net.parameters();
  sgd_step(params, zero_gradients(params), opt);
  opt.velocity[3][0] = 0.25f;
  append_optimizer_state(tensors, params, opt);
  write_checkpoint(dir / "a.xseg", tensors);

  const std::string bytes = test::slurp(dir / "a.xseg");
  CHECK(bytes.substr(0, 4) == "XSEG");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);

  const std::vector<Tensor> back = read_checkpoint(dir / "a.xseg");
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].shape == tensors[i].shape);
    CHECK(back[i].values == tensors[i].values);
  }
  const OptimizerState restored = extract_optimizer_state(back, params);
  CHECK(restored.learning_rate == doctest::Approx(0.01));
  CHECK(restored.momentum == doctest::Approx(0.5));
  CHECK(restored.batch_size == 7);
  CHECK(restored.velocity[3][0] == 0.25f);
  const ConvFeatureNet rebuilt(net_config(2, 3), back);
  CHECK(rebuilt.parameters()[0].values == net.parameters()[0].values);
  CHECK(find_tensor(back, "bn2.running_var").values.size() == 3);
  CHECK_THROWS_AS(find_tensor(back, "nope"), Error);

  std::ofstream(dir / "bad.xseg") << "NOPE1234";
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.xseg"), Error);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.xseg"), Error);
  std::ofstream(dir / "short.xseg", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(read_checkpoint(dir / "short.xseg"), Error);
}

TEST_CASE("fifty SGD steps reduce the loss on a 16x16 instance") {
  const std::vector<TrainingInstance> data{make_instance(16, 3, 4)};
  ConvFeatureNet net(net_config(3, 8), 3);
  FeatureTrainConfig cfg;
  cfg.soft.k = 16;
  cfg.soft.iterations = 3;
  cfg.soft.beta = 1.0;
  cfg.soft.m = 1.0;
  OptimizerState opt;
  opt.batch_size = 1;
  const double before = evaluate_loss(net, data[0], cfg).total;
  std::vector<double> seen;
  train_feature_net(net, data, cfg, opt, 50, 1, [&](const FeatureTrainProgress& p) { seen.push_back(p.loss.total); });
  const double after = evaluate_loss(net, data[0], cfg).total;
  CHECK(seen.size() == 50);
  CHECK(seen.front() == doctest::Approx(before));
  CHECK(after < before);
}
