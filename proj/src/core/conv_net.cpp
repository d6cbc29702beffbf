#include "xseg/conv_net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xseg/error.hpp"
#include "xseg/rng.hpp"

namespace xseg {

namespace {

// Parameter layout: block b owns indices 4b..4b+3, the head owns the last two.
constexpr int kHeadWeight = 4 * kConvBlocks;
constexpr int kHeadBias = kHeadWeight + 1;

int conv_w(int b) { return 4 * b; }
int conv_b(int b) { return 4 * b + 1; }
int bn_scale(int b) { return 4 * b + 2; }
int bn_shift(int b) { return 4 * b + 3; }

std::string block_name(const char* prefix, int b, const char* field) {
  return std::string(prefix) + std::to_string(b + 1) + "." + field;
}

struct Layout {
  std::vector<std::string> names;
  std::vector<std::vector<int>> shapes;
};

Layout param_layout(const NetConfig& c) {
  Layout l;
  for (int b = 0; b < kConvBlocks; ++b) {
    const int in = b == 0 ? c.in_channels : c.width;
    l.names.push_back(block_name("conv", b, "weight"));
    l.shapes.push_back({c.width, in, 3, 3});
    l.names.push_back(block_name("conv", b, "bias"));
    l.shapes.push_back({c.width});
    l.names.push_back(block_name("bn", b, "scale"));
    l.shapes.push_back({c.width});
    l.names.push_back(block_name("bn", b, "shift"));
    l.shapes.push_back({c.width});
  }
  l.names.push_back("head.weight");
  l.shapes.push_back({c.learned, 3 * c.width});
  l.names.push_back("head.bias");
  l.shapes.push_back({c.learned});
  return l;
}

std::size_t volume(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<Tensor> default_buffers(const NetConfig& c) {
  std::vector<Tensor> out;
  for (int b = 0; b < kConvBlocks; ++b) {
    out.push_back({block_name("bn", b, "running_mean"), {c.width}, std::vector<float>(c.width, 0.0f)});
    out.push_back({block_name("bn", b, "running_var"), {c.width}, std::vector<float>(c.width, 1.0f)});
  }
  return out;
}

Activation make_activation(int channels, int height, int width) {
  return {channels, height, width,
          std::vector<double>(static_cast<std::size_t>(channels) * height * width, 0.0)};
}

// 3x3 convolution, stride 1, zero padding 1.
Activation conv3x3(const Activation& in, const Tensor& weight, const Tensor& bias) {
  const int out_c = weight.shape[0];
  const int h = in.height, w = in.width;
  Activation out = make_activation(out_c, h, w);
  const std::size_t plane = in.plane();
  for (int o = 0; o < out_c; ++o) {
    double* dst = out.data.data() + o * plane;
    std::fill(dst, dst + plane, static_cast<double>(bias.values[o]));
    for (int i = 0; i < in.channels; ++i) {
      const double* src = in.data.data() + i * plane;
      const float* k = weight.values.data() + (static_cast<std::size_t>(o) * in.channels + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          if (wv == 0.0) continue;
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = y0; y < y1; ++y) {
            double* row = dst + static_cast<std::size_t>(y) * w;
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) row[x] += wv * srow[x];
          }
        }
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients and returns the input gradient.
Activation conv3x3_backward(const Activation& in, const Tensor& weight, const Activation& grad_out,
                            std::vector<double>& grad_w, std::vector<double>& grad_b) {
  const int out_c = weight.shape[0];
  const int h = in.height, w = in.width;
  const std::size_t plane = in.plane();
  Activation grad_in = make_activation(in.channels, h, w);
  for (int o = 0; o < out_c; ++o) {
    const double* g = grad_out.data.data() + o * plane;
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) sum += g[p];
    grad_b[o] += sum;
    for (int i = 0; i < in.channels; ++i) {
      const double* src = in.data.data() + i * plane;
      double* gsrc = grad_in.data.data() + i * plane;
      const std::size_t kofs = (static_cast<std::size_t>(o) * in.channels + i) * 9;
      const float* k = weight.values.data() + kofs;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = g + static_cast<std::size_t>(y) * w;
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            double* gin = gsrc + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) {
              acc += grow[x] * srow[x];
              gin[x] += wv * grow[x];
            }
          }
          grad_w[kofs + ky * 3 + kx] += acc;
        }
      }
    }
  }
  return grad_in;
}

// 2x2 max pooling, stride 2; odd trailing rows/columns form clipped windows.
Activation max_pool(const Activation& in, std::vector<std::int32_t>& argmax) {
  const int oh = (in.height + 1) / 2, ow = (in.width + 1) / 2;
  Activation out = make_activation(in.channels, oh, ow);
  argmax.assign(out.data.size(), 0);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.data.data() + c * in.plane();
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::int32_t best = -1;
        double best_v = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy, sx = 2 * x + dx;
            if (sy >= in.height || sx >= in.width) continue;
            const std::int32_t idx = sy * in.width + sx;
            if (best < 0 || src[idx] > best_v) {
              best = idx;
              best_v = src[idx];
            }
          }
        }
        const std::size_t o = c * out.plane() + static_cast<std::size_t>(y) * ow + x;
        out.data[o] = best_v;
        argmax[o] = best;
      }
    }
  }
  return out;
}

void max_pool_backward(const Activation& grad_out, const std::vector<std::int32_t>& argmax,
                       Activation& grad_in) {
  const std::size_t in_plane = grad_in.plane(), out_plane = grad_out.plane();
  for (int c = 0; c < grad_out.channels; ++c)
    for (std::size_t p = 0; p < out_plane; ++p)
      grad_in.data[c * in_plane + argmax[c * out_plane + p]] += grad_out.data[c * out_plane + p];
}

// Bilinear interpolation weights for one axis, half-pixel centers.
struct Tap {
  int i0, i1;
  double f;
};

std::vector<Tap> bilinear_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double src = std::max(0.0, (d + 0.5) * scale - 0.5);
    int i0 = std::min(static_cast<int>(src), in_size - 1);
    taps[d] = {i0, std::min(i0 + 1, in_size - 1), src - i0};
  }
  return taps;
}

void upsample_into(const Activation& in, int height, int width, double* dst) {
  const auto ty = bilinear_taps(in.height, height);
  const auto tx = bilinear_taps(in.width, width);
  const std::size_t out_plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.data.data() + c * in.plane();
    double* out = dst + c * out_plane;
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      const double* r0 = src + static_cast<std::size_t>(a.i0) * in.width;
      const double* r1 = src + static_cast<std::size_t>(a.i1) * in.width;
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        const double top = r0[b.i0] * (1.0 - b.f) + r0[b.i1] * b.f;
        const double bottom = r1[b.i0] * (1.0 - b.f) + r1[b.i1] * b.f;
        out[static_cast<std::size_t>(y) * width + x] = top * (1.0 - a.f) + bottom * a.f;
      }
    }
  }
}

void upsample_backward(const double* grad, int height, int width, Activation& grad_in) {
  const auto ty = bilinear_taps(grad_in.height, height);
  const auto tx = bilinear_taps(grad_in.width, width);
  const std::size_t out_plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < grad_in.channels; ++c) {
    const double* g = grad + c * out_plane;
    double* gi = grad_in.data.data() + c * grad_in.plane();
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        const double v = g[static_cast<std::size_t>(y) * width + x];
        gi[a.i0 * grad_in.width + b.i0] += v * (1.0 - a.f) * (1.0 - b.f);
        gi[a.i0 * grad_in.width + b.i1] += v * (1.0 - a.f) * b.f;
        gi[a.i1 * grad_in.width + b.i0] += v * a.f * (1.0 - b.f);
        gi[a.i1 * grad_in.width + b.i1] += v * a.f * b.f;
      }
    }
  }
}

BlockRecord run_block(const ConvFeatureNet& net, int b, Activation input, bool training) {
  const auto& params = net.parameters();
  const auto& buffers = net.buffers();
  const NetConfig& cfg = net.config();
  BlockRecord rec;
  Activation z = conv3x3(input, params[conv_w(b)], params[conv_b(b)]);
  rec.input = std::move(input);
  const std::size_t plane = z.plane();
  const int c = z.channels;
  rec.mean.assign(c, 0.0);
  rec.inv_std.assign(c, 0.0);
  rec.batch_var.assign(c, 0.0);
  const Tensor& scale = params[bn_scale(b)];
  const Tensor& shift = params[bn_shift(b)];
  rec.normalized = make_activation(c, z.height, z.width);
  rec.output = make_activation(c, z.height, z.width);
  for (int o = 0; o < c; ++o) {
    const double* zc = z.data.data() + o * plane;
    double mean, var;
    double batch_var = 0.0;
    {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += zc[p];
      const double bm = s / static_cast<double>(plane);
      double ss = 0.0;
      for (std::size_t p = 0; p < plane; ++p) ss += (zc[p] - bm) * (zc[p] - bm);
      batch_var = ss / static_cast<double>(plane);
      if (training) {
        mean = bm;
        var = batch_var;
      } else {
        mean = buffers[2 * b].values[o];
        var = buffers[2 * b + 1].values[o];
      }
    }
    const double inv_std = 1.0 / std::sqrt(var + cfg.bn_epsilon);
    rec.mean[o] = mean;
    rec.inv_std[o] = inv_std;
    rec.batch_var[o] = batch_var;
    double* xh = rec.normalized.data.data() + o * plane;
    double* out = rec.output.data.data() + o * plane;
    const double g = scale.values[o], sh = shift.values[o];
    for (std::size_t p = 0; p < plane; ++p) {
      xh[p] = (zc[p] - mean) * inv_std;
      out[p] = std::max(0.0, g * xh[p] + sh);
    }
  }
  return rec;
}

// Returns the gradient w.r.t. the block input.
Activation block_backward(const ConvFeatureNet& net, int b, const BlockRecord& rec, bool training,
                          const Activation& grad_output, Gradients& grads) {
  const auto& params = net.parameters();
  const Tensor& scale = params[bn_scale(b)];
  const std::size_t plane = rec.output.plane();
  const int c = rec.output.channels;
  const double n = static_cast<double>(plane);
  Activation grad_z = make_activation(c, rec.output.height, rec.output.width);
  for (int o = 0; o < c; ++o) {
    const double* out = rec.output.data.data() + o * plane;
    const double* xh = rec.normalized.data.data() + o * plane;
    const double* go = grad_output.data.data() + o * plane;
    double* gz = grad_z.data.data() + o * plane;
    double sum_g = 0.0, sum_gx = 0.0, g_scale = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double gy = out[p] > 0.0 ? go[p] : 0.0;
      gz[p] = gy;  // reused below as dL/dy
      g_scale += gy * xh[p];
      sum_g += gy;
    }
    grads[bn_scale(b)][o] += g_scale;
    grads[bn_shift(b)][o] += sum_g;
    const double gamma = scale.values[o];
    const double inv_std = rec.inv_std[o];
    if (training) {
      // dxhat = gy*gamma; dz = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
      sum_gx = g_scale * gamma;
      const double sum_dx = sum_g * gamma;
      for (std::size_t p = 0; p < plane; ++p)
        gz[p] = inv_std / n * (n * gz[p] * gamma - sum_dx - xh[p] * sum_gx);
    } else {
      for (std::size_t p = 0; p < plane; ++p) gz[p] *= gamma * inv_std;
    }
  }
  return conv3x3_backward(rec.input, params[conv_w(b)], grad_z, grads[conv_w(b)], grads[conv_b(b)]);
}

}  // namespace

void NetConfig::validate() const {
  if (in_channels < 1) fail(ErrorCode::invalid_argument, "net input channels must be >= 1");
  if (width < 1) fail(ErrorCode::invalid_argument, "net width must be >= 1");
  if (learned < 1) fail(ErrorCode::invalid_argument, "learned channel count must be >= 1");
  if (!(bn_epsilon > 0.0)) fail(ErrorCode::invalid_argument, "batch-norm epsilon must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0))
    fail(ErrorCode::invalid_argument, "batch-norm momentum must lie in [0, 1]");
}

ConvFeatureNet::ConvFeatureNet(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const Layout layout = param_layout(config_);
  for (std::size_t t = 0; t < layout.names.size(); ++t) {
    Tensor tensor{layout.names[t], layout.shapes[t], std::vector<float>(volume(layout.shapes[t]), 0.0f)};
    const std::string& name = tensor.name;
    if (name.ends_with(".weight")) {
      const auto& s = tensor.shape;
      const std::size_t receptive = s.size() == 4 ? static_cast<std::size_t>(s[2]) * s[3] : 1;
      const double fan_in = static_cast<double>(s[1] * receptive);
      const double fan_out = static_cast<double>(s[0] * receptive);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (float& v : tensor.values) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (name.ends_with(".scale")) {
      std::fill(tensor.values.begin(), tensor.values.end(), 1.0f);
    }
    params_.push_back(std::move(tensor));
  }
  buffers_ = default_buffers(config_);
}

ConvFeatureNet::ConvFeatureNet(const NetConfig& config, const std::vector<Tensor>& tensors)
    : config_(config) {
  config_.validate();
  const Layout layout = param_layout(config_);
  for (std::size_t t = 0; t < layout.names.size(); ++t) {
    const Tensor& src = find_tensor(tensors, layout.names[t]);
    if (src.shape != layout.shapes[t])
      fail(ErrorCode::data, "tensor shape mismatch for " + layout.names[t]);
    params_.push_back(src);
  }
  buffers_ = default_buffers(config_);
  for (Tensor& b : buffers_) {
    for (const Tensor& src : tensors) {
      if (src.name != b.name) continue;
      if (src.shape != b.shape) fail(ErrorCode::data, "tensor shape mismatch for " + b.name);
      b.values = src.values;
    }
  }
}

std::vector<Tensor> ConvFeatureNet::state() const {
  std::vector<Tensor> out = params_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

NetOutput net_forward(const ConvFeatureNet& net, const MultiChannelImage& image, bool training) {
  const NetConfig& cfg = net.config();
  if (static_cast<int>(image.plane_count()) != cfg.in_channels)
    fail(ErrorCode::data, "image has " + std::to_string(image.plane_count()) +
                              " channels but the network expects " + std::to_string(cfg.in_channels));
  const int h = image.height(), w = image.width();
  NetOutput result;
  NetTape& tape = result.tape;
  tape.training = training;

  Activation x = make_activation(cfg.in_channels, h, w);
  for (int c = 0; c < cfg.in_channels; ++c) {
    const auto s = image.samples(c);
    std::copy(s.begin(), s.end(), x.data.begin() + c * x.plane());
  }
  for (int b = 0; b < kConvBlocks; ++b) {
    tape.blocks.push_back(run_block(net, b, std::move(x), training));
    const Activation& out = tape.blocks.back().output;
    if (b == 1) {
      tape.pooled1 = max_pool(out, tape.pool1_argmax);
      x = tape.pooled1;
    } else if (b == 3) {
      tape.pooled2 = max_pool(out, tape.pool2_argmax);
      x = tape.pooled2;
    } else {
      x = out;
    }
  }

  const int width = cfg.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  tape.head_input = make_activation(3 * width, h, w);
  const Activation& a2 = tape.blocks[1].output;
  std::copy(a2.data.begin(), a2.data.end(), tape.head_input.data.begin());
  upsample_into(tape.blocks[3].output, h, w, tape.head_input.data.data() + width * plane);
  upsample_into(tape.blocks[4].output, h, w, tape.head_input.data.data() + 2 * width * plane);

  const Tensor& hw = net.parameters()[kHeadWeight];
  const Tensor& hb = net.parameters()[kHeadBias];
  result.learned = make_activation(cfg.learned, h, w);
  for (int l = 0; l < cfg.learned; ++l) {
    double* out = result.learned.data.data() + l * plane;
    std::fill(out, out + plane, static_cast<double>(hb.values[l]));
    for (int c = 0; c < 3 * width; ++c) {
      const double wv = hw.values[static_cast<std::size_t>(l) * 3 * width + c];
      const double* in = tape.head_input.data.data() + c * plane;
      for (std::size_t p = 0; p < plane; ++p) out[p] += wv * in[p];
    }
  }
  return result;
}

Gradients net_backward(const ConvFeatureNet& net, const NetTape& tape, const Activation& grad_learned) {
  if (tape.blocks.size() != kConvBlocks) fail(ErrorCode::state, "net_backward needs a recorded forward pass");
  const NetConfig& cfg = net.config();
  const int width = cfg.width;
  const int h = tape.head_input.height, w = tape.head_input.width;
  const std::size_t plane = tape.head_input.plane();
  Gradients grads = zero_gradients(net.parameters());

  const Tensor& hw = net.parameters()[kHeadWeight];
  Activation grad_head_in = make_activation(3 * width, h, w);
  for (int l = 0; l < cfg.learned; ++l) {
    const double* g = grad_learned.data.data() + l * plane;
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) sum += g[p];
    grads[kHeadBias][l] += sum;
    for (int c = 0; c < 3 * width; ++c) {
      const double* in = tape.head_input.data.data() + c * plane;
      double* gi = grad_head_in.data.data() + c * plane;
      const double wv = hw.values[static_cast<std::size_t>(l) * 3 * width + c];
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        acc += g[p] * in[p];
        gi[p] += wv * g[p];
      }
      grads[kHeadWeight][static_cast<std::size_t>(l) * 3 * width + c] += acc;
    }
  }

  const BlockRecord* blocks = tape.blocks.data();
  Activation g_a2 = make_activation(width, h, w);
  std::copy(grad_head_in.data.begin(), grad_head_in.data.begin() + width * plane, g_a2.data.begin());
  Activation g_a4 = make_activation(width, blocks[3].output.height, blocks[3].output.width);
  upsample_backward(grad_head_in.data.data() + width * plane, h, w, g_a4);
  Activation g_a5 = make_activation(width, blocks[4].output.height, blocks[4].output.width);
  upsample_backward(grad_head_in.data.data() + 2 * width * plane, h, w, g_a5);

  Activation g = block_backward(net, 4, blocks[4], tape.training, g_a5, grads);
  max_pool_backward(g, tape.pool2_argmax, g_a4);
  g = block_backward(net, 3, blocks[3], tape.training, g_a4, grads);
  g = block_backward(net, 2, blocks[2], tape.training, g, grads);
  max_pool_backward(g, tape.pool1_argmax, g_a2);
  g = block_backward(net, 1, blocks[1], tape.training, g_a2, grads);
  block_backward(net, 0, blocks[0], tape.training, g, grads);
  return grads;
}

void update_running_stats(ConvFeatureNet& net, const NetTape& tape) {
  if (!tape.training || tape.blocks.size() != kConvBlocks) return;
  const double mom = net.config().bn_momentum;
  auto& buffers = net.buffers();
  for (int b = 0; b < kConvBlocks; ++b) {
    const BlockRecord& rec = tape.blocks[b];
    const double n = static_cast<double>(rec.output.plane());
    const double correction = n > 1.0 ? n / (n - 1.0) : 1.0;
    for (std::size_t o = 0; o < rec.mean.size(); ++o) {
      float& rm = buffers[2 * b].values[o];
      float& rv = buffers[2 * b + 1].values[o];
      rm = static_cast<float>((1.0 - mom) * rm + mom * rec.mean[o]);
      rv = static_cast<float>((1.0 - mom) * rv + mom * rec.batch_var[o] * correction);
    }
  }
}

std::uint64_t activation_signature(const NetTape& tape) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  for (const BlockRecord& rec : tape.blocks) {
    std::uint64_t word = 0;
    int bits = 0;
    for (double v : rec.output.data) {
      word = (word << 1) | (v > 0.0 ? 1u : 0u);
      if (++bits == 64) {
        mix(word);
        word = 0;
        bits = 0;
      }
    }
    mix(word);
  }
  for (std::int32_t a : tape.pool1_argmax) mix(static_cast<std::uint32_t>(a));
  for (std::int32_t a : tape.pool2_argmax) mix(static_cast<std::uint32_t>(a));
  return h;
}

std::vector<double> assemble_features(const MultiChannelImage& image, const Activation& learned,
                                      double m, double interval) {
  const std::vector<double> raw = features_raw_double(image, m, interval);
  const std::size_t n = image.pixel_count();
  if (learned.plane() != n) fail(ErrorCode::data, "learned feature size does not match the image");
  const std::size_t raw_dim = 2 + image.plane_count();
  const std::size_t dim = raw_dim + learned.channels;
  std::vector<double> out(n * dim);
  for (std::size_t p = 0; p < n; ++p) {
    std::copy(raw.begin() + p * raw_dim, raw.begin() + (p + 1) * raw_dim, out.begin() + p * dim);
    for (int l = 0; l < learned.channels; ++l) out[p * dim + raw_dim + l] = learned.data[l * n + p];
  }
  return out;
}

FeatureMap forward(const ConvFeatureNet& net, const MultiChannelImage& image, bool training,
                   double m, double interval) {
  const NetOutput out = net_forward(net, image, training);
  const std::vector<double> values = assemble_features(image, out.learned, m, interval);
  FeatureMap map;
  map.width = image.width();
  map.height = image.height();
  map.dim = static_cast<int>(2 + image.plane_count()) + out.learned.channels;
  map.data.assign(values.begin(), values.end());
  return map;
}

}  // namespace xseg
