#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "xseg/error.hpp"
#include "xseg/tensor.hpp"

namespace xseg {

Gradients zero_gradients(const std::vector<Tensor>& params) {
  Gradients g;
  g.reserve(params.size());
  for (const Tensor& t : params) g.emplace_back(t.values.size(), 0.0);
  return g;
}

void accumulate(Gradients& into, const Gradients& from, double scale) {
  if (into.size() != from.size()) fail(ErrorCode::invalid_argument, "gradient shape mismatch");
  for (std::size_t t = 0; t < into.size(); ++t) {
    if (into[t].size() != from[t].size()) fail(ErrorCode::invalid_argument, "gradient shape mismatch");
    for (std::size_t i = 0; i < into[t].size(); ++i) into[t][i] += scale * from[t][i];
  }
}

void OptimizerState::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::invalid_argument, "learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    fail(ErrorCode::invalid_argument, "momentum must lie in [0, 1)");
  if (batch_size < 1) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
}

void sgd_step(std::vector<Tensor>& params, const Gradients& grads, OptimizerState& state) {
  state.validate();
  if (grads.size() != params.size()) fail(ErrorCode::invalid_argument, "gradient shape mismatch");
  if (state.velocity.empty()) {
    for (const Tensor& t : params) state.velocity.emplace_back(t.values.size(), 0.0f);
  }
  if (state.velocity.size() != params.size())
    fail(ErrorCode::invalid_argument, "velocity shape mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t].size() != params[t].values.size() || state.velocity[t].size() != params[t].values.size())
      fail(ErrorCode::invalid_argument, "gradient shape mismatch for " + params[t].name);
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].values.size(); ++i) {
      const double v = state.momentum * state.velocity[t][i] + grads[t][i];
      if (!std::isfinite(v)) fail(ErrorCode::numeric, "non-finite gradient in " + params[t].name);
      state.velocity[t][i] = static_cast<float>(v);
      params[t].values[i] = static_cast<float>(params[t].values[i] - state.learning_rate * v);
    }
  }
}

namespace {

constexpr char kMagic[4] = {'X', 'S', 'E', 'G'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorCode::data, "truncated checkpoint");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    std::size_t expected = 1;
    for (int d : t.shape) expected *= static_cast<std::size_t>(d);
    if (expected != t.values.size()) fail(ErrorCode::invalid_argument, "tensor shape mismatch for " + t.name);
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

std::vector<Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCode::data, "not an XSEG checkpoint: " + path.string());
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    fail(ErrorCode::data, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  std::vector<Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    Tensor t;
    const std::uint32_t len = get_u32(in);
    if (len > 4096) fail(ErrorCode::data, "corrupt checkpoint");
    t.name.resize(len);
    if (!in.read(t.name.data(), len)) fail(ErrorCode::data, "truncated checkpoint");
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) fail(ErrorCode::data, "corrupt checkpoint");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = get_u32(in);
      t.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n > (std::size_t{1} << 28)) fail(ErrorCode::data, "corrupt checkpoint");
    t.values.resize(n);
    for (float& v : t.values) v = std::bit_cast<float>(get_u32(in));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void append_optimizer_state(std::vector<Tensor>& tensors, const std::vector<Tensor>& params,
                            const OptimizerState& state) {
  tensors.push_back({"optim/learning_rate", {1}, {static_cast<float>(state.learning_rate)}});
  tensors.push_back({"optim/momentum", {1}, {static_cast<float>(state.momentum)}});
  tensors.push_back({"optim/batch_size", {1}, {static_cast<float>(state.batch_size)}});
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<float> v = t < state.velocity.size() ? state.velocity[t]
                                                     : std::vector<float>(params[t].values.size(), 0.0f);
    tensors.push_back({"optim/velocity/" + params[t].name, params[t].shape, std::move(v)});
  }
}

OptimizerState extract_optimizer_state(const std::vector<Tensor>& tensors,
                                       const std::vector<Tensor>& params) {
  OptimizerState s;
  s.learning_rate = find_tensor(tensors, "optim/learning_rate").values.at(0);
  s.momentum = find_tensor(tensors, "optim/momentum").values.at(0);
  s.batch_size = static_cast<int>(find_tensor(tensors, "optim/batch_size").values.at(0));
  for (const Tensor& p : params) {
    const Tensor& v = find_tensor(tensors, "optim/velocity/" + p.name);
    if (v.values.size() != p.values.size()) fail(ErrorCode::data, "velocity shape mismatch for " + p.name);
    s.velocity.push_back(v.values);
  }
  return s;
}

const Tensor& find_tensor(const std::vector<Tensor>& tensors, const std::string& name) {
  for (const Tensor& t : tensors)
    if (t.name == name) return t;
  fail(ErrorCode::data, "checkpoint is missing tensor " + name);
}

}  // namespace xseg
