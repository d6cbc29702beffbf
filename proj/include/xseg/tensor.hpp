#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace xseg {

/// Named 32-bit parameter tensor.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

/// One 64-bit gradient buffer per parameter tensor, in parameter order.
using Gradients = std::vector<std::vector<double>>;

Gradients zero_gradients(const std::vector<Tensor>& params);
void accumulate(Gradients& into, const Gradients& from, double scale = 1.0);

struct OptimizerState {
  double learning_rate = 0.0002;
  double momentum = 0.9;
  int batch_size = 64;
  std::vector<std::vector<float>> velocity;

  void validate() const;
};

/// velocity = momentum*velocity + grad; param -= learning_rate*velocity.
void sgd_step(std::vector<Tensor>& params, const Gradients& grads, OptimizerState& state);

// Binary checkpoint: "XSEG", u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims..., little-endian f32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_checkpoint(const std::filesystem::path& path);

/// Appends the optimizer's hyperparameters and velocity buffers as tensors
/// named "optim/..." so they travel in the same file.
void append_optimizer_state(std::vector<Tensor>& tensors, const std::vector<Tensor>& params,
                            const OptimizerState& state);
OptimizerState extract_optimizer_state(const std::vector<Tensor>& tensors,
                                       const std::vector<Tensor>& params);

const Tensor& find_tensor(const std::vector<Tensor>& tensors, const std::string& name);

}  // namespace xseg
