#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "harnet/image.hpp"
#include "harnet/tensor.hpp"

namespace harnet {

/// Architecture hyperparameters of the reconstruction network.
struct ModelSpec {
  int low_level_channels = 128;
  int block_count = 4;
  int layers_per_block = 20;
  int block_channels = 64;
  int kernel = 3;

  /// Full-size network: 128-channel stem, 4 blocks of 20 x 64-channel layers.
  static ModelSpec paper() { return {}; }
  /// Small network for CPU-scale runs: 16-channel stem, 2 blocks of 3 x 8-channel layers.
  static ModelSpec desk() { return {16, 2, 3, 8, 3}; }

  void validate() const;

  /// Input channel width of each block: w0 = stem, w_k = block_channels + w_{k-1}.
  std::vector<int> block_input_widths() const;
  /// Width entering the residual layer: block output concatenated with the last block's input.
  int residual_input_width() const;

  bool operator==(const ModelSpec&) const = default;
};

struct TrainingMetadata {
  std::uint32_t epochs = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

struct ConvLayer {
  std::string name;
  nn::Tensor weight;  // (out, in, 3, 3)
  nn::Tensor bias;    // (out)
  bool relu = true;
};

/**
 * Residual reconstruction network.
 *
 *   input -> conv(stem) + ReLU -> block_1 ... block_B -> residual conv -> + input
 *
 * Each block is a plain chain of conv + ReLU layers. A block's output is
 * concatenated (output channels first) with its input to form the next
 * block's input; after the last block the same concatenation feeds the
 * single-channel residual layer, which has a bias and no activation.
 */
class Model {
 public:
  /// Kaiming-normal weights (gain sqrt(2) before ReLU, 1 for the residual layer), zero biases.
  static Model build(const ModelSpec& spec, std::uint64_t seed);
  /// All weights and biases zero.
  static Model zeros(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::vector<ConvLayer>& layers() { return layers_; }

  /// Weight and bias tensors in layer order.
  std::vector<nn::Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// (N, 1, H, W) -> (N, 1, H, W). No clamping.
  nn::Tensor forward(const nn::Tensor& x) const;

  /// Widths observed while wiring, for shape checks: block inputs then the residual input.
  std::vector<int> traced_widths(const nn::Tensor& x) const;

  void zero_residual_layer();

  TrainingMetadata metadata;

 private:
  Model(ModelSpec spec, std::vector<ConvLayer> layers) : spec_(spec), layers_(std::move(layers)) {}

  ModelSpec spec_;
  std::vector<ConvLayer> layers_;
};

/// Double-precision forward pass through the same wiring, with parameters given
/// explicitly in Model::parameters() order. Used for gradient verification.
nn::Tensor64 forward_with(const ModelSpec& spec, const std::vector<nn::Tensor64>& params, const nn::Tensor64& x);

/// Whole-image inference on a Unit-scale angiogram; output clamped to [0, 1].
Angiogram reconstruct(const Model& model, const Angiogram& img);

/// Same as reconstruct but returns the unclamped network output.
std::vector<float> reconstruct_unclamped(const Model& model, const Angiogram& img);

/**
 * Checkpoint layout (little-endian):
 *   "HARN", u32 version,
 *   u32 low_level_channels, u32 block_count, u32 layers_per_block, u32 block_channels, u32 kernel,
 *   u32 epochs, u64 seed, f64 final_loss,
 *   u32 tensor_count, per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload,
 *   u32 CRC-32 of all preceding bytes.
 */
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace harnet
