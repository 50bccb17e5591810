#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sparsetrain/tensor.hpp"

namespace sparsetrain {

// Activation shape of one sample, channel-major.
struct ActShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ActShape&) const = default;
};

// Stride-1 convolution without padding, optional ReLU.
struct ConvLayer {
  ConvWeight weight;
  std::vector<double> bias;
  PruneMask mask;
  std::vector<double> weight_momentum;
  std::vector<double> bias_momentum;
  bool relu = true;
};

// Non-overlapping window x window average pooling.
struct PoolLayer {
  std::size_t window = 2;
};

struct FlattenLayer {};

// y[j] = b[j] + sum_i x[i] * W[i][j]; no activation.
struct FCLayer {
  FCWeight weight;
  std::vector<double> bias;
  PruneMask mask;
  std::vector<double> weight_momentum;
  std::vector<double> bias_momentum;
};

using Layer = std::variant<ConvLayer, PoolLayer, FlattenLayer, FCLayer>;

class ToyModel {
 public:
  ToyModel() = default;
  // Throws ContractError if the layer shape chain is inconsistent or the
  // last layer is not fully connected.
  ToyModel(ActShape input, std::vector<Layer> layers);

  const ActShape& input_shape() const { return input_; }
  std::size_t n_classes() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Shape entering layer i; i == layers().size() gives the output shape.
  const ActShape& shape_before(std::size_t i) const { return shapes_[i]; }

  // Indices of layers holding prunable weights, in network order.
  std::vector<std::size_t> prunable_layers() const;
  // Index of the conv layer closest to the FC head, if any.
  std::optional<std::size_t> last_conv_layer() const;
  std::size_t fc_layer() const;

  std::vector<std::span<const double>> prunable_weights() const;
  double sparsity() const;

  // Re-applies every layer mask to its weights and momentum buffers.
  void apply_masks();

  // Layer names used in checkpoints and reports ("conv3x3_0", "fc_3", ...).
  std::string layer_name(std::size_t i) const;

 private:
  ActShape input_;
  std::vector<Layer> layers_;
  std::vector<ActShape> shapes_;
};

struct ModelSpec {
  std::size_t conv3x3_channels = 20;
  std::size_t conv1x1_channels = 20;
  std::size_t pool = 2;
};

// conv3x3 + ReLU -> conv1x1 + ReLU -> avg pool -> flatten -> FC, He-normal
// init, zero biases, all-ones masks.
ToyModel make_toy_model(const ModelSpec& spec, ActShape input,
                        std::size_t n_classes, std::mt19937_64& rng);

// A batch of samples, sample-major, each laid out [c][h][w].
struct Batch {
  std::size_t count = 0;
  ActShape shape;
  std::vector<double> data;

  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(data).subspan(i * shape.size(),
                                                 shape.size());
  }
};

// Counts multiplies the forward pass performs. Zero weights are skipped, so
// this is the number of multiplies with a nonzero weight operand.
struct MultiplyCounter {
  std::uint64_t multiplies = 0;
};

// Row-major count x n_classes logits.
std::vector<double> forward(const ToyModel& model, const Batch& batch,
                            MultiplyCounter* counter = nullptr);

// Mean softmax cross-entropy.
double cross_entropy(std::span<const double> logits, std::size_t n_classes,
                     std::span<const int> labels);

std::vector<int> predict(std::span<const double> logits, std::size_t n_classes);

struct Gradients {
  double loss = 0.0;
  // One entry per layer; empty for parameter-free layers.
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;
  // d loss / d input, same layout as Batch::data.
  std::vector<double> input;
};

// Forward + backward of the mean cross-entropy. Weight gradients are
// multiplied by the layer masks, so pruned positions get exactly 0.
Gradients backward(const ToyModel& model, const Batch& batch,
                   std::span<const int> labels);

struct SgdParams {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v, then weights
// and weight momentum are re-masked. Biases take the same step without
// decay or masking.
void sgd_step(ToyModel& model, const Gradients& grads, const SgdParams& p);

}  // namespace sparsetrain
