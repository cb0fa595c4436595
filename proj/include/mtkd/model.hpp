#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtkd/types.hpp"

namespace mtkd {

/// Feed-forward classifier: affine layers with tanh on hidden layers and
/// identity on the output layer. Parameters are plain Eigen matrices;
/// forward/backward are pure functions of (model, input).
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::vector<Index> layer_dims, std::vector<Matrix> weights,
             std::vector<Vector> biases);

  /// All-zero parameters with the given layer sizes.
  static Classifier zeros(const std::vector<Index>& layer_dims);

  const std::vector<Index>& layer_dims() const { return layer_dims_; }
  Index input_dim() const { return layer_dims_.front(); }
  Index class_count() const { return layer_dims_.back(); }
  Index layer_count() const { return static_cast<Index>(weights_.size()); }

  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }
  std::vector<Matrix>& weights() { return weights_; }
  std::vector<Vector>& biases() { return biases_; }

  bool all_finite() const;

 private:
  std::vector<Index> layer_dims_;
  std::vector<Matrix> weights_;  // weights_[l] maps layer l activations to layer l+1
  std::vector<Vector> biases_;
};

/// Per-parameter gradients, shaped exactly like the model's parameters.
struct ParameterGradients {
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;

  static ParameterGradients zeros_like(const Classifier& model);
  void accumulate(const ParameterGradients& other);
  void scale(double factor);
  bool all_finite() const;
};

/// Xavier-uniform initialization: weights i.i.d. uniform in
/// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))], biases zero.
/// Entries are drawn layer by layer in row-major order from Rng(seed),
/// so a (dims, seed) pair pins every parameter bit.
Classifier init_classifier(const std::vector<Index>& layer_dims, std::uint64_t seed);

LogitVector forward(const Classifier& model, const Vector& features);

/// Gradients of a scalar loss with respect to every parameter, given the
/// upstream gradient at the logits.
ParameterGradients backward(const Classifier& model, const Vector& features,
                            const LogitVector& dl_dlogits);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  // Adam moment accumulators; allocated on the first step.
  std::vector<Matrix> m_weights, v_weights;
  std::vector<Vector> m_biases, v_biases;

  static OptimizerState sgd(double learning_rate);
  static OptimizerState adam(double learning_rate);
};

/// In-place parameter update. Throws UpdateRejectedError, naming the layer,
/// on a non-finite gradient or a non-finite post-update parameter.
void optimizer_step(Classifier& model, const ParameterGradients& grads,
                    OptimizerState& state);

/// On-disk model snapshot. Binary layout (all integers little-endian):
///   magic "MTKD" | format_version u32 | layer count u32 | dims u32 each |
///   per layer: weight matrix row-major f64, bias f64 |
///   language tag u32 length + UTF-8 bytes | seed u64 | config digest 32 bytes
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Classifier model;
  std::string language_tag;
  std::uint64_t seed = 0;
  std::array<std::uint8_t, 32> config_digest{};
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtkd
