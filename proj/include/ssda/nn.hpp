#pragma once

// Dense layers, auto-encoder and classifier assemblies, parameter freezing and
// the Adam optimizer.

#include "ssda/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssda {

enum class Activation { kLinear, kRelu, kSigmoid, kSoftmax };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view name);

Tensor activate(const Tensor& x, Activation a);

/// Glorot-uniform [fan_in x fan_out] matrix: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng);
Matrix init_weights(Index fan_in, Index fan_out, std::uint64_t seed);

struct DenseLayer {
  Tensor weights;  // [in x out]
  Tensor bias;     // [1 x out]
  Activation activation = Activation::kLinear;
  bool trainable = true;

  /// Glorot weights, zero bias.
  static DenseLayer create(Index in_dim, Index out_dim, Activation act, std::mt19937_64& rng);

  Index in_dim() const { return weights.rows(); }
  Index out_dim() const { return weights.cols(); }

  Tensor forward(const Tensor& x) const;
  void validate() const;
  /// Independent copy: fresh parameter storage, no gradients.
  DenseLayer clone() const;
};

/// Applies layers in order. Throws DimensionError when x's width does not
/// match the first layer.
Tensor run_layers(std::span<const DenseLayer> layers, const Tensor& x);

std::vector<DenseLayer> clone_layers(std::span<const DenseLayer> layers);

struct AutoEncoderSpec {
  Index input_dim = 0;
  std::vector<Index> hidden{256};
  Index bottleneck = 100;
};

/// Encoder [in -> hidden... -> b] (relu hidden, linear bottleneck) and a
/// mirrored decoder [b -> ...hidden -> in] ending in a sigmoid layer.
struct AutoEncoder {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;

  Index input_dim() const { return encoder.front().in_dim(); }
  Index bottleneck() const { return encoder.back().out_dim(); }

  void validate() const;
  AutoEncoder clone() const;
};

AutoEncoder make_autoencoder(const AutoEncoderSpec& spec, std::uint64_t seed);

/// Bottleneck features E(X): [batch x in] -> [batch x b].
Tensor encode(const AutoEncoder& ae, const Tensor& x);
Tensor decode(const AutoEncoder& ae, const Tensor& features);
/// p(X) = D(E(X)), entries in (0, 1).
Tensor reconstruct(const AutoEncoder& ae, const Tensor& x);

struct Classifier {
  std::vector<DenseLayer> layers;

  Index input_dim() const { return layers.front().in_dim(); }
  Index class_count() const { return layers.back().out_dim(); }

  void validate() const;
  Classifier clone() const;
};

/// Dense stack [b -> hidden... -> classes] with relu hidden layers and a softmax head.
Classifier make_classifier(Index bottleneck, Index classes, std::uint64_t seed,
                           const std::vector<Index>& hidden = {});

/// Class probabilities, rows sum to one.
Tensor classify(const Classifier& clf, const Tensor& features);

/// Target encoder cascaded with the shared classifier; the deployable model.
struct TargetModel {
  std::vector<DenseLayer> encoder;
  Classifier classifier;
};

Tensor predict_proba(const TargetModel& model, const Tensor& x);

// ---------------------------------------------------------------------------
// Parameters and optimization

/// One trainable flag per parameter tensor (weights and bias of each layer).
struct FreezeMask {
  std::vector<bool> trainable;
};

std::vector<Tensor> parameters(std::span<const DenseLayer> layers);
FreezeMask freeze_mask(std::span<const DenseLayer> layers);
void set_trainable(std::span<DenseLayer> layers, bool trainable);

std::vector<Tensor> parameters(const AutoEncoder& ae);
FreezeMask freeze_mask(const AutoEncoder& ae);

/// FNV-1a over the raw bytes of every parameter, as 16 hex digits.
std::string parameter_hash(std::span<const DenseLayer> layers);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update of every unfrozen parameter from its
/// gradient, then clears gradients. Frozen parameters are left bitwise intact.
/// Parameters without a gradient are treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const FreezeMask& mask);

}  // namespace ssda
